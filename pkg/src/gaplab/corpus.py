"""Tokenization, vocabulary, synthetic corpus generation and batching.

Corpus splits are stored on disk as plain UTF-8 text, one sentence per line
(train.txt / valid.txt / test.txt), with the vocabulary as one token per
line ordered by id (vocab.txt). In memory a split is a list of sentences
(token-id lists); the flat training stream is obtained by joining sentences
with the end-of-sentence token.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"

_TOKEN_RE = re.compile(r"\w+(?:'\w+)*|[^\w\s]")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Split text into word tokens, peeling punctuation off as separate tokens.

    Case is preserved. "Mary bought the cheese." -> ["Mary", "bought",
    "the", "cheese", "."].
    """
    return _TOKEN_RE.findall(text)


def detokenize(tokens: Sequence[str]) -> str:
    """Inverse of :func:`tokenize` for generated material: space-joined tokens.

    tokenize(detokenize(t)) == list(t) holds for any token list produced by
    tokenize itself.
    """
    return " ".join(tokens)


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass
class Vocab:
    """Bijective token<->id map with <unk> at id 0 and <eos> at id 1."""

    itos: list[str]
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("vocabulary contains duplicate tokens")
        if self.itos[:2] != [UNK_TOKEN, EOS_TOKEN]:
            raise CorpusError("vocabulary must start with <unk>, <eos>")

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Sequence[str], strict: bool = False) -> list[int]:
        if strict:
            missing = [t for t in tokens if t not in self.stoi]
            if missing:
                raise CorpusError(f"out-of-vocabulary tokens: {sorted(set(missing))}")
        unk = self.unk_id
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path: Path | str) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def build_vocab(corpus: Sequence[str] | Iterator[str], max_size: int) -> Vocab:
    """Keep the max_size-2 most frequent tokens plus <unk> and <eos>.

    Frequency ties break lexicographically (earlier string wins).
    """
    if max_size < 2:
        raise CorpusError("max_size must be at least 2 (room for <unk>/<eos>)")
    counts: dict[str, int] = {}
    for tok in corpus:
        counts[tok] = counts.get(tok, 0) + 1
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts.pop(UNK_TOKEN, None)
    counts.pop(EOS_TOKEN, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 2]]
    return Vocab([UNK_TOKEN, EOS_TOKEN] + kept)


# ---------------------------------------------------------------------------
# Corpus splits


@dataclass
class CorpusSplit:
    """Train/valid/test sentences as token-id lists over a shared vocabulary.

    Sentence boundaries become <eos> tokens when a split is flattened into a
    stream; the <eos> ids are not stored inside the sentences themselves.
    """

    vocab: Vocab
    train: list[list[int]]
    valid: list[list[int]]
    test: list[list[int]]

    def stream(self, split: str) -> np.ndarray:
        """Flatten one split into a 1-D id array with <eos> after each sentence."""
        sentences = getattr(self, split)
        eos = self.vocab.eos_id
        out = np.empty(sum(len(s) + 1 for s in sentences), dtype=np.int64)
        pos = 0
        for sent in sentences:
            out[pos : pos + len(sent)] = sent
            out[pos + len(sent)] = eos
            pos += len(sent) + 1
        return out

    def num_tokens(self, split: str) -> int:
        return int(sum(len(s) + 1 for s in getattr(self, split)))

    def save(self, out_dir: Path | str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("train", "valid", "test"):
            lines = [detokenize(self.vocab.decode(s)) for s in getattr(self, name)]
            (out / f"{name}.txt").write_text(
                "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
            )
        self.vocab.save(out / "vocab.txt")

    @classmethod
    def load(cls, corpus_dir: Path | str, train_file: str = "train.txt") -> "CorpusSplit":
        d = Path(corpus_dir)
        vocab = Vocab.load(d / "vocab.txt")

        def read(name: str) -> list[list[int]]:
            text = (d / name).read_text(encoding="utf-8")
            return [vocab.encode(tokenize(ln)) for ln in text.splitlines() if ln.strip()]

        return cls(vocab, read(train_file), read("valid.txt"), read("test.txt"))


def split_from_sentences(
    sentences: Sequence[Sequence[str]],
    vocab: Vocab | None = None,
    max_vocab: int = 10000,
    fractions: tuple[float, float] = (0.90, 0.05),
) -> CorpusSplit:
    """Partition tokenized sentences into train/valid/test by token share."""
    if not sentences:
        raise CorpusError("no sentences to split")
    if vocab is None:
        vocab = build_vocab((t for s in sentences for t in s), max_vocab)
    total = sum(len(s) + 1 for s in sentences)
    train_cut = fractions[0] * total
    valid_cut = (fractions[0] + fractions[1]) * total
    train: list[list[int]] = []
    valid: list[list[int]] = []
    test: list[list[int]] = []
    seen = 0
    for sent in sentences:
        ids = vocab.encode(sent)
        if seen < train_cut:
            train.append(ids)
        elif seen < valid_cut:
            valid.append(ids)
        else:
            test.append(ids)
        seen += len(sent) + 1
    if not (train and valid and test):
        raise CorpusError("corpus too small to produce non-empty train/valid/test splits")
    return CorpusSplit(vocab, train, valid, test)


# ---------------------------------------------------------------------------
# Synthetic corpus grammar
#
# The grammar config (JSON) names word pools and a set of sentence recipes.
# Declaratives are always on; each filler-gap construction has an inclusion
# flag and a sampling weight. Enabled constructions emit only grammatical
# forms: half with a filler and its gap, half with neither.

CONSTRUCTIONS = (
    "clefting",
    "wh_movement",
    "topicalization_intro",
    "topicalization_no_intro",
    "tough_movement",
)


def load_grammar_config(path: Path | str) -> dict:
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    validate_grammar_config(cfg)
    return cfg


def validate_grammar_config(cfg: dict) -> None:
    pools = cfg.get("pools")
    if not isinstance(pools, dict) or not pools:
        raise CorpusError("grammar config needs a non-empty 'pools' mapping")
    for name, words in pools.items():
        if not isinstance(words, list) or not words:
            raise CorpusError(f"grammar pool {name!r} must be a non-empty list")
    cons = cfg.get("constructions", {})
    for name, entry in cons.items():
        if name not in CONSTRUCTIONS:
            raise CorpusError(
                f"unknown construction {name!r}; expected one of {sorted(CONSTRUCTIONS)}"
            )
        if not isinstance(entry, dict) or "enabled" not in entry:
            raise CorpusError(f"construction entry {name!r} needs an 'enabled' flag")
        if entry.get("weight", 0.1) < 0:
            raise CorpusError(f"construction {name!r} has a negative weight")


def _pick(rng: np.random.Generator, pool: list[str]) -> list[str]:
    return tokenize(pool[rng.integers(len(pool))])


_DECLARATIVE_KINDS = (
    ("svo", 0.34),
    ("copula", 0.14),
    ("that_complement", 0.18),
    ("infinitival", 0.10),
    ("relative_object", 0.12),
    ("plural_object", 0.06),
    ("plural_copula", 0.06),
)
_DECL_WEIGHTS = np.array([w for _, w in _DECLARATIVE_KINDS])
_DECL_WEIGHTS = _DECL_WEIGHTS / _DECL_WEIGHTS.sum()


def _declarative(rng: np.random.Generator, pools: dict) -> list[str]:
    kind = _DECLARATIVE_KINDS[rng.choice(len(_DECLARATIVE_KINDS), p=_DECL_WEIGHTS)][0]
    det_noun = lambda: _pick(rng, pools["determiners"]) + _pick(rng, pools["nouns"])
    if kind == "svo":
        toks = _pick(rng, pools["names"]) + _pick(rng, pools["verbs"]) + det_noun()
        if rng.random() < 0.6:
            toks += _pick(rng, pools["adverbials"])
    elif kind == "copula":
        if rng.random() < 0.4:
            toks = ["It", "is"] + _pick(rng, pools["adjectives"])
        else:
            toks = det_noun() + ["is"] + _pick(rng, pools["adjectives"])
    elif kind == "that_complement":
        toks = _pick(rng, pools["names"]) + _pick(rng, pools["attitude_verbs"]) + ["that"]
        toks += _pick(rng, pools["names"]) + _pick(rng, pools["verbs"]) + det_noun()
        if rng.random() < 0.5:
            toks += _pick(rng, pools["adverbials"])
    elif kind == "infinitival":
        toks = _pick(rng, pools["names"]) + _pick(rng, pools["control_verbs"]) + ["to"]
        toks += _pick(rng, pools["verbs_base"]) + det_noun()
    elif kind == "relative_object":
        # Object relative clause with its object in place: islands as the
        # training data actually attests them.
        toks = _pick(rng, pools["names"]) + _pick(rng, pools["verbs"]) + det_noun()
        toks += ["that"] + _pick(rng, pools["verbs"]) + det_noun()
    elif kind == "plural_object":
        toks = _pick(rng, pools["names"]) + _pick(rng, pools["verbs"])
        toks += _pick(rng, pools["filler_determiners"]) + _pick(rng, pools["filler_nouns"])
        if rng.random() < 0.5:
            toks += _pick(rng, pools["adverbials"])
    else:  # plural_copula
        toks = _pick(rng, pools["filler_determiners"]) + _pick(rng, pools["filler_nouns"])
        toks += ["are"] + _pick(rng, pools["adjectives"])
    return toks + ["."]


def _construction_sentence(
    rng: np.random.Generator, pools: dict, construction: str, filler_on: bool, gap: bool
) -> list[str]:
    subj = _pick(rng, pools["names"])
    verb = _pick(rng, pools["verbs"])
    obj = [] if gap else _pick(rng, pools["determiners"]) + _pick(rng, pools["nouns"])
    adv = _pick(rng, pools["adverbials"])
    filler = _pick(rng, pools["filler_determiners"]) + _pick(rng, pools["filler_nouns"])
    if construction == "clefting":
        head = filler if filler_on else _pick(rng, pools["adjectives"])
        return ["It", "is"] + head + ["that"] + subj + verb + obj + adv + ["."]
    if construction == "wh_movement":
        embed = _pick(rng, pools["names"]) + _pick(rng, pools["attitude_verbs"])
        comp = ["what"] if filler_on else ["that"]
        return embed + comp + subj + verb + obj + adv + ["."]
    if construction == "topicalization_intro":
        head = filler if filler_on else _pick(rng, pools["intros"])
        return head + [","] + subj + verb + obj + adv + ["."]
    if construction == "topicalization_no_intro":
        if filler_on:
            return filler + [","] + subj + verb + obj + adv + ["."]
        return subj + verb + obj + adv + ["."]
    if construction == "tough_movement":
        tough = _pick(rng, pools["tough_adjectives"])
        base = _pick(rng, pools["verbs_base"])
        if filler_on:
            return filler + ["are"] + tough + ["to"] + base + obj + adv + ["."]
        return ["It", "is"] + tough + ["to"] + base + obj + adv + ["."]
    raise CorpusError(f"unknown construction {construction!r}")


def synth_corpus(
    grammar_config: dict | Path | str,
    n_tokens: int,
    seed: int,
    max_vocab: int = 10000,
) -> CorpusSplit:
    """Sample ~n_tokens of synthetic text and split it 90/5/5.

    Deterministic under (config, n_tokens, seed). Construction inclusion
    flags are honored exactly: a disabled construction contributes no
    sentences.
    """
    if isinstance(grammar_config, (str, Path)):
        cfg = load_grammar_config(grammar_config)
    else:
        validate_grammar_config(grammar_config)
        cfg = grammar_config
    if n_tokens <= 0:
        raise CorpusError("n_tokens must be positive")
    pools = cfg["pools"]
    entries: list[tuple[str, float, bool]] = [
        ("declarative", float(cfg.get("declarative_weight", 1.0)), True)
    ]
    for name in CONSTRUCTIONS:
        entry = cfg.get("constructions", {}).get(name)
        if entry and entry["enabled"]:
            entries.append(
                (name, float(entry.get("weight", 0.1)), bool(entry.get("dependency", True)))
            )
    weights = np.array([w for _, w, _ in entries], dtype=float)
    if weights.sum() <= 0:
        raise CorpusError("grammar weights sum to zero")
    weights /= weights.sum()

    rng = np.random.default_rng(seed)
    sentences: list[list[str]] = []
    produced = 0
    while produced < n_tokens:
        choice, _, dependency = entries[rng.choice(len(entries), p=weights)]
        if choice == "declarative":
            sent = _declarative(rng, pools)
        else:
            # dependency=True emits only the grammatical filler<->gap
            # pairings; dependency=False breaks the contingency, drawing
            # filler and gap independently (the ablation control).
            gap = bool(rng.random() < 0.5)
            filler_on = gap if dependency else bool(rng.random() < 0.5)
            sent = _construction_sentence(rng, pools, choice, filler_on, gap)
        sentences.append(sent)
        produced += len(sent) + 1
    return split_from_sentences(sentences, max_vocab=max_vocab)


# ---------------------------------------------------------------------------
# Augmentation


def augment_corpus(
    base: CorpusSplit, sentences: Sequence[Sequence[str]], seed: int
) -> CorpusSplit:
    """Return a split whose train part is base-train plus the additions.

    Every base sentence and every addition appears exactly once, in a
    seed-determined shuffled order. Valid/test splits and the vocabulary are
    untouched.
    """
    extra = [base.vocab.encode(s) for s in sentences]
    combined = list(base.train) + extra
    order = np.random.default_rng(seed).permutation(len(combined))
    train = [combined[i] for i in order]
    return CorpusSplit(base.vocab, train, base.valid, base.test)


# ---------------------------------------------------------------------------
# Batching


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    bptt_len: int

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.bptt_len < 1:
            raise CorpusError("batch_size and bptt_len must both be >= 1")


def batchify(stream: np.ndarray, plan: BatchPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous-stream batching with next-token targets.

    The stream is folded into batch_size parallel rows; the trailing
    remainder is dropped. Each window yields (input, target) arrays of shape
    (batch_size, <=bptt_len) with target[t] = input[t+1] positionally.
    """
    stream = np.asarray(stream, dtype=np.int64)
    if stream.ndim != 1:
        raise CorpusError("stream must be one-dimensional")
    if len(stream) < plan.batch_size * 2:
        raise CorpusError(
            f"stream of {len(stream)} tokens is too short for batch_size={plan.batch_size}"
        )
    cols = len(stream) // plan.batch_size
    data = stream[: cols * plan.batch_size].reshape(plan.batch_size, cols)
    batches = []
    for start in range(0, cols - 1, plan.bptt_len):
        seq = min(plan.bptt_len, cols - 1 - start)
        batches.append(
            (data[:, start : start + seq], data[:, start + 1 : start + 1 + seq])
        )
    return batches
