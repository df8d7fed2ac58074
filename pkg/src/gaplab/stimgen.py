"""Minimal-pair paradigm generation for filler-gap constructions.

A construction template is a JSON file describing, per condition
(filler x gap x island), a list of segments: either literal text or a
"$slot" reference resolved against a lexicon at binding time. The
critical region is a half-open *segment* index range; token-level spans
are derived after binding, so multi-word candidates stay aligned.

Lexicon files map slot names to candidate strings. Binding a template to
`count` distinct candidate combinations yields ParadigmItems, each expanded
into one sentence per condition.

Condition grammaticality follows the design's single-grammatical-cell rule:
a sentence is grammatical iff it has filler+gap outside an island, or
neither filler nor gap.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Vocab, tokenize

CONSTRUCTIONS = (
    "clefting",
    "wh_movement",
    "topicalization_intro",
    "topicalization_no_intro",
    "tough_movement",
)

Condition = tuple[bool, bool, bool]  # (filler, gap, island)

ALL_CONDITIONS: tuple[Condition, ...] = tuple(
    (f, g, i) for f in (True, False) for g in (True, False) for i in (True, False)
)
SIMPLE_CONDITIONS: tuple[Condition, ...] = tuple(c for c in ALL_CONDITIONS if not c[2])


class TemplateError(ValueError):
    """Malformed or invariant-violating template data."""


class LexiconError(ValueError):
    """Binding or lexicon problems (insufficient candidates, overlap, ...)."""


def expected_grammaticality(condition: Condition) -> bool:
    filler, gap, island = condition
    return (filler and gap and not island) or (not filler and not gap)


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class LexiconSlot:
    name: str
    role: str
    candidates: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise LexiconError(f"slot {self.name!r} has no candidates")
        for cand in self.candidates:
            if not cand or cand != cand.strip():
                raise LexiconError(
                    f"slot {self.name!r} candidate {cand!r} is empty or has stray whitespace"
                )


@dataclass(frozen=True)
class Variant:
    condition: Condition
    segments: tuple[str, ...]  # "$name" entries are slot references
    critical_region: tuple[int, int]  # half-open segment index range
    grammatical: bool

    def slot_names(self) -> list[str]:
        return [s[1:] for s in self.segments if s.startswith("$")]


@dataclass(frozen=True)
class ConstructionTemplate:
    construction: str
    variants: Mapping[Condition, Variant]

    def slot_names(self) -> list[str]:
        seen: dict[str, None] = {}
        for variant in self.variants.values():
            for name in variant.slot_names():
                seen.setdefault(name)
        return list(seen)

    @property
    def island_bearing(self) -> bool:
        return any(c[2] for c in self.variants)

    def conditions(self) -> tuple[Condition, ...]:
        return ALL_CONDITIONS if self.island_bearing else SIMPLE_CONDITIONS


@dataclass(frozen=True)
class ConditionSentence:
    condition: Condition
    tokens: tuple[str, ...]
    critical_region: tuple[int, int]  # half-open token index range
    grammatical: bool

    def __post_init__(self) -> None:
        start, end = self.critical_region
        if not (0 <= start < end <= len(self.tokens)):
            raise TemplateError(
                f"critical region {self.critical_region} out of bounds for "
                f"{len(self.tokens)} tokens"
            )

    @property
    def region_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.critical_region[0] : self.critical_region[1]]


@dataclass
class ParadigmItem:
    item_id: int
    construction: str
    binding: dict[str, str]
    sentences: list[ConditionSentence] = field(default_factory=list)

    def sentence(self, condition: Condition) -> ConditionSentence:
        for sent in self.sentences:
            if sent.condition == condition:
                return sent
        raise KeyError(f"item {self.item_id} has no condition {condition}")


# ---------------------------------------------------------------------------
# Template loading


def _parse_variant(raw: dict, where: str) -> Variant:
    for key in ("filler", "gap", "island", "segments", "critical_region", "grammatical"):
        if key not in raw:
            raise TemplateError(f"{where}: missing field {key!r}")
    condition = (bool(raw["filler"]), bool(raw["gap"]), bool(raw["island"]))
    segments = tuple(raw["segments"])
    if not segments or any(not isinstance(s, str) or not s for s in segments):
        raise TemplateError(f"{where}: segments must be non-empty strings")
    region = tuple(raw["critical_region"])
    if len(region) != 2 or not (0 <= region[0] < region[1] <= len(segments)):
        raise TemplateError(
            f"{where}: critical_region {raw['critical_region']} is not a valid "
            f"half-open segment range for {len(segments)} segments"
        )
    return Variant(condition, segments, (int(region[0]), int(region[1])), bool(raw["grammatical"]))


def _probe_binding(template_slots: Sequence[str]) -> dict[str, str]:
    # Single-token placeholders; structural checks must not depend on lexicon.
    return {name: f"SLOT{idx}X" for idx, name in enumerate(template_slots)}


def _diff_span(a: Sequence[str], b: Sequence[str]) -> tuple[int, int, int]:
    """Longest common prefix/suffix alignment: returns (prefix, a_end, b_end).

    a[:prefix] == b[:prefix] and a[a_end:] == b[b_end:] with the middles
    disjoint; the middles are the single differing spans.
    """
    prefix = 0
    while prefix < min(len(a), len(b)) and a[prefix] == b[prefix]:
        prefix += 1
    suffix = 0
    while (
        suffix < min(len(a), len(b)) - prefix
        and a[len(a) - 1 - suffix] == b[len(b) - 1 - suffix]
    ):
        suffix += 1
    return prefix, len(a) - suffix, len(b) - suffix


def check_minimal_pair(
    plus: ConditionSentence, minus: ConditionSentence, context: str = ""
) -> None:
    """Assert +/-filler sentences differ in one span outside the region."""
    prefix, a_end, b_end = _diff_span(plus.tokens, minus.tokens)
    if prefix > min(a_end, b_end):
        # Differing material is not a single contiguous span.
        raise TemplateError(f"{context}: +/-filler pair differs in more than one span")
    if plus.region_tokens != minus.region_tokens:
        raise TemplateError(
            f"{context}: critical-region tokens differ between +/-filler variants "
            f"({plus.region_tokens} vs {minus.region_tokens})"
        )
    for sent, end in ((plus, a_end), (minus, b_end)):
        start, stop = sent.critical_region
        if not (stop <= prefix or start >= end):
            raise TemplateError(
                f"{context}: critical region overlaps the filler/intro span"
            )


def _validate_template(template: ConstructionTemplate) -> None:
    conditions = set(template.variants)
    if template.island_bearing:
        if conditions != set(ALL_CONDITIONS):
            missing = sorted(set(ALL_CONDITIONS) - conditions)
            raise TemplateError(
                f"{template.construction}: island-bearing template must define all 8 "
                f"conditions; missing {missing}"
            )
    elif conditions != set(SIMPLE_CONDITIONS):
        missing = sorted(set(SIMPLE_CONDITIONS) - conditions)
        raise TemplateError(
            f"{template.construction}: simple template must define the 4 non-island "
            f"conditions; missing {missing}"
        )
    for condition, variant in template.variants.items():
        if variant.grammatical != expected_grammaticality(condition):
            raise TemplateError(
                f"{template.construction} {condition}: grammaticality flag "
                f"{variant.grammatical} contradicts the single-grammatical-cell rule"
            )
    probe = _probe_binding(template.slot_names())
    item = ParadigmItem(-1, template.construction, probe)
    sentences = {s.condition: s for s in generate_paradigm(item, template)}
    for gap in (True, False):
        for island in (True, False):
            pair = ((True, gap, island), (False, gap, island))
            if pair[0] in sentences and pair[1] in sentences:
                check_minimal_pair(
                    sentences[pair[0]],
                    sentences[pair[1]],
                    context=f"{template.construction} gap={gap} island={island}",
                )


def load_templates(path: Path | str) -> list[ConstructionTemplate]:
    """Load and validate construction templates from a JSON file.

    The file holds either one template object or a list of them:
    {"construction": ..., "variants": [{"filler": bool, "gap": bool,
    "island": bool, "segments": [...], "critical_region": [start, end),
    "grammatical": bool}, ...]}
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TemplateError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    entries = raw if isinstance(raw, list) else [raw]
    templates = []
    for entry in entries:
        construction = entry.get("construction")
        if construction not in CONSTRUCTIONS:
            raise TemplateError(
                f"{path}: unknown construction {construction!r}; "
                f"expected one of {sorted(CONSTRUCTIONS)}"
            )
        variants: dict[Condition, Variant] = {}
        for idx, raw_variant in enumerate(entry.get("variants", [])):
            variant = _parse_variant(raw_variant, f"{path}: {construction} variant {idx}")
            if variant.condition in variants:
                raise TemplateError(
                    f"{path}: {construction} defines condition {variant.condition} twice"
                )
            variants[variant.condition] = variant
        template = ConstructionTemplate(construction, variants)
        _validate_template(template)
        templates.append(template)
    return templates


# ---------------------------------------------------------------------------
# Lexicons


# Closed-class template furniture: shared between any two lexicons by
# necessity, so excluded from the content-word disjointness check.
FUNCTION_WORDS = frozenset(
    "the a an this that these those it is are to in of and or , .".split()
)


def load_lexicon(path: Path | str, roles: Mapping[str, str] | None = None) -> list[LexiconSlot]:
    """Load a slot -> candidates JSON map as LexiconSlot objects."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise LexiconError(f"{path}: lexicon must be a JSON object of slot -> candidates")
    slots = []
    for name, candidates in raw.items():
        role = (roles or {}).get(name, name)
        slots.append(LexiconSlot(name, role, tuple(candidates)))
    return slots


def lexicon_words(slots: Sequence[LexiconSlot]) -> set[str]:
    return {tok for slot in slots for cand in slot.candidates for tok in tokenize(cand)}


# ---------------------------------------------------------------------------
# Binding and paradigm expansion


def bind_lexicon(
    template: ConstructionTemplate,
    slots: Sequence[LexiconSlot],
    count: int,
    seed: int,
) -> list[ParadigmItem]:
    """Draw `count` distinct slot bindings, deterministically under seed."""
    if count < 1:
        raise LexiconError("count must be >= 1")
    by_name = {slot.name: slot for slot in slots}
    needed = template.slot_names()
    missing = [name for name in needed if name not in by_name]
    if missing:
        raise LexiconError(f"lexicon is missing slots required by the template: {missing}")
    pools = [by_name[name].candidates for name in needed]
    capacity = 1
    for pool in pools:
        capacity *= len(pool)
    if capacity < count:
        raise LexiconError(
            f"lexicon supports at most {capacity} distinct bindings; {count} requested"
        )
    rng = np.random.default_rng(seed)
    chosen: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    # Rejection sampling keeps the draw order stable as `count` grows.
    while len(chosen) < count:
        combo = tuple(int(rng.integers(len(pool))) for pool in pools)
        if combo not in seen:
            seen.add(combo)
            chosen.append(combo)
    items = []
    for item_id, combo in enumerate(chosen):
        binding = {name: pools[k][combo[k]] for k, name in enumerate(needed)}
        item = ParadigmItem(item_id, template.construction, binding)
        item.sentences = generate_paradigm(item, template)
        items.append(item)
    return items


def _expand_variant(variant: Variant, binding: Mapping[str, str]) -> ConditionSentence:
    tokens: list[str] = []
    region_start = region_end = None
    for idx, segment in enumerate(variant.segments):
        if idx == variant.critical_region[0]:
            region_start = len(tokens)
        if segment.startswith("$"):
            name = segment[1:]
            if name not in binding:
                raise LexiconError(f"binding is missing slot {name!r}")
            tokens.extend(tokenize(binding[name]))
        else:
            tokens.extend(tokenize(segment))
        if idx == variant.critical_region[1] - 1:
            region_end = len(tokens)
    assert region_start is not None and region_end is not None
    return ConditionSentence(
        variant.condition, tuple(tokens), (region_start, region_end), variant.grammatical
    )


def generate_paradigm(
    item: ParadigmItem, template: ConstructionTemplate
) -> list[ConditionSentence]:
    """Expand one bound item into its full set of condition sentences."""
    if item.construction != template.construction:
        raise TemplateError(
            f"item construction {item.construction!r} does not match template "
            f"{template.construction!r}"
        )
    return [_expand_variant(template.variants[c], item.binding) for c in template.conditions()]


# ---------------------------------------------------------------------------
# Grammatical training sentences (corpus augmentation material)


def generate_training_sentences(
    construction: str,
    n: int,
    slots: Sequence[LexiconSlot],
    seed: int,
    test_slots: Sequence[LexiconSlot] | None = None,
    template: ConstructionTemplate | None = None,
) -> list[list[str]]:
    """Produce n grammatical simple sentences: n/2 filler+gap, n/2 bare.

    The provided slot candidates must be lexically disjoint from the test
    lexicon (the shipped one by default); overlap is an error, not a warning.
    """
    if n % 2 != 0:
        raise LexiconError("n must be even: half the sentences carry a gap")
    if n == 0:
        return []
    if template is None:
        template = default_template(construction)
    if test_slots is None:
        test_slots = default_test_lexicon(construction)
    shared = sorted(
        w
        for w in lexicon_words(slots) & lexicon_words(test_slots)
        if w.lower() not in FUNCTION_WORDS
    )
    if shared:
        raise LexiconError(
            f"augmentation lexicon overlaps the test lexicon: {shared}"
        )
    by_name = {slot.name: slot for slot in slots}
    rng = np.random.default_rng(seed)
    sentences: list[list[str]] = []
    for condition in ((True, True, False), (False, False, False)):
        variant = template.variants[condition]
        names = variant.slot_names()
        missing = [name for name in names if name not in by_name]
        if missing:
            raise LexiconError(f"augmentation lexicon is missing slots: {missing}")
        for _ in range(n // 2):
            binding = {
                name: by_name[name].candidates[rng.integers(len(by_name[name].candidates))]
                for name in names
            }
            sentences.append(list(_expand_variant(variant, binding).tokens))
    return sentences


# ---------------------------------------------------------------------------
# Vocabulary validation


@dataclass
class LexiconReport:
    """Out-of-vocabulary words mapped to the item ids that use them."""

    missing: dict[str, list[int]]

    @property
    def ok(self) -> bool:
        return not self.missing


def validate_lexicon(items: Sequence[ParadigmItem], vocab: Vocab) -> LexiconReport:
    missing: dict[str, list[int]] = {}
    for item in items:
        words = {tok for sent in item.sentences for tok in sent.tokens}
        for word in words:
            if word not in vocab:
                missing.setdefault(word, []).append(item.item_id)
    return LexiconReport({w: sorted(ids) for w, ids in sorted(missing.items())})


# ---------------------------------------------------------------------------
# Item serialization (line-delimited JSON)


def save_items(items: Sequence[ParadigmItem], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            record = {
                "item_id": item.item_id,
                "construction": item.construction,
                "binding": item.binding,
                "sentences": [
                    {
                        "filler": s.condition[0],
                        "gap": s.condition[1],
                        "island": s.condition[2],
                        "tokens": list(s.tokens),
                        "critical_region": list(s.critical_region),
                        "grammatical": s.grammatical,
                    }
                    for s in item.sentences
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_items(path: Path | str) -> list[ParadigmItem]:
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        sentences = [
            ConditionSentence(
                (s["filler"], s["gap"], s["island"]),
                tuple(s["tokens"]),
                tuple(s["critical_region"]),
                s["grammatical"],
            )
            for s in record["sentences"]
        ]
        items.append(
            ParadigmItem(record["item_id"], record["construction"], record["binding"], sentences)
        )
    return items


# ---------------------------------------------------------------------------
# Shipped data


DATA_DIR = Path(__file__).parent / "data"

DEFAULT_ITEM_COUNTS = {
    "clefting": 486,
    "topicalization_intro": 486,
    "topicalization_no_intro": 161,
    "tough_movement": 243,
    "wh_movement": 24,
}


def default_template(construction: str) -> ConstructionTemplate:
    if construction not in CONSTRUCTIONS:
        raise TemplateError(f"unknown construction {construction!r}")
    templates = load_templates(DATA_DIR / "templates" / f"{construction}.json")
    return templates[0]


def default_test_lexicon(construction: str) -> list[LexiconSlot]:
    return load_lexicon(DATA_DIR / "lexicons" / "test_lexicon.json")


def default_augmentation_lexicon(construction: str) -> list[LexiconSlot]:
    return load_lexicon(DATA_DIR / "lexicons" / "augmentation_lexicon.json")


def build_items(construction: str, count: int, seed: int) -> list[ParadigmItem]:
    """Convenience: bind the shipped template/lexicon for a construction."""
    template = default_template(construction)
    slots = default_test_lexicon(construction)
    return bind_lexicon(template, slots, count, seed)
