"""Perplexity and per-token surprisal.

Scoring always runs eval-mode (no dropout) from a fresh zero state primed
with <eos>, walking the sequence left to right in chunks with hidden-state
carry, so chunked and whole-sequence scoring agree exactly. Losses are in
nats internally; reported surprisal is bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..corpus import Vocab
from .model import LmParameters, LmState, forward_window

LN2 = math.log(2.0)


class ScoreError(ValueError):
    pass


class TokenScorer(Protocol):
    """Anything that can assign per-token log-probabilities to a sequence."""

    def token_logprobs(self, ids: Sequence[int]) -> np.ndarray:  # nats, <= 0
        ...


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def stream_logprobs(
    params: LmParameters,
    ids: np.ndarray | Sequence[int],
    prime_id: int = 1,
    chunk: int = 512,
) -> np.ndarray:
    """Log-probability (nats, float64) of each id given its left context.

    The context for position 0 is the prime token (<eos> by default), so
    every position of the stream is scored.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ScoreError("expected a non-empty 1-D id sequence")
    inputs = np.concatenate([[prime_id], ids[:-1]])
    out = np.empty(len(ids), dtype=np.float64)
    state = LmState.zeros(params.config, 1, dtype=params.embedding.dtype)
    for start in range(0, len(ids), chunk):
        stop = min(start + chunk, len(ids))
        window = inputs[start:stop][:, None]  # (T, 1)
        logits, state, _ = forward_window(params, window, state, train_mode=False)
        logp = _log_softmax64(logits[:, 0, :])
        out[start:stop] = logp[np.arange(stop - start), ids[start:stop]]
    return out


def stream_nll(params: LmParameters, ids: np.ndarray) -> float:
    """Total negative log-likelihood of a stream in nats."""
    return float(-stream_logprobs(params, ids).sum())


@dataclass
class SurprisalProfile:
    """Per-token surprisal (bits) for one sentence."""

    tokens: tuple[str, ...]
    surprisal_bits: np.ndarray
    item_id: int | None = None
    condition: tuple[bool, bool, bool] | None = None

    def __post_init__(self) -> None:
        self.surprisal_bits = np.asarray(self.surprisal_bits, dtype=np.float64)
        if len(self.surprisal_bits) != len(self.tokens):
            raise ScoreError("one surprisal value per token required")
        if not np.all(np.isfinite(self.surprisal_bits)) or np.any(self.surprisal_bits < 0):
            raise ScoreError("surprisals must be finite and non-negative")

    @property
    def total_bits(self) -> float:
        return float(self.surprisal_bits.sum())


class _ParamsScorer:
    def __init__(self, params: LmParameters, vocab: Vocab, strict: bool = True):
        self.params = params
        self.vocab = vocab
        self.strict = strict

    def token_logprobs(self, ids: Sequence[int]) -> np.ndarray:
        return stream_logprobs(self.params, ids, prime_id=self.vocab.eos_id)


def sequence_surprisal(
    model: LmParameters | TokenScorer,
    tokens: Sequence[str],
    vocab: Vocab | None = None,
    strict: bool = True,
    item_id: int | None = None,
    condition: tuple[bool, bool, bool] | None = None,
) -> SurprisalProfile:
    """Per-token surprisal in bits, s_t = -log2 p(w_t | w_<t).

    Accepts either trained LmParameters (then a vocab is required; strict
    mode rejects out-of-vocabulary words) or any TokenScorer. Eval-mode
    only: repeated calls return identical values.
    """
    if not tokens:
        raise ScoreError("cannot score an empty sentence")
    if isinstance(model, LmParameters):
        if vocab is None:
            raise ScoreError("scoring LmParameters requires the vocabulary")
        if strict:
            oov = sorted({t for t in tokens if t not in vocab})
            if oov:
                raise ScoreError(f"out-of-vocabulary tokens: {oov}")
        ids = vocab.encode(tokens)
        logp = stream_logprobs(model, ids, prime_id=vocab.eos_id)
    else:
        ids = vocab.encode(tokens) if vocab is not None else list(tokens)  # type: ignore[assignment]
        logp = np.asarray(model.token_logprobs(ids), dtype=np.float64)
    bits = -logp / LN2
    return SurprisalProfile(tuple(tokens), bits, item_id=item_id, condition=condition)


def evaluate_perplexity(params: LmParameters, stream: np.ndarray | Sequence[int]) -> float:
    """exp(mean cross-entropy in nats) over a token-id stream."""
    stream = np.asarray(stream, dtype=np.int64)
    if stream.size == 0:
        raise ScoreError("cannot evaluate perplexity on an empty split")
    return float(math.exp(stream_nll(params, stream) / stream.size))
