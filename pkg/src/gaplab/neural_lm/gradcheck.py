"""Central finite-difference verification of the analytic gradients.

Runs in float64 regardless of the configured training dtype. The reported
error is max_k |analytic_k - numeric_k| / max(|analytic_k| + |numeric_k|, s)
with s the largest analytic gradient magnitude: at the fixed step size the
difference quotient carries O(h^2) truncation noise, so deviations are
meaningful relative to the gradient's scale, not to individual near-zero
entries.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .model import (
    LmConfig,
    LmParameters,
    LmState,
    backward_window,
    forward_window,
    init_params,
    quadratic_loss,
    softmax_xent,
)

FD_STEP = 1e-3
MAX_CHECK_DIM = 8


class GradientCheckError(ValueError):
    pass


def _flatten(params: LmParameters) -> np.ndarray:
    return np.concatenate([t.ravel() for t in params.named_tensors().values()])


def _write_flat(params: LmParameters, flat: np.ndarray) -> None:
    pos = 0
    for tensor in params.named_tensors().values():
        n = tensor.size
        tensor[...] = flat[pos : pos + n].reshape(tensor.shape)
        pos += n


def _loss(params: LmParameters, inputs, targets, objective: str) -> float:
    state = LmState.zeros(params.config, inputs.shape[1], dtype=np.float64)
    logits, _, _ = forward_window(params, inputs, state, train_mode=False)
    T, B, V = logits.shape
    fn = softmax_xent if objective == "xent" else quadratic_loss
    loss, _ = fn(logits.reshape(T * B, V), targets.reshape(T * B))
    return loss


def make_sample(
    config: LmConfig, batch: int = 2, length: int = 5, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    inputs = rng.integers(0, config.vocab_size, size=(length, batch))
    targets = rng.integers(0, config.vocab_size, size=(length, batch))
    return inputs, targets


def gradient_check(
    config: LmConfig,
    sample: tuple[np.ndarray, np.ndarray] | None = None,
    objective: str = "xent",
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Requires a tiny, dropout-free configuration. objective="quadratic"
    swaps cross-entropy for a squared-error readout, which makes the
    zero-layer (purely linear) configuration exact up to roundoff.
    """
    if config.dropout_prob > 0:
        raise GradientCheckError("gradient check requires dropout_prob == 0")
    if max(config.embed_dim, config.hidden_dim) > MAX_CHECK_DIM:
        raise GradientCheckError(
            f"gradient check is restricted to dims <= {MAX_CHECK_DIM}"
        )
    if objective not in ("xent", "quadratic"):
        raise GradientCheckError(f"unknown objective {objective!r}")
    config = replace(config, dtype="float64", vocab_size=min(config.vocab_size, 16))
    if sample is None:
        sample = make_sample(config, seed=config.seed)
    inputs, targets = sample
    inputs = np.asarray(inputs, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)

    params = init_params(config)
    state = LmState.zeros(config, inputs.shape[1], dtype=np.float64)
    logits, _, cache = forward_window(params, inputs, state, keep_cache=True)
    T, B, V = logits.shape
    fn = softmax_xent if objective == "xent" else quadratic_loss
    _, dlogits = fn(logits.reshape(T * B, V), targets.reshape(T * B))
    grads = backward_window(params, cache, dlogits)
    analytic = np.concatenate(
        [grads[name].ravel() for name in params.named_tensors()]
    )

    flat = _flatten(params)
    numeric = np.empty_like(analytic)
    work = params.clone()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + FD_STEP
        _write_flat(work, flat)
        f_plus = _loss(work, inputs, targets, objective)
        flat[k] = orig - FD_STEP
        _write_flat(work, flat)
        f_minus = _loss(work, inputs, targets, objective)
        flat[k] = orig
        numeric[k] = (f_plus - f_minus) / (2.0 * FD_STEP)

    scale = max(float(np.max(np.abs(analytic))), 1e-12)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), scale)
    return float(np.max(np.abs(analytic - numeric) / denom))
