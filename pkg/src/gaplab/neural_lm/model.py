"""Word-level LSTM language model: parameters, forward pass and BPTT backward.

All sequence work is time-major internally: ids arrive as (T, B), hidden
stores as (T, B, H). Gate preactivations for a whole window are computed in
one input GEMM per layer; only the recurrent product runs per timestep,
through the fused cell kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels


class ModelError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class LmConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 2
    dropout_prob: float = 0.2
    batch_size: int = 32
    learning_rate: float = 20.0
    max_epochs: int = 10
    bptt_len: int = 35
    grad_clip_norm: float = 0.25
    anneal_factor: float = 4.0
    seed: int = 0
    vocab_size: int = 10000
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.embed_dim < 1 or self.hidden_dim < 1 or self.vocab_size < 2:
            raise ModelError("embedding/hidden/vocab dimensions must be >= 1")
        if self.num_layers < 0:
            raise ModelError("num_layers must be >= 0")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ModelError("dropout_prob must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.batch_size < 1 or self.bptt_len < 1 or self.max_epochs < 1:
            raise ModelError("batch_size, bptt_len and max_epochs must be >= 1")
        if self.anneal_factor <= 1.0:
            raise ModelError("anneal_factor must exceed 1")
        if self.dtype not in ("float32", "float64"):
            raise ModelError("dtype must be float32 or float64")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


# Named presets. "desk" is the test-scale default; "full" carries the
# published recipe of the 650-unit reference model (90M-token scale).
PRESETS: dict[str, LmConfig] = {
    "desk": LmConfig(),
    "full": LmConfig(
        embed_dim=650,
        hidden_dim=650,
        num_layers=2,
        dropout_prob=0.2,
        batch_size=128,
        learning_rate=20.0,
        max_epochs=40,
        vocab_size=50000,
    ),
}


def preset(name: str, **overrides) -> LmConfig:
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides) if overrides else PRESETS[name]


@dataclass
class LmParameters:
    """Model weights. Gate blocks along the 4H axis: [input|forget|cell|output]."""

    config: LmConfig
    embedding: np.ndarray  # (V, E)
    w_in: list[np.ndarray]  # per layer: (E or H, 4H)
    w_rec: list[np.ndarray]  # per layer: (H, 4H)
    bias: list[np.ndarray]  # per layer: (4H,)
    w_out: np.ndarray  # (H or E, V)
    b_out: np.ndarray  # (V,)

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding}
        for l in range(len(self.w_in)):
            out[f"layer{l}.w_in"] = self.w_in[l]
            out[f"layer{l}.w_rec"] = self.w_rec[l]
            out[f"layer{l}.bias"] = self.bias[l]
        out["proj.weight"] = self.w_out
        out["proj.bias"] = self.b_out
        return out

    def clone(self) -> "LmParameters":
        return LmParameters(
            self.config,
            self.embedding.copy(),
            [w.copy() for w in self.w_in],
            [w.copy() for w in self.w_rec],
            [b.copy() for b in self.bias],
            self.w_out.copy(),
            self.b_out.copy(),
        )

    def astype(self, dtype) -> "LmParameters":
        cfg = replace(self.config, dtype=np.dtype(dtype).name)
        return LmParameters(
            cfg,
            self.embedding.astype(dtype),
            [w.astype(dtype) for w in self.w_in],
            [w.astype(dtype) for w in self.w_rec],
            [b.astype(dtype) for b in self.bias],
            self.w_out.astype(dtype),
            self.b_out.astype(dtype),
        )

    def check_finite(self) -> None:
        for name, tensor in self.named_tensors().items():
            if not np.all(np.isfinite(tensor)):
                raise ModelError(f"non-finite values in parameter {name}")


def init_params(config: LmConfig, vocab_size: int | None = None) -> LmParameters:
    """Uniform [-0.1, 0.1] weights, zero biases, deterministic under config.seed."""
    v = vocab_size if vocab_size is not None else config.vocab_size
    if vocab_size is not None and vocab_size != config.vocab_size:
        config = replace(config, vocab_size=vocab_size)
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype
    scale = 0.1

    def uniform(*shape):
        return rng.uniform(-scale, scale, size=shape).astype(dt)

    embedding = uniform(v, config.embed_dim)
    w_in, w_rec, bias = [], [], []
    in_dim = config.embed_dim
    for _ in range(config.num_layers):
        w_in.append(uniform(in_dim, 4 * config.hidden_dim))
        w_rec.append(uniform(config.hidden_dim, 4 * config.hidden_dim))
        bias.append(np.zeros(4 * config.hidden_dim, dtype=dt))
        in_dim = config.hidden_dim
    w_out = uniform(in_dim, v)
    b_out = np.zeros(v, dtype=dt)
    return LmParameters(config, embedding, w_in, w_rec, bias, w_out, b_out)


# ---------------------------------------------------------------------------
# Recurrent state


@dataclass
class LmState:
    h: list[np.ndarray]  # per layer (B, H)
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, config: LmConfig, batch_size: int, dtype=None) -> "LmState":
        dt = dtype or config.np_dtype
        shape = (batch_size, config.hidden_dim)
        return cls(
            [np.zeros(shape, dtype=dt) for _ in range(config.num_layers)],
            [np.zeros(shape, dtype=dt) for _ in range(config.num_layers)],
        )

    def detach_copy(self) -> "LmState":
        return LmState([h.copy() for h in self.h], [c.copy() for c in self.c])


# ---------------------------------------------------------------------------
# Forward / backward


@dataclass
class _LayerCache:
    x: np.ndarray  # layer input after dropout (T, B, Din)
    i: np.ndarray  # activated gates (T, B, H)
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray  # cell states (T, B, H)
    h: np.ndarray  # hidden outputs before inter-layer dropout (T, B, H)
    h0: np.ndarray  # initial hidden (B, H)
    c0: np.ndarray
    drop_mask: np.ndarray | None  # mask applied to h to form next layer's input


@dataclass
class ForwardCache:
    ids: np.ndarray  # (T, B)
    emb_mask: np.ndarray | None
    layers: list[_LayerCache] = field(default_factory=list)
    top: np.ndarray | None = None  # input to the projection (T, B, H)
    probs: np.ndarray | None = None


def _dropout_mask(rng: np.random.Generator, shape, p: float, dtype) -> np.ndarray:
    keep = 1.0 - p
    return (rng.random(shape) < keep).astype(dtype) / dtype.type(keep)


def forward_window(
    params: LmParameters,
    ids: np.ndarray,
    state: LmState,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    keep_cache: bool = False,
) -> tuple[np.ndarray, LmState, ForwardCache | None]:
    """Run a (T, B) window; returns logits (T, B, V) and the new state.

    Dropout (embedding output and between layers) applies only in train
    mode, which then requires an rng. The cache holds what backward needs.
    """
    cfg = params.config
    dt = params.embedding.dtype
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ModelError("ids must have shape (T, B)")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= params.embedding.shape[0]:
        raise ModelError("token id out of range for the embedding table")
    if train_mode and cfg.dropout_prob > 0 and rng is None:
        raise ModelError("train-mode dropout requires an rng")
    T, B = ids.shape
    H = cfg.hidden_dim

    x = params.embedding[ids]  # (T, B, E)
    emb_mask = None
    if train_mode and cfg.dropout_prob > 0:
        emb_mask = _dropout_mask(rng, x.shape, cfg.dropout_prob, dt)
        x = x * emb_mask
    cache = ForwardCache(ids, emb_mask) if keep_cache else None

    new_h, new_c = [], []
    layer_input = x
    for l in range(cfg.num_layers):
        din = layer_input.shape[2]
        gates = layer_input.reshape(T * B, din) @ params.w_in[l]
        gates += params.bias[l]
        gates = np.ascontiguousarray(gates.reshape(T, B, 4 * H))
        i_s = np.empty((T, B, H), dtype=dt)
        f_s = np.empty_like(i_s)
        g_s = np.empty_like(i_s)
        o_s = np.empty_like(i_s)
        c_s = np.empty_like(i_s)
        h_s = np.empty_like(i_s)
        h_prev = state.h[l]
        c_prev = state.c[l]
        w_rec = params.w_rec[l]
        for t in range(T):
            step = gates[t]
            step += h_prev @ w_rec
            kernels.cell_forward(
                step, c_prev, i_s[t], f_s[t], g_s[t], o_s[t], c_s[t], h_s[t]
            )
            h_prev = h_s[t]
            c_prev = c_s[t]
        new_h.append(h_prev.copy())
        new_c.append(c_prev.copy())

        drop_mask = None
        out = h_s
        if train_mode and cfg.dropout_prob > 0 and l < cfg.num_layers - 1:
            drop_mask = _dropout_mask(rng, out.shape, cfg.dropout_prob, dt)
            out = out * drop_mask
        if keep_cache:
            cache.layers.append(
                _LayerCache(
                    layer_input, i_s, f_s, g_s, o_s, c_s, h_s,
                    state.h[l], state.c[l], drop_mask,
                )
            )
        layer_input = out

    if keep_cache:
        cache.top = layer_input
    logits = layer_input.reshape(T * B, -1) @ params.w_out + params.b_out
    logits = logits.reshape(T, B, -1)
    return logits, LmState(new_h, new_c), cache


def softmax_xent(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy in nats and d(loss)/d(logits) for (N, V) inputs."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    zsum = ez.sum(axis=1, keepdims=True)
    probs = ez / zsum
    idx = np.arange(n)
    logp = z[idx, targets] - np.log(zsum[:, 0])
    loss = float(-np.sum(logp, dtype=np.float64) / n)
    dlogits = probs
    dlogits[idx, targets] -= 1.0
    dlogits /= n
    return loss, dlogits


def quadratic_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """0.5 * mean squared error against one-hot targets (diagnostic objective)."""
    n = logits.shape[0]
    resid = logits.copy()
    resid[np.arange(n), targets] -= 1.0
    loss = float(0.5 * np.sum(resid.astype(np.float64) ** 2) / n)
    return loss, resid / n


def zero_grads(params: LmParameters) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.named_tensors().items()}


def backward_window(
    params: LmParameters,
    cache: ForwardCache,
    dlogits: np.ndarray,
) -> dict[str, np.ndarray]:
    """BPTT through one cached window. dlogits: (T*B, V) or (T, B, V)."""
    cfg = params.config
    T, B = cache.ids.shape
    H = cfg.hidden_dim
    dt = params.embedding.dtype
    grads = zero_grads(params)

    top = cache.top.reshape(T * B, -1)
    dl = dlogits.reshape(T * B, -1).astype(dt, copy=False)
    grads["proj.weight"][...] = top.T @ dl
    grads["proj.bias"][...] = dl.sum(axis=0)
    d_in = (dl @ params.w_out.T).reshape(T, B, -1)

    for l in reversed(range(cfg.num_layers)):
        lc = cache.layers[l]
        if lc.drop_mask is not None:
            d_in = d_in * lc.drop_mask
        dgates = np.empty((T, B, 4 * H), dtype=dt)
        dh_carry = np.zeros((B, H), dtype=dt)
        dc_carry = np.zeros((B, H), dtype=dt)
        w_rec_t = params.w_rec[l].T
        dc_prev = np.empty((B, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            dh = d_in[t] + dh_carry
            c_prev = lc.c[t - 1] if t > 0 else lc.c0
            kernels.cell_backward(
                dh, dc_carry, lc.i[t], lc.f[t], lc.g[t], lc.o[t],
                c_prev, lc.c[t], dgates[t], dc_prev,
            )
            dc_carry = dc_prev.copy()
            dh_carry = dgates[t] @ w_rec_t
        h_prev_all = np.concatenate([lc.h0[None], lc.h[:-1]], axis=0)
        dg_flat = dgates.reshape(T * B, 4 * H)
        grads[f"layer{l}.w_rec"][...] = h_prev_all.reshape(T * B, H).T @ dg_flat
        grads[f"layer{l}.w_in"][...] = lc.x.reshape(T * B, -1).T @ dg_flat
        grads[f"layer{l}.bias"][...] = dg_flat.sum(axis=0)
        d_in = (dg_flat @ params.w_in[l].T).reshape(T, B, -1)

    if cache.emb_mask is not None:
        d_in = d_in * cache.emb_mask
    np.add.at(
        grads["embedding"], cache.ids.reshape(T * B), d_in.reshape(T * B, -1)
    )
    return grads


def forward_step(
    params: LmParameters,
    token_ids: Sequence[int] | np.ndarray,
    state: LmState | None = None,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, LmState]:
    """Single-step forward: ids (B,) -> logits (B, V) and the next state."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ModelError("forward_step expects a 1-D batch of token ids")
    if state is None:
        state = LmState.zeros(params.config, len(ids), dtype=params.embedding.dtype)
    logits, new_state, _ = forward_window(
        params, ids[None, :], state, train_mode=train_mode, rng=rng
    )
    return logits[0], new_state
