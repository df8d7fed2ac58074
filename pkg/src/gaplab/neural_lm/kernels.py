"""LSTM cell kernels: compiled core with a pure-numpy fallback.

The matrix products around the cell stay in BLAS; these kernels fuse the
elementwise gate math, which otherwise dominates Python overhead across the
tens of thousands of timesteps in a training epoch. The compiled extension
is selected at import when present; set GAPLAB_NUMPY_KERNELS=1 to force the
numpy path. Gate columns are laid out [input | forget | cell | output].
"""
from __future__ import annotations

import os

import numpy as np

try:
    from . import _cell_kernels as _compiled
except ImportError:
    _compiled = None

if os.environ.get("GAPLAB_NUMPY_KERNELS") == "1":
    _compiled = None

BACKEND = "numpy" if _compiled is None else "cython"

_COMPILED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def numpy_cell_forward(gates, c_prev, i, f, g, o, c, h) -> None:
    """Activate preactivation gates and advance the cell state in place.

    gates: (B, 4H) preactivations; c_prev: (B, H). Writes the activated
    gates into i/f/g/o and the new cell/hidden state into c/h.
    """
    hh = c_prev.shape[1]
    i[...] = _sigmoid(gates[:, :hh])
    f[...] = _sigmoid(gates[:, hh : 2 * hh])
    g[...] = np.tanh(gates[:, 2 * hh : 3 * hh])
    o[...] = _sigmoid(gates[:, 3 * hh :])
    c[...] = f * c_prev + i * g
    h[...] = o * np.tanh(c)


def numpy_cell_backward(dh, dc_in, i, f, g, o, c_prev, c, dgates, dc_prev) -> None:
    """Backward through one cell step; writes dgates (B, 4H) and dc_prev."""
    hh = c_prev.shape[1]
    tc = np.tanh(c)
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    dgates[:, :hh] = (dc * g) * i * (1.0 - i)
    dgates[:, hh : 2 * hh] = (dc * c_prev) * f * (1.0 - f)
    dgates[:, 2 * hh : 3 * hh] = (dc * i) * (1.0 - g * g)
    dgates[:, 3 * hh :] = do * o * (1.0 - o)
    dc_prev[...] = dc * f


def cell_forward(gates, c_prev, i, f, g, o, c, h) -> None:
    if _compiled is not None and gates.dtype in _COMPILED_DTYPES:
        _compiled.cell_forward(gates, c_prev, i, f, g, o, c, h)
    else:
        numpy_cell_forward(gates, c_prev, i, f, g, o, c, h)


def cell_backward(dh, dc_in, i, f, g, o, c_prev, c, dgates, dc_prev) -> None:
    if _compiled is not None and dh.dtype in _COMPILED_DTYPES:
        _compiled.cell_backward(dh, dc_in, i, f, g, o, c_prev, c, dgates, dc_prev)
    else:
        numpy_cell_backward(dh, dc_in, i, f, g, o, c_prev, c, dgates, dc_prev)


def compiled_available() -> bool:
    return _compiled is not None
