import subprocess
import sys

import numpy as np
import pytest

from gaplab.neural_lm import kernels


needs_compiled = pytest.mark.skipif(
    not kernels.compiled_available(), reason="compiled kernels not built"
)


def _random_cell_inputs(dtype, B=16, H=24, seed=0):
    rng = np.random.default_rng(seed)
    gates = rng.normal(size=(B, 4 * H)).astype(dtype)
    c_prev = rng.normal(size=(B, H)).astype(dtype)
    return gates, c_prev


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_forward_backends_agree(dtype):
    gates, c_prev = _random_cell_inputs(dtype)
    B, H = c_prev.shape
    out_np = [np.empty((B, H), dtype) for _ in range(6)]
    out_cy = [np.empty((B, H), dtype) for _ in range(6)]
    kernels.numpy_cell_forward(gates, c_prev, *out_np)
    kernels._compiled.cell_forward(gates, c_prev, *out_cy)
    tol = 1e-6 if dtype == np.float32 else 1e-14
    for a, b in zip(out_np, out_cy):
        np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backward_backends_agree(dtype):
    gates, c_prev = _random_cell_inputs(dtype, seed=1)
    B, H = c_prev.shape
    acts = [np.empty((B, H), dtype) for _ in range(6)]
    kernels.numpy_cell_forward(gates, c_prev, *acts)
    i, f, g, o, c, _ = acts
    rng = np.random.default_rng(2)
    dh = rng.normal(size=(B, H)).astype(dtype)
    dc_in = rng.normal(size=(B, H)).astype(dtype)
    dg_np = np.empty((B, 4 * H), dtype)
    dcp_np = np.empty((B, H), dtype)
    dg_cy = np.empty((B, 4 * H), dtype)
    dcp_cy = np.empty((B, H), dtype)
    kernels.numpy_cell_backward(dh, dc_in, i, f, g, o, c_prev, c, dg_np, dcp_np)
    kernels._compiled.cell_backward(dh, dc_in, i, f, g, o, c_prev, c, dg_cy, dcp_cy)
    tol = 1e-5 if dtype == np.float32 else 1e-13
    np.testing.assert_allclose(dg_np, dg_cy, rtol=tol, atol=tol)
    np.testing.assert_allclose(dcp_np, dcp_cy, rtol=tol, atol=tol)


def test_env_var_forces_numpy_backend():
    code = (
        "import gaplab.neural_lm.kernels as k; "
        "print(k.BACKEND, k.compiled_available())"
    )
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"GAPLAB_NUMPY_KERNELS": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
        cwd="/",
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.split() == ["numpy", "False"]


def test_numpy_fallback_handles_exotic_dtypes():
    # The dispatcher must route non-f32/f64 dtypes to the numpy path.
    gates, c_prev = _random_cell_inputs(np.longdouble, B=3, H=4)
    B, H = c_prev.shape
    outs = [np.empty((B, H), np.longdouble) for _ in range(6)]
    kernels.cell_forward(gates, c_prev, *outs)
    assert all(np.isfinite(o).all() for o in outs)
