# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused elementwise LSTM cell forward/backward.

Same contracts as the numpy implementations in kernels.py; gate layout
[input | forget | cell | output] along the second axis.
"""
from libc.math cimport exp, tanh

import cython

ctypedef fused floating:
    float
    double


cdef inline floating _sig(floating x) noexcept nogil:
    return <floating>(1.0 / (1.0 + exp(-<double>x)))


@cython.boundscheck(False)
@cython.wraparound(False)
def cell_forward(floating[:, :] gates, floating[:, :] c_prev,
                 floating[:, :] i, floating[:, :] f,
                 floating[:, :] g, floating[:, :] o,
                 floating[:, :] c, floating[:, :] h):
    cdef Py_ssize_t b, k
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    cdef floating iv, fv, gv, ov, cv
    with nogil:
        for b in range(B):
            for k in range(H):
                iv = _sig(gates[b, k])
                fv = _sig(gates[b, H + k])
                gv = <floating>tanh(<double>gates[b, 2 * H + k])
                ov = _sig(gates[b, 3 * H + k])
                cv = fv * c_prev[b, k] + iv * gv
                i[b, k] = iv
                f[b, k] = fv
                g[b, k] = gv
                o[b, k] = ov
                c[b, k] = cv
                h[b, k] = ov * <floating>tanh(<double>cv)


@cython.boundscheck(False)
@cython.wraparound(False)
def cell_backward(floating[:, :] dh, floating[:, :] dc_in,
                  floating[:, :] i, floating[:, :] f,
                  floating[:, :] g, floating[:, :] o,
                  floating[:, :] c_prev, floating[:, :] c,
                  floating[:, :] dgates, floating[:, :] dc_prev):
    cdef Py_ssize_t b, k
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    cdef floating tc, do, dc, iv, fv, gv, ov
    with nogil:
        for b in range(B):
            for k in range(H):
                iv = i[b, k]
                fv = f[b, k]
                gv = g[b, k]
                ov = o[b, k]
                tc = <floating>tanh(<double>c[b, k])
                do = dh[b, k] * tc
                dc = dc_in[b, k] + dh[b, k] * ov * (<floating>1.0 - tc * tc)
                dgates[b, k] = (dc * gv) * iv * (<floating>1.0 - iv)
                dgates[b, H + k] = (dc * c_prev[b, k]) * fv * (<floating>1.0 - fv)
                dgates[b, 2 * H + k] = (dc * iv) * (<floating>1.0 - gv * gv)
                dgates[b, 3 * H + k] = do * ov * (<floating>1.0 - ov)
                dc_prev[b, k] = dc * fv
