# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: fused masked softmax and layer norm (forward + backward)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

ctypedef fused real:
    float
    double

cdef double MASK_FILL = -1e9


def masked_softmax_fwd(const real[:, :, :, ::1] x, allowed):
    cdef const cnp.uint8_t[:, :, :, ::1] m = np.ascontiguousarray(allowed, dtype=np.uint8)
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], I = x.shape[2], J = x.shape[3]
    cdef Py_ssize_t bm = m.shape[0] > 1, hm = m.shape[1] > 1
    cdef Py_ssize_t b, h, i, j
    cdef double mx, s, v
    dtype = np.float32 if real is float else np.float64
    out = np.empty((B, H, I, J), dtype=dtype)
    cdef real[:, :, :, ::1] y = out
    with nogil:
        for b in range(B):
            for h in range(H):
                for i in range(I):
                    mx = -1e300
                    for j in range(J):
                        v = x[b, h, i, j]
                        if not m[b * bm, h * hm, i, j]:
                            v = <real>(v + MASK_FILL)
                        if v > mx:
                            mx = v
                    s = 0.0
                    for j in range(J):
                        if m[b * bm, h * hm, i, j]:
                            v = <real>exp(<real>(x[b, h, i, j] - mx))
                            y[b, h, i, j] = <real>v
                            s += y[b, h, i, j]
                        else:
                            y[b, h, i, j] = 0
                    s = <real>s
                    for j in range(J):
                        y[b, h, i, j] = <real>(y[b, h, i, j] / s)
    return out


def masked_softmax_bwd(const real[:, :, :, ::1] y, const real[:, :, :, ::1] g):
    cdef Py_ssize_t B = y.shape[0], H = y.shape[1], I = y.shape[2], J = y.shape[3]
    cdef Py_ssize_t b, h, i, j
    cdef double dot
    dtype = np.float32 if real is float else np.float64
    out = np.empty((B, H, I, J), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    with nogil:
        for b in range(B):
            for h in range(H):
                for i in range(I):
                    dot = 0.0
                    for j in range(J):
                        dot += g[b, h, i, j] * y[b, h, i, j]
                    for j in range(J):
                        dx[b, h, i, j] = <real>(y[b, h, i, j] * (g[b, h, i, j] - dot))
    return out


def layer_norm_fwd(const real[:, ::1] x, const real[::1] gain, const real[::1] bias, double eps):
    cdef Py_ssize_t N = x.shape[0], D = x.shape[1], n, d
    cdef double mu, var, r, c
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((N, D), dtype=dtype)
    xhat_arr = np.empty((N, D), dtype=dtype)
    rstd_arr = np.empty(N, dtype=dtype)
    cdef real[:, ::1] y = y_arr
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    with nogil:
        for n in range(N):
            mu = 0.0
            for d in range(D):
                mu += x[n, d]
            mu /= D
            var = 0.0
            for d in range(D):
                c = x[n, d] - mu
                var += c * c
            var /= D
            r = 1.0 / sqrt(var + eps)
            rstd[n] = <real>r
            for d in range(D):
                xhat[n, d] = <real>((x[n, d] - mu) * r)
                y[n, d] = <real>(xhat[n, d] * gain[d] + bias[d])
    return y_arr, xhat_arr, rstd_arr


def layer_norm_bwd(const real[:, ::1] g, const real[:, ::1] xhat, const real[::1] rstd, const real[::1] gain):
    cdef Py_ssize_t N = g.shape[0], D = g.shape[1], n, d
    cdef double mg, mgx, gx
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((N, D), dtype=dtype)
    acc_gain = np.zeros(D, dtype=np.float64)
    acc_bias = np.zeros(D, dtype=np.float64)
    cdef real[:, ::1] dx = dx_arr
    cdef double[::1] dgain = acc_gain
    cdef double[::1] dbias = acc_bias
    with nogil:
        for n in range(N):
            mg = 0.0
            mgx = 0.0
            for d in range(D):
                gx = g[n, d] * gain[d]
                mg += gx
                mgx += gx * xhat[n, d]
                dgain[d] += g[n, d] * xhat[n, d]
                dbias[d] += g[n, d]
            mg /= D
            mgx /= D
            for d in range(D):
                gx = g[n, d] * gain[d]
                dx[n, d] = <real>((gx - mg - xhat[n, d] * mgx) * rstd[n])
    return dx_arr, acc_gain.astype(dtype), acc_bias.astype(dtype)
