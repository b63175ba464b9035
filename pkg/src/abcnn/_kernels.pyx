# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: same-padded conv2d, max pooling, format-212 codec.

Semantics are identical to ``_kernels_py``; only summation order may
differ in the last floating-point bits.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "cython"


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] k,
                   Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw,
                   Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], co = k.shape[3]
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((B, ho, wo, co), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t b, i, j, u, v, c, o, xi, xj
    cdef floating xv
    cdef floating *xrow
    cdef floating *yrow
    cdef floating *krow
    with nogil:
        for b in range(B):
            for i in range(ho):
                for u in range(kh):
                    xi = i * sh + u - ph
                    if xi < 0 or xi >= H:
                        continue
                    for j in range(wo):
                        for v in range(kw):
                            xj = j * sw + v - pw
                            if xj < 0 or xj >= W:
                                continue
                            xrow = &x[b, xi, xj, 0]
                            yrow = &y[b, i, j, 0]
                            for c in range(ci):
                                xv = xrow[c]
                                krow = &k[u, v, c, 0]
                                for o in range(co):
                                    yrow[o] += xv * krow[o]
    return out


def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] k,
                    floating[:, :, :, ::1] gy,
                    Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], co = k.shape[3]
    cdef Py_ssize_t ho = gy.shape[1], wo = gy.shape[2]
    dtype = np.float64 if floating is double else np.float32
    gx_arr = np.zeros((B, H, W, ci), dtype=dtype)
    gk_arr = np.zeros((kh, kw, ci, co), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, :, ::1] gk = gk_arr
    cdef Py_ssize_t b, i, j, u, v, c, o, xi, xj
    cdef floating xv, acc, g
    with nogil:
        for b in range(B):
            for i in range(ho):
                for u in range(kh):
                    xi = i * sh + u - ph
                    if xi < 0 or xi >= H:
                        continue
                    for j in range(wo):
                        for v in range(kw):
                            xj = j * sw + v - pw
                            if xj < 0 or xj >= W:
                                continue
                            for c in range(ci):
                                xv = x[b, xi, xj, c]
                                acc = 0
                                for o in range(co):
                                    g = gy[b, i, j, o]
                                    gk[u, v, c, o] += xv * g
                                    acc = acc + g * k[u, v, c, o]
                                gx[b, xi, xj, c] += acc
    return gx_arr, gk_arr


def maxpool_forward(floating[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t ho = (H - kh) // sh + 1, wo = (W - kw) // sw + 1
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((B, ho, wo, C), dtype=dtype)
    idx_arr = np.empty((B, ho, wo, C), dtype=np.int64)
    cdef floating[:, :, :, ::1] y = out
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, i, j, u, v, c, best_at, r, q
    cdef floating best, val
    with nogil:
        for b in range(B):
            for i in range(ho):
                for j in range(wo):
                    for c in range(C):
                        best = x[b, i * sh, j * sw, c]
                        best_at = i * sh * W + j * sw
                        for u in range(kh):
                            r = i * sh + u
                            for v in range(kw):
                                q = j * sw + v
                                val = x[b, r, q, c]
                                if val > best:
                                    best = val
                                    best_at = r * W + q
                        y[b, i, j, c] = best
                        idx[b, i, j, c] = best_at
    return out, idx_arr


def maxpool_backward(floating[:, :, :, ::1] gy, cnp.int64_t[:, :, :, ::1] idx,
                     Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t B = gy.shape[0], ho = gy.shape[1], wo = gy.shape[2], C = gy.shape[3]
    dtype = np.float64 if floating is double else np.float32
    gx_arr = np.zeros((B, H, W, C), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, i, j, c, at
    with nogil:
        for b in range(B):
            for i in range(ho):
                for j in range(wo):
                    for c in range(C):
                        at = idx[b, i, j, c]
                        gx[b, at // W, at % W, c] += gy[b, i, j, c]
    return gx_arr


def decode_212(const unsigned char[::1] buf, Py_ssize_t n):
    out_arr = np.empty(n, dtype=np.int16)
    cdef cnp.int16_t[::1] out = out_arr
    cdef Py_ssize_t m = buf.shape[0], f, p
    cdef int b0, b1, b2, s
    with nogil:
        for f in range(0, n, 2):
            p = (f // 2) * 3
            b0 = buf[p] if p < m else 0
            b1 = buf[p + 1] if p + 1 < m else 0
            b2 = buf[p + 2] if p + 2 < m else 0
            s = b0 | ((b1 & 0x0F) << 8)
            out[f] = s - 4096 if s > 2047 else s
            if f + 1 < n:
                s = b2 | ((b1 & 0xF0) << 4)
                out[f + 1] = s - 4096 if s > 2047 else s
    return out_arr


def encode_212(samples):
    cdef cnp.int64_t[::1] s = np.ascontiguousarray(samples, dtype=np.int64).ravel()
    cdef Py_ssize_t n = s.shape[0], f, p
    cdef Py_ssize_t nbytes = (3 * n + 1) // 2
    out_arr = np.zeros(((n + 1) // 2) * 3, dtype=np.uint8)
    cdef cnp.uint8_t[::1] out = out_arr
    cdef cnp.int64_t s1, s2
    with nogil:
        for f in range(0, n, 2):
            p = (f // 2) * 3
            s1 = s[f] & 0xFFF
            s2 = (s[f + 1] & 0xFFF) if f + 1 < n else 0
            out[p] = s1 & 0xFF
            out[p + 1] = ((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0)
            out[p + 2] = s2 & 0xFF
    return out_arr.tobytes()[:nbytes]


def adam_update(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
                double lr, double b1, double b2, double eps, double c1, double c2):
    """Fused in-place Adam step on flat contiguous arrays."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi, m_hat, v_hat
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = b1 * m[i] + (1 - b1) * gi
            vi = b2 * v[i] + (1 - b2) * gi * gi
            m[i] = mi
            v[i] = vi
            m_hat = mi / c1
            v_hat = vi / c2
            p[i] = p[i] - lr * m_hat / (sqrt(v_hat) + eps)
