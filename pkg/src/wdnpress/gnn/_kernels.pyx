# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled message-passing kernels for the attention layers.

Arcs are sorted by destination and grouped by ``indptr`` (CSR over
destinations); every node owns at least its self-loop. Arrays are batched
over snapshots on the leading axis.
"""

import numpy as np

from libc.math cimport exp, INFINITY
from libc.stdint cimport int64_t


def attention_forward(
    const double[:, :, ::1] s_src,
    const double[:, :, ::1] s_dst,
    const double[:, ::1] edge_bias,
    const int64_t[::1] src,
    const int64_t[::1] indptr,
    double slope,
):
    cdef Py_ssize_t B = s_src.shape[0], N = s_src.shape[1], K = s_src.shape[2], E = src.shape[0]
    pre_arr = np.empty((B, E, K), dtype=np.float64)
    alpha_arr = np.empty((B, E, K), dtype=np.float64)
    cdef double[:, :, ::1] pre = pre_arr
    cdef double[:, :, ::1] alpha = alpha_arr
    cdef Py_ssize_t b, v, k, e, lo, hi
    cdef double x, m, tot
    with nogil:
        for b in range(B):
            for v in range(N):
                lo = indptr[v]
                hi = indptr[v + 1]
                for k in range(K):
                    m = -INFINITY
                    for e in range(lo, hi):
                        x = s_src[b, src[e], k] + s_dst[b, v, k] + edge_bias[e, k]
                        pre[b, e, k] = x
                        if x < 0:
                            x = slope * x
                        alpha[b, e, k] = x
                        if x > m:
                            m = x
                    tot = 0.0
                    for e in range(lo, hi):
                        x = exp(alpha[b, e, k] - m)
                        alpha[b, e, k] = x
                        tot += x
                    for e in range(lo, hi):
                        alpha[b, e, k] /= tot
    return alpha_arr, pre_arr


def aggregate(
    const double[:, :, ::1] alpha,
    const double[:, :, :, ::1] z,
    const int64_t[::1] src,
    const int64_t[::1] indptr,
):
    cdef Py_ssize_t B = z.shape[0], N = z.shape[1], K = z.shape[2], F = z.shape[3]
    out_arr = np.zeros((B, N, K, F), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, v, k, e, f, u
    cdef double a
    with nogil:
        for b in range(B):
            for v in range(N):
                for e in range(indptr[v], indptr[v + 1]):
                    u = src[e]
                    for k in range(K):
                        a = alpha[b, e, k]
                        for f in range(F):
                            out[b, v, k, f] += a * z[b, u, k, f]
    return out_arr


def aggregate_backward(
    const double[:, :, ::1] alpha,
    const double[:, :, :, ::1] z,
    const double[:, :, :, ::1] dout,
    const int64_t[::1] src,
    const int64_t[::1] indptr,
):
    cdef Py_ssize_t B = z.shape[0], N = z.shape[1], K = z.shape[2], F = z.shape[3], E = src.shape[0]
    dalpha_arr = np.empty((B, E, K), dtype=np.float64)
    dz_arr = np.zeros((B, N, K, F), dtype=np.float64)
    cdef double[:, :, ::1] dalpha = dalpha_arr
    cdef double[:, :, :, ::1] dz = dz_arr
    cdef Py_ssize_t b, v, k, e, f, u
    cdef double a, acc
    with nogil:
        for b in range(B):
            for v in range(N):
                for e in range(indptr[v], indptr[v + 1]):
                    u = src[e]
                    for k in range(K):
                        a = alpha[b, e, k]
                        acc = 0.0
                        for f in range(F):
                            acc += dout[b, v, k, f] * z[b, u, k, f]
                            dz[b, u, k, f] += a * dout[b, v, k, f]
                        dalpha[b, e, k] = acc
    return dalpha_arr, dz_arr


def attention_backward(
    const double[:, :, ::1] alpha,
    const double[:, :, ::1] pre,
    const double[:, :, ::1] dalpha,
    const int64_t[::1] src,
    const int64_t[::1] indptr,
    Py_ssize_t n_nodes,
    double slope,
):
    cdef Py_ssize_t B = alpha.shape[0], E = alpha.shape[1], K = alpha.shape[2], N = n_nodes
    dpre_arr = np.empty((B, E, K), dtype=np.float64)
    ds_src_arr = np.zeros((B, N, K), dtype=np.float64)
    ds_dst_arr = np.zeros((B, N, K), dtype=np.float64)
    cdef double[:, :, ::1] dpre = dpre_arr
    cdef double[:, :, ::1] ds_src = ds_src_arr
    cdef double[:, :, ::1] ds_dst = ds_dst_arr
    cdef Py_ssize_t b, v, k, e, lo, hi
    cdef double dot, g
    with nogil:
        for b in range(B):
            for v in range(N):
                lo = indptr[v]
                hi = indptr[v + 1]
                for k in range(K):
                    dot = 0.0
                    for e in range(lo, hi):
                        dot += alpha[b, e, k] * dalpha[b, e, k]
                    for e in range(lo, hi):
                        g = alpha[b, e, k] * (dalpha[b, e, k] - dot)
                        if pre[b, e, k] < 0:
                            g = g * slope
                        dpre[b, e, k] = g
                        ds_src[b, src[e], k] += g
                        ds_dst[b, v, k] += g
    return dpre_arr, ds_src_arr, ds_dst_arr
