# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched kernels; see _kernels_np.py for the reference semantics."""

from libc.math cimport exp

import numpy as np

BACKEND = "cython"


def bod_predict(P, u):
    cdef double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], n = uu.shape[0], i, t
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double p1, p2
    with nogil:
        for i in range(m):
            p1 = p[i, 0]
            p2 = p[i, 1]
            for t in range(n):
                o[i, t] = p1 * (1.0 - exp(-p2 * uu[t]))
    return out


def so2_predict(P, u, double b0):
    cdef double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], n = uu.shape[0], i, t
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double p1, p2, amp, decay
    with nogil:
        for i in range(m):
            p1 = p[i, 0]
            p2 = p[i, 1]
            amp = b0 * p1 / (p2 * p2)
            decay = p2 + p2 * p2 / p1
            for t in range(n):
                o[i, t] = amp * ((decay * uu[t] + 1.0) * exp(-p2 * uu[t]) - 1.0)
    return out


def weighted_sse(pred, y, w):
    cdef double[:, ::1] q = np.ascontiguousarray(pred, dtype=np.float64)
    cdef double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = q.shape[0], n = q.shape[1], i, t
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, r
    with nogil:
        for i in range(m):
            acc = 0.0
            for t in range(n):
                r = yy[t] - q[i, t]
                acc += ww[t] * r * r
            o[i] = acc
    return out


def bod_sse(P, u, y, w):
    cdef double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], n = uu.shape[0], i, t
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double p1, p2, acc, r
    with nogil:
        for i in range(m):
            p1 = p[i, 0]
            p2 = p[i, 1]
            acc = 0.0
            for t in range(n):
                r = yy[t] - p1 * (1.0 - exp(-p2 * uu[t]))
                acc += ww[t] * r * r
            o[i] = acc
    return out


def so2_sse(P, u, y, w, double b0):
    cdef double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], n = uu.shape[0], i, t
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double p1, p2, amp, decay, acc, r
    with nogil:
        for i in range(m):
            p1 = p[i, 0]
            p2 = p[i, 1]
            amp = b0 * p1 / (p2 * p2)
            decay = p2 + p2 * p2 / p1
            acc = 0.0
            for t in range(n):
                r = yy[t] - amp * ((decay * uu[t] + 1.0) * exp(-p2 * uu[t]) - 1.0)
                acc += ww[t] * r * r
            o[i] = acc
    return out
