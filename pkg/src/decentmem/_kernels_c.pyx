# cython: language_level=3
"""Compiled twins of ``decentmem._kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _interp(double alpha, const double[::1] table, Py_ssize_t last) noexcept nogil:
    cdef double pos = alpha * last
    cdef Py_ssize_t i = <Py_ssize_t>pos
    if i > last - 1:
        i = last - 1
    if i < 0:
        i = 0
    cdef double frac = pos - i
    return table[i] + frac * (table[i + 1] - table[i])


def rm_recursion(alpha0, uniforms, q_table, long step0, double lo, double hi):
    cdef double[::1] a0 = np.ascontiguousarray(alpha0, dtype=np.float64)
    cdef double[:, ::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef const double[::1] table = np.ascontiguousarray(q_table, dtype=np.float64)
    cdef Py_ssize_t n_seeds = u.shape[0]
    cdef Py_ssize_t n_steps = u.shape[1]
    cdef Py_ssize_t last = table.shape[0] - 1
    out_arr = np.empty((n_seeds, n_steps), dtype=np.float64)
    nxt_arr = np.empty(n_seeds, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] nxt = nxt_arr
    cdef Py_ssize_t s, j
    cdef double alpha, q, target
    with nogil:
        for s in range(n_seeds):
            alpha = a0[s]
            for j in range(n_steps):
                out[s, j] = alpha
                q = _interp(alpha, table, last)
                if u[s, j] < q:
                    target = (1.0 + alpha) / (3.0 - alpha)
                else:
                    target = alpha / (2.0 - alpha)
                alpha = alpha + (target - alpha) / (step0 + j)
                if alpha < lo:
                    alpha = lo
                elif alpha > hi:
                    alpha = hi
            nxt[s] = alpha
    return out_arr, nxt_arr


def weight_recursion(w0, uniforms, q_table, double increment, double decay, double floor):
    cdef double[::1] ws = np.ascontiguousarray(w0, dtype=np.float64)
    cdef double[:, ::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef const double[::1] table = np.ascontiguousarray(q_table, dtype=np.float64)
    cdef Py_ssize_t n_seeds = u.shape[0]
    cdef Py_ssize_t n_steps = u.shape[1]
    cdef Py_ssize_t last = table.shape[0] - 1
    out_arr = np.empty((n_seeds, n_steps), dtype=np.float64)
    nxt_arr = np.empty(n_seeds, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] nxt = nxt_arr
    cdef Py_ssize_t s, j
    cdef double w, alpha, q
    with nogil:
        for s in range(n_seeds):
            w = ws[s]
            for j in range(n_steps):
                alpha = w / (w + 1.0)
                out[s, j] = alpha
                q = _interp(alpha, table, last)
                if u[s, j] < q:
                    w = w + increment
                else:
                    w = decay * w
                    if w < floor:
                        w = floor
            nxt[s] = w
    return out_arr, nxt_arr


def topk_above(sims, rank, Py_ssize_t k, double tau):
    cdef const double[::1] sv = np.ascontiguousarray(sims, dtype=np.float64)
    cdef const long long[::1] rv = np.ascontiguousarray(rank, dtype=np.int64)
    cdef Py_ssize_t n = sv.shape[0]
    if k < 1:
        return np.empty(0, dtype=np.int64)
    buf_arr = np.empty(k, dtype=np.int64)
    cdef long long[::1] buf = buf_arr
    cdef Py_ssize_t filled = 0
    cdef Py_ssize_t i, pos, j
    cdef double s
    cdef long long r
    with nogil:
        for i in range(n):
            s = sv[i]
            if not (s >= tau):
                continue
            r = rv[i]
            # insertion position in the (sim desc, rank asc) ordered buffer
            pos = filled
            while pos > 0 and (sv[buf[pos - 1]] < s or (sv[buf[pos - 1]] == s and rv[buf[pos - 1]] > r)):
                pos -= 1
            if pos >= k:
                continue
            if filled < k:
                filled += 1
            j = filled - 1
            while j > pos:
                buf[j] = buf[j - 1]
                j -= 1
            buf[pos] = i
    return buf_arr[:filled].copy()
