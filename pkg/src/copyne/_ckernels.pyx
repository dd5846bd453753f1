# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamic-programming kernels: CTC forward-backward and edit-distance alignment."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

ctypedef cnp.int64_t i64

cdef inline double _lae(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log(1.0 + exp(b - a))
    return b + log(1.0 + exp(a - b))


def ctc_forward_backward(double[:, :, ::1] logp, i64[::1] in_lens, i64[:, ::1] labels,
                         i64[::1] lab_lens, int blank):
    """Per-sequence CTC negative log-likelihood and its gradient w.r.t. ``logp``."""
    cdef Py_ssize_t B = logp.shape[0], Tmax = logp.shape[1], V = logp.shape[2]
    cdef Py_ssize_t Lmax = labels.shape[1]
    cdef Py_ssize_t Smax = 2 * Lmax + 1
    nll_arr = np.zeros(B, dtype=np.float64)
    grad_arr = np.zeros((B, Tmax, V), dtype=np.float64)
    alpha_arr = np.empty((Tmax, Smax), dtype=np.float64)
    beta_arr = np.empty((Tmax, Smax), dtype=np.float64)
    ext_arr = np.empty(Smax, dtype=np.int64)
    cdef double[::1] nll = nll_arr
    cdef double[:, :, ::1] grad = grad_arr
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef i64[::1] ext = ext_arr
    cdef Py_ssize_t b, t, s, S, T, L
    cdef double v, logP
    cdef i64 k
    for b in range(B):
        T = in_lens[b]
        L = lab_lens[b]
        S = 2 * L + 1
        for s in range(S):
            ext[s] = blank if s % 2 == 0 else labels[b, (s - 1) // 2]
        for t in range(T):
            for s in range(S):
                alpha[t, s] = -INFINITY
                beta[t, s] = -INFINITY
        if T == 0:
            nll[b] = 0.0 if L == 0 else INFINITY
            continue
        alpha[0, 0] = logp[b, 0, blank]
        if S > 1:
            alpha[0, 1] = logp[b, 0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                v = alpha[t - 1, s]
                if s >= 1:
                    v = _lae(v, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    v = _lae(v, alpha[t - 1, s - 2])
                if v != -INFINITY:
                    v = v + logp[b, t, ext[s]]
                alpha[t, s] = v
        logP = alpha[T - 1, S - 1]
        if S > 1:
            logP = _lae(logP, alpha[T - 1, S - 2])
        if logP == -INFINITY:
            nll[b] = INFINITY
            continue
        nll[b] = -logP
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                v = beta[t + 1, s] + logp[b, t + 1, ext[s]]
                if s + 1 < S:
                    v = _lae(v, beta[t + 1, s + 1] + logp[b, t + 1, ext[s + 1]])
                if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    v = _lae(v, beta[t + 1, s + 2] + logp[b, t + 1, ext[s + 2]])
                beta[t, s] = v
        for t in range(T):
            for s in range(S):
                v = alpha[t, s] + beta[t, s]
                if v != -INFINITY:
                    k = ext[s]
                    grad[b, t, k] -= exp(v - logP)
    return nll_arr, grad_arr


cdef cnp.ndarray _dp_table(i64[::1] a, i64[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    table = np.empty((n + 1, m + 1), dtype=np.int64)
    cdef i64[:, ::1] D = table
    cdef i64 best, c
    for i in range(n + 1):
        D[i, 0] = i
    for j in range(m + 1):
        D[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = D[i - 1, j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            c = D[i - 1, j] + 1
            if c < best:
                best = c
            c = D[i, j - 1] + 1
            if c < best:
                best = c
            D[i, j] = best
    return table


def edit_distance(i64[::1] a, i64[::1] b):
    """Unit-cost Levenshtein distance using two rolling rows."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.empty(m + 1, dtype=np.int64)
    cdef i64[::1] prev = prev_arr
    cdef i64[::1] cur = cur_arr
    cdef i64[::1] tmp
    cdef i64 best, c
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            c = prev[j] + 1
            if c < best:
                best = c
            c = cur[j - 1] + 1
            if c < best:
                best = c
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


def align_ops(i64[::1] a, i64[::1] b):
    """Minimum-cost alignment as an (n_ops, 3) array of (kind, ref_pos, hyp_pos).

    kind: 0 match, 1 substitute, 2 delete, 3 insert.  Backtrace prefers
    match > substitute > delete > insert.
    """
    cdef i64[:, ::1] D = _dp_table(a, b)
    cdef Py_ssize_t i = a.shape[0], j = b.shape[0], n_ops = 0
    ops_arr = np.empty((i + j, 3), dtype=np.int64)
    cdef i64[:, ::1] ops = ops_arr
    while i > 0 or j > 0:
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and D[i - 1, j - 1] == D[i, j]:
            ops[n_ops, 0] = 0; ops[n_ops, 1] = i - 1; ops[n_ops, 2] = j - 1
            i -= 1; j -= 1
        elif i > 0 and j > 0 and D[i - 1, j - 1] + 1 == D[i, j]:
            ops[n_ops, 0] = 1; ops[n_ops, 1] = i - 1; ops[n_ops, 2] = j - 1
            i -= 1; j -= 1
        elif i > 0 and D[i - 1, j] + 1 == D[i, j]:
            ops[n_ops, 0] = 2; ops[n_ops, 1] = i - 1; ops[n_ops, 2] = -1
            i -= 1
        else:
            ops[n_ops, 0] = 3; ops[n_ops, 1] = -1; ops[n_ops, 2] = j - 1
            j -= 1
        n_ops += 1
    return ops_arr[:n_ops][::-1].copy()
