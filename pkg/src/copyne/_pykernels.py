"""Pure-Python/numpy versions of the compiled kernels (same signatures)."""

import numpy as np

_NEG_INF = -np.inf


def _lae(*xs):
    return np.logaddexp.reduce(np.stack(xs), axis=0)


def ctc_forward_backward(logp, in_lens, labels, lab_lens, blank):
    B, Tmax, V = logp.shape
    nll = np.zeros(B)
    grad = np.zeros((B, Tmax, V))
    for b in range(B):
        T, L = int(in_lens[b]), int(lab_lens[b])
        S = 2 * L + 1
        ext = np.full(S, blank, dtype=np.int64)
        ext[1::2] = labels[b, :L]
        if T == 0:
            nll[b] = 0.0 if L == 0 else np.inf
            continue
        # s-2 transition allowed where the symbol is a label differing from the one two back
        skip = np.zeros(S, dtype=bool)
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
        em = logp[b, :T][:, ext]
        alpha = np.full((T, S), _NEG_INF)
        alpha[0, 0] = em[0, 0]
        if S > 1:
            alpha[0, 1] = em[0, 1]
        with np.errstate(invalid="ignore"):
            for t in range(1, T):
                prev = alpha[t - 1]
                one = np.concatenate(([_NEG_INF], prev[:-1]))
                two = np.where(skip, np.concatenate(([_NEG_INF, _NEG_INF], prev[:-2]))[:S], _NEG_INF)
                alpha[t] = _lae(prev, one, two) + em[t]
        logP = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
        if logP == _NEG_INF:
            nll[b] = np.inf
            continue
        nll[b] = -logP
        beta = np.full((T, S), _NEG_INF)
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        skip_fwd = np.zeros(S, dtype=bool)
        skip_fwd[:-2] = skip[2:]
        with np.errstate(invalid="ignore"):
            for t in range(T - 2, -1, -1):
                nxt = beta[t + 1] + em[t + 1]
                one = np.concatenate((nxt[1:], [_NEG_INF]))
                two = np.where(skip_fwd, np.concatenate((nxt[2:], [_NEG_INF, _NEG_INF]))[:S], _NEG_INF)
                beta[t] = _lae(nxt, one, two)
        post = np.exp(alpha + beta - logP)
        for s in range(S):
            grad[b, :T, ext[s]] -= post[:, s]
    return nll, grad


def _dp_table(a, b):
    n, m = len(a), len(b)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ai = a[i - 1]
        row, prev = D[i], D[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (ai != b[j - 1]), prev[j] + 1, row[j - 1] + 1)
    return D


def edit_distance(a, b):
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, bj in enumerate(b, 1):
            cur[j] = min(prev[j - 1] + (ai != bj), prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[-1]


def align_ops(a, b):
    a, b = list(a), list(b)
    D = _dp_table(a, b)
    i, j = len(a), len(b)
    ops = []
    while i > 0 or j > 0:
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and D[i - 1, j - 1] == D[i, j]:
            ops.append((0, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and D[i - 1, j - 1] + 1 == D[i, j]:
            ops.append((1, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and D[i - 1, j] + 1 == D[i, j]:
            ops.append((2, i - 1, -1))
            i -= 1
        else:
            ops.append((3, -1, j - 1))
            j -= 1
    ops.reverse()
    return np.array(ops, dtype=np.int64).reshape(-1, 3)
