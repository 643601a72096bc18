# cython: language_level=3
"""Compiled versions of the hot decode-step kernels.

Same contracts as tlsattn._pykernels; accumulation is in double precision.
"""

import numpy as np
cimport cython
from libc.math cimport rint


def quest_scores(const double[:, ::1] q, const double[:, ::1] kmax,
                 const double[:, ::1] kmin):
    cdef Py_ssize_t G = q.shape[0], d = q.shape[1], m = kmax.shape[0]
    cdef Py_ssize_t i, h, c
    cdef double acc, a, b, qv
    out = np.zeros(m, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(m):
        acc = 0.0
        for h in range(G):
            for c in range(d):
                qv = q[h, c]
                a = qv * kmax[i, c]
                b = qv * kmin[i, c]
                acc += a if a > b else b
        o[i] = acc
    return out


def block_max_min(const double[:, ::1] keys, Py_ssize_t block_size):
    cdef Py_ssize_t n = keys.shape[0], d = keys.shape[1]
    cdef Py_ssize_t m = (n + block_size - 1) // block_size
    cdef Py_ssize_t i, j, c, start, end
    cdef double v
    cdef double *mx
    cdef double *mn
    cdef const double *row
    kmax_a = np.empty((m, d), dtype=np.float64)
    kmin_a = np.empty((m, d), dtype=np.float64)
    cdef double[:, ::1] kmax = kmax_a
    cdef double[:, ::1] kmin = kmin_a
    if n == 0 or d == 0:
        return kmax_a, kmin_a
    for i in range(m):
        start = i * block_size
        end = min(start + block_size, n)
        mx = &kmax[i, 0]
        mn = &kmin[i, 0]
        row = &keys[start, 0]
        for c in range(d):
            mx[c] = row[c]
            mn[c] = row[c]
        for j in range(start + 1, end):
            row = &keys[j, 0]
            for c in range(d):
                v = row[c]
                mx[c] = v if v > mx[c] else mx[c]
                mn[c] = v if v < mn[c] else mn[c]
    return kmax_a, kmin_a


def quantize_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, c
    cdef double lo, hi, s, q
    codes_a = np.zeros((n, d), dtype=np.uint8)
    scale_a = np.empty(n, dtype=np.float64)
    zero_a = np.empty(n, dtype=np.float64)
    cdef unsigned char[:, ::1] codes = codes_a
    cdef double[::1] scale = scale_a
    cdef double[::1] zero = zero_a
    for i in range(n):
        lo = x[i, 0]
        hi = x[i, 0]
        for c in range(1, d):
            if x[i, c] < lo:
                lo = x[i, c]
            if x[i, c] > hi:
                hi = x[i, c]
        s = (hi - lo) / 15.0
        scale[i] = s
        zero[i] = lo
        if s > 0:
            for c in range(d):
                q = rint((x[i, c] - lo) / s)
                if q < 0:
                    q = 0
                elif q > 15:
                    q = 15
                codes[i, c] = <unsigned char>q
    return codes_a, scale_a, zero_a


def int4_logits(const double[:, ::1] qp, const unsigned char[:, ::1] codes,
                const double[::1] scale, const double[::1] zero,
                const long long[::1] rows):
    cdef Py_ssize_t G = qp.shape[0], dc = qp.shape[1], r = rows.shape[0]
    cdef Py_ssize_t h, j, c, row
    cdef double acc, a0, a1, a2, a3
    cdef const unsigned char *code
    cdef const double *qh
    out_a = np.empty((G, r), dtype=np.float64)
    cdef double[:, ::1] out = out_a
    qsum_a = np.zeros(G, dtype=np.float64)
    cdef double[::1] qsum = qsum_a
    # one code row widened to double, reused by every head
    buf_a = np.empty(max(dc, 1), dtype=np.float64)
    cdef double[::1] buf = buf_a
    cdef double *b = &buf[0]
    if dc == 0:
        out_a[...] = 0.0
        return out_a
    for h in range(G):
        for c in range(dc):
            qsum[h] += qp[h, c]
    for j in range(r):
        row = rows[j]
        code = &codes[row, 0]
        for c in range(dc):
            b[c] = code[c]
        for h in range(G):
            qh = &qp[h, 0]
            # four partial sums so the multiply-adds can pipeline
            a0 = a1 = a2 = a3 = 0.0
            c = 0
            while c + 4 <= dc:
                a0 += qh[c] * b[c]
                a1 += qh[c + 1] * b[c + 1]
                a2 += qh[c + 2] * b[c + 2]
                a3 += qh[c + 3] * b[c + 3]
                c += 4
            while c < dc:
                a0 += qh[c] * b[c]
                c += 1
            acc = (a0 + a1) + (a2 + a3)
            out[h, j] = zero[row] * qsum[h] + scale[row] * acc
    return out_a


cdef double _kth_largest(double *a, Py_ssize_t n, Py_ssize_t k) nogil:
    # Hoare quickselect in place; returns the k-th largest (k is 1-based).
    cdef Py_ssize_t lo = 0, hi = n - 1, i, j, target = k - 1
    cdef double pivot, t
    while lo < hi:
        pivot = a[lo + (hi - lo) // 2]
        i = lo
        j = hi
        while i <= j:
            while a[i] > pivot:
                i += 1
            while a[j] < pivot:
                j -= 1
            if i <= j:
                t = a[i]; a[i] = a[j]; a[j] = t
                i += 1
                j -= 1
        if target <= j:
            hi = j
        elif target >= i:
            lo = i
        else:
            return a[target]
    return a[target]


def top_k(const double[::1] scores, Py_ssize_t k):
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t i, above = 0, ties, taken = 0
    cdef double thr
    if k > n:
        k = n
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    work_a = np.array(scores, dtype=np.float64)
    cdef double[::1] work = work_a
    thr = _kth_largest(&work[0], n, k)
    for i in range(n):
        if scores[i] > thr:
            above += 1
    # everything above the threshold, then the lowest-index ties
    ties = k - above
    idx_a = np.empty(k, dtype=np.int64)
    cdef long long[::1] idx = idx_a
    for i in range(n):
        if scores[i] > thr or (scores[i] == thr and ties > 0):
            if scores[i] == thr:
                ties -= 1
            idx[taken] = i
            taken += 1
    vals_a = np.asarray(scores)[idx_a]
    order = np.lexsort((idx_a, -vals_a))
    return idx_a[order]
