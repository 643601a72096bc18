"""Numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` module is unavailable, or when
``TLSATTN_PURE_PYTHON=1`` is set. Every function here has the same contract
as its compiled twin; the test suite runs both against the same oracles.
"""

import numpy as np


def quest_scores(q, kmax, kmin):
    """Per-block sum over heads and channels of max(q*kmax, q*kmin)."""
    m = kmax.shape[0]
    out = np.zeros(m, dtype=np.float64)
    for h in range(q.shape[0]):
        qh = q[h]
        out += np.maximum(kmax * qh, kmin * qh).sum(axis=1)
    return out


def block_max_min(keys, block_size):
    n, d = keys.shape
    m = -(-n // block_size)
    kmax = np.empty((m, d), dtype=np.float64)
    kmin = np.empty((m, d), dtype=np.float64)
    full = n // block_size
    if full:
        blocks = keys[: full * block_size].reshape(full, block_size, d)
        kmax[:full] = blocks.max(axis=1)
        kmin[:full] = blocks.min(axis=1)
    if m > full:
        tail = keys[full * block_size :]
        kmax[full] = tail.max(axis=0)
        kmin[full] = tail.min(axis=0)
    return kmax, kmin


def quantize_rows(x):
    lo = x.min(axis=1)
    hi = x.max(axis=1)
    scale = (hi - lo) / 15.0
    codes = np.zeros(x.shape, dtype=np.uint8)
    nz = scale > 0
    if nz.any():
        q = np.rint((x[nz] - lo[nz, None]) / scale[nz, None])
        codes[nz] = np.clip(q, 0, 15).astype(np.uint8)
    return codes, scale, lo


def int4_logits(qp, codes, scale, zero, rows):
    """Logits of projected queries against dequantized rows ``rows``.

    Returns a (G, len(rows)) array equal to qp @ (zero + scale * codes).T.
    """
    c = codes[rows].astype(np.float64)
    dot = qp @ c.T
    qsum = qp.sum(axis=1)
    return zero[rows][None, :] * qsum[:, None] + scale[rows][None, :] * dot


def top_k(scores, k):
    """Indices of the k largest scores, ties to the lower index, best first."""
    n = scores.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k < n:
        # threshold value of the k-th best; everything strictly above is in
        thr = np.partition(scores, n - k)[n - k]
        above = np.flatnonzero(scores > thr)
        ties = np.flatnonzero(scores == thr)[: k - above.size]
        cand = np.concatenate([above, ties])
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order].astype(np.int64)
