"""Fine token index: channel calibration, INT4 key codes, token selection."""

import math
from dataclasses import dataclass

import numpy as np

from tlsattn import counters, kernels
from tlsattn.errors import ConfigurationError, DimensionError, InputError
from tlsattn.numerics import as_matrix, top_k

INT4_MAX = 15


@dataclass(frozen=True)
class ChannelProfile:
    """Channels kept for approximate scoring, most important first."""

    selected_channels: np.ndarray
    channel_scores: np.ndarray

    @property
    def d_c(self):
        return len(self.selected_channels)

    @property
    def dim(self):
        return len(self.channel_scores)

    @classmethod
    def identity(cls, d):
        return cls(np.arange(d, dtype=np.int64), np.ones(d))


def calibrate_channels(calib_queries, calib_keys, d_c: int) -> ChannelProfile:
    """Rank channels by the head-averaged product of peak |query| and peak |key|.

    ``calib_queries`` holds one (rows x d) matrix per query head of the group;
    maxima are taken over every row of the calibration set.
    """
    if not calib_queries:
        raise InputError("calibrate_channels: no query heads")
    keys = as_matrix(calib_keys, "calib_keys")
    if keys.shape[0] == 0:
        raise InputError("calibrate_channels: empty key set")
    d = keys.shape[1]
    if d_c > d or d_c < 1:
        raise ConfigurationError(f"d_c={d_c} not in [1, {d}]")
    key_peak = np.abs(keys).max(axis=0)
    q_peak = np.zeros(d)
    for qh in calib_queries:
        qh = as_matrix(qh, "calib_queries")
        if qh.shape[1] != d:
            raise DimensionError("calibration queries and keys differ in width")
        if qh.shape[0] == 0:
            raise InputError("calibrate_channels: empty query set")
        q_peak += np.abs(qh).max(axis=0)
    scores = q_peak / len(calib_queries) * key_peak
    chosen = top_k(scores, d_c).indices
    return ChannelProfile(selected_channels=chosen, channel_scores=scores)


class QuantizedKeyIndex:
    """Per-token asymmetric 4-bit codes of the channel-projected keys.

    Row ``j`` dequantizes to ``zero_point[j] + scale[j] * codes[j]``.
    """

    def __init__(self, codes, scale, zero_point, channels):
        self._codes = np.ascontiguousarray(codes, dtype=np.uint8)
        self._scale = np.ascontiguousarray(scale, dtype=np.float64)
        self._zero = np.ascontiguousarray(zero_point, dtype=np.float64)
        self.channels = np.asarray(channels, dtype=np.int64)
        self.n = len(scale)

    @property
    def d_c(self):
        return len(self.channels)

    @property
    def codes(self):
        return self._codes[: self.n]

    @property
    def scale(self):
        return self._scale[: self.n]

    @property
    def zero_point(self):
        return self._zero[: self.n]

    def dequantize(self, rows=None):
        if rows is None:
            rows = slice(0, self.n)
        return self.zero_point[rows, None] + self.scale[rows, None] * self.codes[rows]

    def append(self, key):
        row = np.ascontiguousarray(np.asarray(key, dtype=np.float64)[self.channels][None, :])
        codes, scale, zero = kernels.quantize_rows(row)
        if self.n == len(self._scale):
            grow = max(64, self.n)
            self._codes = np.concatenate([self._codes, np.zeros((grow, self.d_c), np.uint8)])
            self._scale = np.concatenate([self._scale, np.zeros(grow)])
            self._zero = np.concatenate([self._zero, np.zeros(grow)])
        self._codes[self.n] = codes[0]
        self._scale[self.n] = scale[0]
        self._zero[self.n] = zero[0]
        self.n += 1


def quantize_keys(keys, profile: ChannelProfile) -> QuantizedKeyIndex:
    keys = as_matrix(keys, "keys")
    if keys.shape[1] != profile.dim:
        raise DimensionError(f"keys have {keys.shape[1]} channels, profile expects {profile.dim}")
    projected = np.ascontiguousarray(keys[:, profile.selected_channels])
    codes, scale, zero = kernels.quantize_rows(projected)
    return QuantizedKeyIndex(codes, scale, zero, profile.selected_channels)


def approx_scores(queries, index: QuantizedKeyIndex, candidates, profile: ChannelProfile,
                  d_scale: float | None = None) -> np.ndarray:
    """Head-averaged softmax of compressed logits, over the candidate set only."""
    q = as_matrix(queries, "queries")
    cand = np.ascontiguousarray(candidates, dtype=np.int64)
    if cand.size == 0:
        raise InputError("approx_scores: no candidates")
    if d_scale is None:
        d_scale = math.sqrt(q.shape[1])
    if d_scale <= 0:
        raise ConfigurationError("d_scale must be positive")
    qp = np.ascontiguousarray(q[:, profile.selected_channels])
    g = qp.shape[0]
    counters.record("fine", cand.size * profile.d_c * g)
    logits = kernels.int4_logits(qp, index._codes, index._scale, index._zero, cand) / d_scale
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w.mean(axis=0)


@dataclass(frozen=True)
class TokenSelection:
    """Top tokens for one KV group at one step, ids ascending."""

    step: int
    token_ids: np.ndarray
    approx_scores: np.ndarray

    def __len__(self):
        return len(self.token_ids)


def select_tokens(scores, candidates, k_t: int, t: int) -> TokenSelection:
    cand = np.asarray(candidates, dtype=np.int64)
    res = top_k(scores, k_t)
    picked = cand[res.indices]
    order = np.argsort(picked, kind="stable")
    return TokenSelection(step=t, token_ids=picked[order], approx_scores=res.values[order])
