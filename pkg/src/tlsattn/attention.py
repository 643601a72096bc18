"""Decode attention over a KV cache: the dense oracle and the sparse path."""

import math
from dataclasses import dataclass

import numpy as np

from tlsattn import counters
from tlsattn.errors import ConfigurationError, DimensionError, InputError
from tlsattn.tokens import TokenSelection

VARIANTS = ("mha", "gqa", "mqa")


@dataclass(frozen=True)
class HeadLayout:
    """How query heads map onto KV heads.

    ``mqa`` also stands in for MLA at decode time, where the latent cache
    behaves as one KV head shared by every query head.
    """

    num_query_heads: int
    group_size: int
    head_dim: int
    variant: str = "gqa"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if min(self.num_query_heads, self.group_size, self.head_dim) < 1:
            raise ConfigurationError("head counts and head_dim must be positive")
        if self.num_query_heads % self.group_size:
            raise ConfigurationError("num_query_heads must be divisible by group_size")
        if self.variant == "mha" and self.group_size != 1:
            raise ConfigurationError("mha layout requires group_size 1")
        if self.variant == "mqa" and self.group_size != self.num_query_heads:
            raise ConfigurationError("mqa layout shares one KV head across all query heads")

    @property
    def num_kv_heads(self):
        return self.num_query_heads // self.group_size

    def group_slice(self, g):
        return slice(g * self.group_size, (g + 1) * self.group_size)

    @classmethod
    def mha(cls, heads, d):
        return cls(heads, 1, d, "mha")

    @classmethod
    def gqa(cls, heads, group_size, d):
        return cls(heads, group_size, d, "gqa")

    @classmethod
    def mqa(cls, heads, d):
        return cls(heads, heads, d, "mqa")


class KvCache:
    """Keys and values for every KV head, shape (kv_heads, n, d), append-only."""

    def __init__(self, keys, values):
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if keys.ndim == 2:
            keys, values = keys[None], values[None]
        if keys.ndim != 3 or keys.shape != values.shape:
            raise DimensionError(f"keys {keys.shape} and values {values.shape} must match (h, n, d)")
        if not (np.isfinite(keys).all() and np.isfinite(values).all()):
            raise ValueError("KV cache contains NaN or Inf")
        self._k = np.array(keys)
        self._v = np.array(values)
        self.n = keys.shape[1]

    @property
    def num_kv_heads(self):
        return self._k.shape[0]

    @property
    def head_dim(self):
        return self._k.shape[2]

    def keys(self, g):
        return self._k[g, : self.n]

    def values(self, g):
        return self._v[g, : self.n]

    def append(self, key, value):
        """Append one token: ``key``/``value`` have shape (kv_heads, d)."""
        key = np.asarray(key, dtype=np.float64).reshape(self.num_kv_heads, self.head_dim)
        value = np.asarray(value, dtype=np.float64).reshape(self.num_kv_heads, self.head_dim)
        if self.n == self._k.shape[1]:
            grow = max(64, self.n // 4)
            pad = np.zeros((self.num_kv_heads, grow, self.head_dim))
            self._k = np.concatenate([self._k, pad], axis=1)
            self._v = np.concatenate([self._v, pad], axis=1)
        self._k[:, self.n] = key
        self._v[:, self.n] = value
        self.n += 1


def _check(query, kv, layout):
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (layout.num_query_heads, layout.head_dim):
        raise DimensionError(f"query shape {q.shape}, layout wants "
                             f"({layout.num_query_heads}, {layout.head_dim})")
    if kv.num_kv_heads != layout.num_kv_heads or kv.head_dim != layout.head_dim:
        raise DimensionError("KV cache does not match head layout")
    if kv.n == 0:
        raise InputError("empty KV cache")
    return q


def _attend(q, keys, values):
    logits = q @ keys.T / math.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w @ values


def full_attention(query, kv: KvCache, layout: HeadLayout) -> np.ndarray:
    """Exact softmax(qK^T/sqrt(d))V for every query head, shape (H, d)."""
    q = _check(query, kv, layout)
    out = np.empty_like(q)
    for g in range(layout.num_kv_heads):
        sl = layout.group_slice(g)
        out[sl] = _attend(q[sl], kv.keys(g), kv.values(g))
    return out


def _token_ids(sel):
    return sel.token_ids if isinstance(sel, TokenSelection) else np.asarray(sel, dtype=np.int64)


def sparse_attention(query, kv: KvCache, selection, layout: HeadLayout) -> np.ndarray:
    """Attention restricted to the selected tokens of each KV group.

    ``selection`` is one entry per KV group (a TokenSelection or an index
    array); a bare selection is accepted when there is a single group.
    """
    q = _check(query, kv, layout)
    if isinstance(selection, TokenSelection) or (
        isinstance(selection, np.ndarray) and selection.ndim == 1
    ):
        selection = [selection]
    if len(selection) != layout.num_kv_heads:
        raise DimensionError(f"{len(selection)} selections for {layout.num_kv_heads} KV groups")
    out = np.empty_like(q)
    for g, sel in enumerate(selection):
        ids = _token_ids(sel)
        if ids.size == 0:
            raise InputError(f"empty token selection for group {g}")
        if ids.min() < 0 or ids.max() >= kv.n:
            raise InputError(f"token selection for group {g} out of range")
        sl = layout.group_slice(g)
        counters.record("attn", 2 * ids.size * layout.head_dim * layout.group_size)
        out[sl] = _attend(q[sl], kv.keys(g)[ids], kv.values(g)[ids])
    return out


def oracle_weights(query, kv: KvCache, layout: HeadLayout) -> np.ndarray:
    """Exact attention weights averaged over each group's heads, (groups, n)."""
    q = _check(query, kv, layout)
    w = np.empty((layout.num_kv_heads, kv.n))
    for g in range(layout.num_kv_heads):
        logits = q[layout.group_slice(g)] @ kv.keys(g).T / math.sqrt(layout.head_dim)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        w[g] = (e / e.sum(axis=1, keepdims=True)).mean(axis=0)
    return w


def rank_desc(values) -> np.ndarray:
    """Indices sorted by value descending, equal values by index ascending."""
    return np.lexsort((np.arange(len(values)), -np.asarray(values)))


def oracle_token_ranking(query, kv: KvCache, layout: HeadLayout):
    """Per KV group, all token ids ranked by true group-mean attention weight."""
    return [rank_desc(w) for w in oracle_weights(query, kv, layout)]
