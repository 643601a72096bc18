"""Coarse block index: per-block key bounds, block scoring and selection."""

from dataclasses import dataclass

import numpy as np

from tlsattn import counters, kernels
from tlsattn.errors import ConfigurationError, DimensionError
from tlsattn.numerics import as_matrix, top_k


@dataclass(frozen=True)
class BlockConfig:
    block_size: int = 64
    top_blocks: int = 128

    def __post_init__(self):
        if self.block_size < 1 or self.top_blocks < 1:
            raise ConfigurationError("block_size and top_blocks must be >= 1")


class BlockMetadata:
    """Channelwise max/min of the keys in each block of one KV head.

    Blocks cover ``[0, n)`` in runs of ``block_size``; the last block may be
    shorter. :meth:`append` keeps the bounds current as decode tokens arrive.
    """

    def __init__(self, k_max, k_min, n, block_size):
        self._kmax = np.array(k_max, dtype=np.float64)
        self._kmin = np.array(k_min, dtype=np.float64)
        self.n = int(n)
        self.block_size = int(block_size)
        self.num_blocks = len(k_max)

    @property
    def dim(self):
        return self._kmax.shape[1]

    @property
    def k_max(self):
        return self._kmax[: self.num_blocks]

    @property
    def k_min(self):
        return self._kmin[: self.num_blocks]

    def token_range(self, block_id):
        start = block_id * self.block_size
        return start, min(start + self.block_size, self.n)

    @property
    def block_token_ranges(self):
        return [self.token_range(i) for i in range(self.num_blocks)]

    def append(self, key):
        key = np.asarray(key, dtype=np.float64)
        if key.shape != (self.dim,):
            raise DimensionError(f"append: key shape {key.shape}, expected ({self.dim},)")
        if self.n % self.block_size == 0:
            if self.num_blocks == len(self._kmax):
                grow = max(16, self.num_blocks)
                pad = np.zeros((grow, self.dim))
                self._kmax = np.concatenate([self._kmax, pad])
                self._kmin = np.concatenate([self._kmin, pad])
            self._kmax[self.num_blocks] = key
            self._kmin[self.num_blocks] = key
            self.num_blocks += 1
        else:
            last = self.num_blocks - 1
            np.maximum(self._kmax[last], key, out=self._kmax[last])
            np.minimum(self._kmin[last], key, out=self._kmin[last])
        self.n += 1


def build_metadata(keys, cfg: BlockConfig) -> BlockMetadata:
    keys = as_matrix(keys, "keys")
    if keys.shape[0] == 0:
        raise DimensionError("build_metadata: empty keys")
    kmax, kmin = kernels.block_max_min(keys, cfg.block_size)
    return BlockMetadata(kmax, kmin, keys.shape[0], cfg.block_size)


def _check_queries(queries, meta):
    q = as_matrix(queries, "queries")
    if q.shape[1] != meta.dim:
        raise DimensionError(f"queries have {q.shape[1]} channels, metadata has {meta.dim}")
    return q


def score_blocks_direct(queries, meta: BlockMetadata) -> np.ndarray:
    """Block scores from the elementwise max(q*k_max, q*k_min) definition."""
    q = _check_queries(queries, meta)
    return kernels.quest_scores(q, np.ascontiguousarray(meta.k_max), np.ascontiguousarray(meta.k_min))


def score_blocks_gemm(queries, meta: BlockMetadata) -> np.ndarray:
    """Same scores as :func:`score_blocks_direct`, as two matrix products.

    Splitting each query into its positive and negative parts turns the
    per-channel max into ``q+ . k_max + q- . k_min``, valid because
    ``k_min <= k_max`` channelwise.
    """
    q = _check_queries(queries, meta)
    q_pos = np.maximum(q, 0.0)
    q_neg = np.minimum(q, 0.0)
    g, d = q.shape
    counters.record("coarse", 2 * g * d * meta.num_blocks)
    s = q_pos @ meta.k_max.T + q_neg @ meta.k_min.T
    return s.sum(axis=0)


@dataclass(frozen=True)
class BlockSelection:
    """Top blocks for one KV group at one step, ids ascending."""

    step: int
    block_ids: tuple
    scores: tuple

    def __contains__(self, block_id):
        return block_id in self.block_ids

    def __len__(self):
        return len(self.block_ids)


def select_blocks(scores, cfg: BlockConfig, t: int) -> BlockSelection:
    res = top_k(scores, cfg.top_blocks)
    order = np.argsort(res.indices, kind="stable")
    return BlockSelection(
        step=t,
        block_ids=tuple(int(i) for i in res.indices[order]),
        scores=tuple(float(v) for v in res.values[order]),
    )


def block_tokens(selection_ids, meta: BlockMetadata) -> np.ndarray:
    """Token ids covered by the given blocks, ascending."""
    parts = [np.arange(*meta.token_range(b)) for b in sorted(selection_ids)]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts).astype(np.int64)
