"""Synthetic decode workloads with planted ground truth.

Random numbers come from numpy's PCG64 bit generator. Every tensor role
draws from its own stream, ``SeedSequence(seed, spawn_key=(tag, role))``,
where ``tag`` separates the evaluation draw (0) from the held-out
calibration draw (1). The structural draw (channel layout, directions,
planted positions) uses ``spawn_key=(role,)`` and is shared by both tags so
calibration sees the same channel statistics as evaluation.

Patterns
--------
peaked
    Keys are ``relevance * u + noise`` for a per-group direction ``u`` on the
    heavy channels; queries point along ``u``. ``planted`` needle tokens get
    a relevance far above the background.
scatter
    Same as peaked, but each needle sits in a distinct block.
drifting
    Keys carry a periodic position code; the query encodes a centre that
    advances by ``epsilon * region_blocks * block_size`` tokens per step, so
    the attended region slides at rate ``epsilon`` of the region per step.
alternating
    Two disjoint sets of ``region_blocks`` blocks with orthogonal key
    directions; queries alternate between them every step.
uniform-noise
    Isotropic Gaussian keys and queries; nothing planted.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from tlsattn.attention import HeadLayout, KvCache
from tlsattn.errors import ConfigurationError

PATTERNS = ("peaked", "scatter", "drifting", "alternating", "uniform-noise")

ROLE_STRUCTURE, ROLE_KEYS, ROLE_VALUES, ROLE_QUERIES, ROLE_DECODE = range(5)
TAG_EVAL, TAG_CALIB = 0, 1

# logit scales (logits are q.k / sqrt(d))
BACKGROUND_LOGIT_STD = 1.5
NEEDLE_RELEVANCE = 6.0
DRIFT_PEAK_LOGIT = 6.0
CLUSTER_LOGIT = 6.0
LIGHT_CHANNEL_SCALE = 0.1


@dataclass(frozen=True)
class WorkloadSpec:
    n: int = 8192
    decode_steps: int = 8
    head_dim: int = 128
    query_heads: int = 8
    group_size: int = 4
    variant: str = "gqa"
    pattern: str = "peaked"
    seed: int = 0
    epsilon: float = 0.05
    planted: int = 32
    block_size: int = 64
    region_blocks: int = 32

    def validate(self):
        if self.pattern not in PATTERNS:
            raise ConfigurationError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.n < 1 or self.decode_steps < 0 or self.head_dim < 2:
            raise ConfigurationError("n >= 1, decode_steps >= 0 and head_dim >= 2 required")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError("epsilon must lie in [0, 1]")
        if self.block_size < 1 or self.region_blocks < 1:
            raise ConfigurationError("block_size and region_blocks must be >= 1")
        if self.pattern in ("peaked", "scatter") and not 0 <= self.planted <= self.n:
            raise ConfigurationError("planted count must lie in [0, n]")
        if self.pattern == "scatter" and self.planted > self.n // self.block_size:
            raise ConfigurationError("scatter needs one full block per planted token")
        if self.pattern == "alternating" and 2 * self.region_blocks > self.n // self.block_size:
            raise ConfigurationError("alternating needs 2 * region_blocks full blocks")
        self.layout()
        return self

    def layout(self) -> HeadLayout:
        return HeadLayout(self.query_heads, self.group_size, self.head_dim, self.variant)


@dataclass
class Workload:
    spec: WorkloadSpec
    layout: HeadLayout
    keys: np.ndarray  # (kv_heads, n, d)
    values: np.ndarray
    prefill_query: np.ndarray  # (H, d)
    queries: np.ndarray  # (T, H, d)
    new_keys: np.ndarray  # (T, kv_heads, d)
    new_values: np.ndarray
    planted: list = field(default_factory=list)  # per step: token ids, or None

    def fresh_cache(self) -> KvCache:
        return KvCache(self.keys, self.values)


def _rng(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def num_heavy_channels(d):
    return min(max(16, d // 8), d // 2)


class _Builder:
    def __init__(self, spec: WorkloadSpec, tag: int):
        self.spec = spec
        self.layout = spec.layout()
        s = spec.seed
        self.structure = _rng(s, ROLE_STRUCTURE)
        self.r_keys = _rng(s, tag, ROLE_KEYS)
        self.r_values = _rng(s, tag, ROLE_VALUES)
        self.r_queries = _rng(s, tag, ROLE_QUERIES)
        self.r_decode = _rng(s, tag, ROLE_DECODE)
        d = spec.head_dim
        self.heavy = np.sort(self.structure.choice(d, num_heavy_channels(d), replace=False))
        self.scale = np.full(d, LIGHT_CHANNEL_SCALE)
        self.scale[self.heavy] = 1.0

    def noise(self, rng, shape, sigma=1.0):
        return sigma * rng.standard_normal(shape) * self.scale

    def unit_on(self, channels):
        v = np.zeros(self.spec.head_dim)
        v[channels] = self.structure.standard_normal(len(channels))
        return v / np.linalg.norm(v)

    def build(self) -> Workload:
        sp, lay = self.spec, self.layout
        H, G, d, T, n = lay.num_query_heads, lay.num_kv_heads, sp.head_dim, sp.decode_steps, sp.n
        pattern = {
            "peaked": self._relevance,
            "scatter": self._relevance,
            "drifting": self._drifting,
            "alternating": self._alternating,
            "uniform-noise": self._uniform,
        }[sp.pattern]
        keys, prefill_q, queries, new_keys, planted = pattern(n, d, T, G)
        values = self.r_values.standard_normal((G, n, d))
        new_values = self.r_decode.standard_normal((T, G, d))
        return Workload(sp, lay, keys, values, prefill_q.reshape(H, d), queries.reshape(T, H, d),
                        new_keys, new_values, planted)

    # -- patterns ---------------------------------------------------------

    def _planted_positions(self):
        sp = self.spec
        if sp.planted == 0:
            return np.empty(0, dtype=np.int64)
        if sp.pattern == "scatter":
            blocks = np.sort(self.structure.choice(sp.n // sp.block_size, sp.planted, replace=False))
            offsets = self.structure.integers(0, sp.block_size, sp.planted)
            return blocks * sp.block_size + offsets
        return np.sort(self.structure.choice(sp.n, sp.planted, replace=False))

    def _relevance(self, n, d, T, G):
        sp, lay = self.spec, self.layout
        h = len(self.heavy)
        amp = 3.0 * math.sqrt(h)
        qamp = BACKGROUND_LOGIT_STD * math.sqrt(d) / amp
        dirs = [self.unit_on(self.heavy) for _ in range(G)]
        planted = self._planted_positions()
        head_offsets = self.noise(self.structure, (G, lay.group_size, d), 0.3 * qamp)
        keys = np.empty((G, n, d))
        queries = np.empty((T, G, lay.group_size, d))
        new_keys = np.empty((T, G, d))
        for g, u in enumerate(dirs):
            rel = self.r_keys.standard_normal(n)
            rel[planted] = NEEDLE_RELEVANCE
            keys[g] = rel[:, None] * amp * u + self.noise(self.r_keys, (n, d))
            base = qamp * u + head_offsets[g]
            queries[:, g] = base + self.noise(self.r_queries, (T, lay.group_size, d), 0.1 * qamp)
            new_keys[:, g] = (self.r_decode.standard_normal(T)[:, None] * amp * u
                              + self.noise(self.r_decode, (T, d)))
        prefill_q = np.stack([qamp * u + head_offsets[g] for g, u in enumerate(dirs)])
        return keys, prefill_q, queries, new_keys, [planted] * T

    def _drifting(self, n, d, T, G):
        sp, lay = self.spec, self.layout
        region = sp.region_blocks * sp.block_size
        sigma = region / 4.0
        nfreq = min(len(self.heavy) // 2, max(1, math.ceil(3.0 * n / (2 * math.pi * sigma))))
        freqs = np.arange(1, nfreq + 1)
        coef = np.exp(-((2 * math.pi * freqs * sigma / n) ** 2) / 4.0)
        code_ch = self.heavy[: 2 * nfreq]
        amp = 3.0
        qamp = DRIFT_PEAK_LOGIT * math.sqrt(d) / (amp * float((coef**2).sum()))

        def code(pos):
            pos = np.atleast_1d(np.asarray(pos, dtype=np.float64))
            ang = 2 * math.pi * np.outer(pos, freqs) / n
            out = np.zeros((len(pos), d))
            out[:, code_ch[0::2]] = coef * np.cos(ang)
            out[:, code_ch[1::2]] = coef * np.sin(ang)
            return out

        c0 = float(self.structure.uniform(0, n))
        step = sp.epsilon * region
        centres = (c0 + step * np.arange(1, T + 1)) % n
        pos_code = code(np.arange(n))
        head_offsets = self.noise(self.structure, (G, lay.group_size, d), 0.05 * qamp)
        keys = np.empty((G, n, d))
        queries = np.empty((T, G, lay.group_size, d))
        new_keys = np.empty((T, G, d))
        prefill_q = np.empty((G, lay.group_size, d))
        for g in range(G):
            keys[g] = amp * pos_code + self.noise(self.r_keys, (n, d), 0.2)
            new_keys[:, g] = self.noise(self.r_decode, (T, d), 0.2)
            prefill_q[g] = qamp * code(c0)[0] + head_offsets[g]
            queries[:, g] = qamp * code(centres)[:, None, :] + head_offsets[g]
        planted = []
        half = region / 2.0
        pos = np.arange(n)
        for c in centres:
            dist = np.abs((pos - c + n / 2) % n - n / 2)
            planted.append(np.flatnonzero(dist < half))
        return keys, prefill_q, queries, new_keys, planted

    def _alternating(self, n, d, T, G):
        sp, lay = self.spec, self.layout
        full = n // sp.block_size
        chosen = self.structure.choice(full, 2 * sp.region_blocks, replace=False)
        sets = [np.sort(chosen[: sp.region_blocks]), np.sort(chosen[sp.region_blocks:])]
        half = len(self.heavy) // 2
        dirs = [self.unit_on(self.heavy[:half]), self.unit_on(self.heavy[half:])]
        amp = 3.0 * math.sqrt(len(self.heavy))
        qamp = CLUSTER_LOGIT * math.sqrt(d) / amp
        keys = np.empty((G, n, d))
        for g in range(G):
            keys[g] = self.noise(self.r_keys, (n, d), 0.2)
            for s, u in zip(sets, dirs):
                for b in s:
                    sl = slice(b * sp.block_size, (b + 1) * sp.block_size)
                    keys[g, sl] += amp * u
        new_keys = self.noise(self.r_decode, (T, G, d), 0.2)
        which = np.array([1 if t % 2 == 0 else 0 for t in range(T)], dtype=int)
        queries = np.empty((T, G, lay.group_size, d))
        for t in range(T):
            queries[t] = qamp * dirs[which[t]] + self.noise(self.r_queries, (G, lay.group_size, d), 0.05 * qamp)
        prefill_q = qamp * dirs[0] + self.noise(self.r_queries, (G, lay.group_size, d), 0.05 * qamp)
        tokens = [np.concatenate([np.arange(b * sp.block_size, (b + 1) * sp.block_size) for b in s])
                  for s in sets]
        planted = [tokens[which[t]] for t in range(T)]
        return keys, prefill_q, queries, new_keys, planted

    def _uniform(self, n, d, T, G):
        lay = self.layout
        keys = self.r_keys.standard_normal((G, n, d))
        queries = self.r_queries.standard_normal((T, G, lay.group_size, d))
        prefill_q = self.r_queries.standard_normal((G, lay.group_size, d))
        new_keys = self.r_decode.standard_normal((T, G, d))
        return keys, prefill_q, queries, new_keys, [None] * T


def generate_workload(spec: WorkloadSpec) -> Workload:
    """Deterministic tensors for ``spec``; the seed fixes every draw."""
    return _Builder(spec.validate(), TAG_EVAL).build()


def calibration_set(spec: WorkloadSpec, min_queries: int = 16):
    """Held-out calibration draw: per KV group, (per-head query rows, key rows)."""
    steps = max(min_queries, spec.decode_steps)
    w = _Builder(replace(spec, decode_steps=steps).validate(), TAG_CALIB).build()
    lay = w.layout
    groups = []
    for g in range(lay.num_kv_heads):
        sl = lay.group_slice(g)
        rows = np.concatenate([w.prefill_query[None, sl], w.queries[:, sl]], axis=0)
        queries = [rows[:, h] for h in range(lay.group_size)]
        groups.append((queries, w.keys[g]))
    return groups
