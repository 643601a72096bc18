"""Simulated two-tier KV cache with one-step-lag block prefetch.

The host tier keeps every block. The device tier keeps the blocks chosen by
the previous coarse selection plus the block receiving fresh decode tokens.
Transfers are not executed; the cost model turns byte counts and operation
counts into modeled latencies, with overlap realized as max(compute, transfer).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from tlsattn import counters
from tlsattn.attention import HeadLayout, KvCache, sparse_attention
from tlsattn.blocks import (
    BlockConfig,
    BlockSelection,
    block_tokens,
    build_metadata,
    score_blocks_gemm,
    select_blocks,
)
from tlsattn.counters import OpCounts
from tlsattn.errors import ConfigurationError, ConsistencyError
from tlsattn.tokens import (
    ChannelProfile,
    TokenSelection,
    approx_scores,
    quantize_keys,
    select_tokens,
)

MODES = ("staggered", "synchronous")
METHODS = ("two-level", "block-only", "token-only", "full")


@dataclass(frozen=True)
class CostModel:
    """Simulation rates. Time is in abstract units (think microseconds)."""

    host_device_bandwidth: float = 25_000.0  # bytes per time unit
    token_compute_cost: float = 0.01  # per attended token
    index_compute_cost: float = 1e-5  # per index multiply-add
    ffn_cost: float = 20.0  # fixed per step
    overlap_enabled: bool = True
    bytes_per_value: int = 2

    def __post_init__(self):
        rates = (self.host_device_bandwidth, self.token_compute_cost,
                 self.index_compute_cost, self.ffn_cost, self.bytes_per_value)
        if min(rates) <= 0:
            raise ConfigurationError("cost model rates must be positive")


@dataclass(frozen=True)
class CacheLedger:
    """Device residency for one KV group.

    ``resident_blocks`` follows the update rule exactly (it equals the last
    committed coarse selection); ``pinned_block`` is the block currently
    receiving decode tokens, which lives on device regardless.
    """

    resident_blocks: frozenset
    capacity: int
    step: int = 0
    pinned_block: int | None = None

    @property
    def device_blocks(self):
        if self.pinned_block is None:
            return self.resident_blocks
        return self.resident_blocks | {self.pinned_block}


@dataclass(frozen=True)
class TransferPlan:
    fetch_blocks: frozenset
    bytes: int


def block_bytes(cfg: BlockConfig, head_dim: int, cost: CostModel) -> int:
    """Bytes of one block of keys plus values."""
    return cfg.block_size * head_dim * cost.bytes_per_value * 2


def incremental_transfer(selection: BlockSelection, ledger: CacheLedger, bytes_per_block: int) -> TransferPlan:
    """Blocks of ``selection`` not already on device. The ledger is not touched."""
    fetch = frozenset(selection.block_ids) - ledger.device_blocks
    return TransferPlan(fetch_blocks=fetch, bytes=len(fetch) * bytes_per_block)


def commit_transfer(plan: TransferPlan, selection: BlockSelection, ledger: CacheLedger) -> CacheLedger:
    resident = frozenset(selection.block_ids)
    if not plan.fetch_blocks <= resident:
        raise ConsistencyError("transfer plan fetches blocks outside the selection")
    new = replace(ledger, resident_blocks=resident, step=ledger.step + 1)
    if len(new.device_blocks) > new.capacity:
        raise ConfigurationError(
            f"{len(new.device_blocks)} device blocks exceed capacity {new.capacity}")
    return new


@dataclass(frozen=True)
class LatencyBreakdown:
    compute_time: float
    transfer_time: float
    overlapped: float
    serial: float
    latency: float


def model_step_latency(transfer_bytes, index_ops, attended_tokens, cost: CostModel,
                       transfer_on_critical_path=False) -> LatencyBreakdown:
    """Modeled time of one decode step.

    compute = index_ops * index_compute_cost + attended_tokens * token_compute_cost
    + ffn_cost; transfer = bytes / bandwidth. With overlap the step takes
    max(compute, transfer), otherwise (or when the transfer gates the
    computation) their sum.
    """
    compute = index_ops * cost.index_compute_cost + attended_tokens * cost.token_compute_cost + cost.ffn_cost
    transfer = transfer_bytes / cost.host_device_bandwidth
    overlapped = max(compute, transfer)
    serial = compute + transfer
    if transfer_on_critical_path or not cost.overlap_enabled:
        latency = serial
    else:
        latency = overlapped
    return LatencyBreakdown(compute, transfer, overlapped, serial, latency)


def complexity_counters(n, block_size, top_blocks, top_tokens, d, d_c, group_size=1, num_groups=1) -> OpCounts:
    """Closed-form multiply-add counts for one decode step.

    Per KV group with G heads and m = ceil(n / B) blocks:

    * coarse = 2 * m * d * G        (positive and negative query GEMMs)
    * fine   = c * d_c * G          (c = min(k_b, m) * B candidate tokens)
    * attn   = 2 * min(k_t, c) * d * G   (logits plus weighted value sum)

    ``c`` assumes every candidate block is full, which holds whenever the
    selected blocks exclude a partial tail block.
    """
    if min(n, block_size, top_blocks, top_tokens, d, d_c, group_size, num_groups) < 1:
        raise ConfigurationError("complexity_counters needs positive parameters")
    m = -(-n // block_size)
    cand = min(top_blocks, m) * block_size
    coarse = 2 * m * d * group_size
    fine = cand * d_c * group_size
    attn = 2 * min(top_tokens, cand) * d * group_size
    return OpCounts(coarse * num_groups, fine * num_groups, attn * num_groups)


@dataclass
class StepReport:
    step: int
    selected_blocks: tuple  # M_t per group (empty for token-only/full)
    guiding_blocks: tuple  # selection that supplied the candidates
    token_selection: tuple  # S_t per group
    transfers: tuple  # TransferPlan per group
    latency: LatencyBreakdown
    ops: OpCounts
    output: np.ndarray = field(repr=False)

    @property
    def transfer_bytes(self):
        return sum(p.bytes for p in self.transfers)

    @property
    def modeled_compute_time(self):
        return self.latency.compute_time

    @property
    def modeled_transfer_time(self):
        return self.latency.transfer_time

    @property
    def modeled_step_latency(self):
        return self.latency.latency


class OffloadEngine:
    """Decode-time driver for one attention layer of one sequence.

    ``method`` picks the selection scheme: ``two-level`` (block filter then
    token index), ``block-only`` (attend every token of the chosen blocks),
    ``token-only`` (token index over the whole cache) or ``full``. ``mode``
    only affects two-level: ``staggered`` selects tokens from the previous
    step's blocks, ``synchronous`` from the current step's.
    """

    def __init__(self, layout: HeadLayout, blocks: BlockConfig, top_tokens: int,
                 profiles=None, cost: CostModel | None = None, mode="staggered",
                 method="two-level", capacity=None, d_scale=None):
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}")
        if method not in METHODS:
            raise ConfigurationError(f"unknown method {method!r}")
        if top_tokens < 1:
            raise ConfigurationError("token budget must be >= 1")
        if method == "block-only":
            # equal attended-token budget: k_t / B whole blocks
            blocks = BlockConfig(blocks.block_size, max(1, top_tokens // blocks.block_size))
        self.layout = layout
        self.blocks = blocks
        self.top_tokens = top_tokens
        self.cost = cost or CostModel()
        self.mode = mode
        self.method = method
        self.capacity = blocks.top_blocks + 1 if capacity is None else capacity
        if self.capacity < blocks.top_blocks:
            raise ConfigurationError("ledger capacity must be >= top_blocks")
        self.d_scale = math.sqrt(layout.head_dim) if d_scale is None else d_scale
        if profiles is None and method in ("two-level", "token-only"):
            profiles = [ChannelProfile.identity(layout.head_dim)] * layout.num_kv_heads
        self.profiles = profiles
        self.kv = None
        self.step = 0

    @property
    def uses_blocks(self):
        return self.method in ("two-level", "block-only")

    @property
    def uses_index(self):
        return self.method in ("two-level", "token-only")

    def _group_queries(self, query, g):
        return query[self.layout.group_slice(g)]

    def prefill_init(self, kv: KvCache, final_query):
        """Build indices over the prompt and seed the device cache.

        The final prompt token's query picks the first coarse selection,
        which becomes both the resident set and the guiding selection for
        the first decode step.
        """
        self.kv = kv
        final_query = np.asarray(final_query, dtype=np.float64)
        G = self.layout.num_kv_heads
        self.meta = [build_metadata(kv.keys(g), self.blocks) for g in range(G)]
        if self.uses_index:
            self.index = [quantize_keys(kv.keys(g), self.profiles[g]) for g in range(G)]
        self.ledgers = []
        self.guiding = []
        if self.uses_blocks:
            tail = (kv.n - 1) // self.blocks.block_size
            for g in range(G):
                sel = select_blocks(score_blocks_gemm(self._group_queries(final_query, g), self.meta[g]),
                                    self.blocks, -1)
                ledger = CacheLedger(frozenset(sel.block_ids), self.capacity, 0, tail)
                if len(ledger.device_blocks) > self.capacity:
                    raise ConfigurationError("prefill selection exceeds ledger capacity")
                self.ledgers.append(ledger)
                self.guiding.append(sel)
        self.step = 0
        return self.ledgers

    def _append(self, key, value):
        self.kv.append(key, value)
        for g in range(self.layout.num_kv_heads):
            k = self.kv.keys(g)[-1]
            self.meta[g].append(k)
            if self.uses_index:
                self.index[g].append(k)
        if self.uses_blocks:
            tail = (self.kv.n - 1) // self.blocks.block_size
            self.ledgers = [replace(l, pinned_block=tail) for l in self.ledgers]

    def _coarse(self, q_g, g, t):
        return select_blocks(score_blocks_gemm(q_g, self.meta[g]), self.blocks, t)

    def _fine(self, q_g, g, candidates, t):
        scores = approx_scores(q_g, self.index[g], candidates, self.profiles[g], self.d_scale)
        return select_tokens(scores, candidates, self.top_tokens, t)

    def _transfer(self, g, sel):
        plan = incremental_transfer(sel, self.ledgers[g], block_bytes(self.blocks, self.layout.head_dim, self.cost))
        self.ledgers[g] = commit_transfer(plan, sel, self.ledgers[g])
        return plan

    def decode_step(self, query, new_key, new_value) -> StepReport:
        if self.kv is None:
            raise ConfigurationError("decode_step before prefill_init")
        t = self.step
        query = np.asarray(query, dtype=np.float64)
        self._append(new_key, new_value)
        G = self.layout.num_kv_heads
        selected, guiding, tokens, plans = [], [], [], []
        critical = False
        with counters.counting() as ops:
            for g in range(G):
                q_g = self._group_queries(query, g)
                if self.method == "full":
                    ids = np.arange(self.kv.n)
                    tokens.append(TokenSelection(t, ids, np.ones(ids.size) / ids.size))
                    continue
                if self.method == "token-only":
                    tokens.append(self._fine(q_g, g, np.arange(self.kv.n), t))
                    continue
                if self.method == "block-only" or self.mode == "synchronous":
                    sel = self._coarse(q_g, g, t)
                    plans.append(self._transfer(g, sel))
                    critical = True
                    guide = sel
                else:
                    guide = self.guiding[g]
                    if not set(guide.block_ids) <= self.ledgers[g].device_blocks:
                        raise ConsistencyError(f"step {t} group {g}: guiding blocks not resident")
                    sel = None
                cand = block_tokens(guide.block_ids, self.meta[g])
                if self.method == "block-only":
                    s_t = TokenSelection(t, cand, np.ones(cand.size))
                else:
                    s_t = self._fine(q_g, g, cand, t)
                if not np.isin(s_t.token_ids, cand).all():
                    raise ConsistencyError(f"step {t} group {g}: token outside guiding blocks")
                tokens.append(s_t)
                guiding.append(guide)
                selected.append(sel)
            output = sparse_attention(query, self.kv, tokens, self.layout)
            if self.method == "two-level" and self.mode == "staggered":
                # coarse selection for the next step, prefetched under compute
                for g in range(G):
                    sel = self._coarse(self._group_queries(query, g), g, t)
                    plans.append(self._transfer(g, sel))
                    selected[g] = sel
                    self.guiding[g] = sel
        attended = sum(len(s) for s in tokens)
        moved = sum(p.bytes for p in plans)
        lat = model_step_latency(moved, ops.coarse + ops.fine, attended, self.cost, critical)
        self.step += 1
        return StepReport(
            step=t,
            selected_blocks=tuple(selected),
            guiding_blocks=tuple(guiding),
            token_selection=tuple(tokens),
            transfers=tuple(plans),
            latency=lat,
            ops=ops,
            output=output,
        )
