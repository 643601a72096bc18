"""End-to-end evaluation: drive the engine over a workload and score it."""

import math
from dataclasses import dataclass, field

import numpy as np

from tlsattn.attention import full_attention, oracle_weights, rank_desc
from tlsattn.calibfile import read_calibration
from tlsattn.errors import ConfigurationError
from tlsattn.harness.config import RunConfig
from tlsattn.harness.workload import Workload, calibration_set, generate_workload
from tlsattn.offload import METHODS, OffloadEngine, block_bytes
from tlsattn.tokens import calibrate_channels

SCHEMA_VERSION = "tlsattn.eval/1"


@dataclass
class EvalReport:
    method: str
    config: dict
    records: list  # one dict per decode step
    aggregate: dict
    steps: list = field(default_factory=list, repr=False)  # StepReport objects


def channel_profiles(cfg: RunConfig):
    """One channel profile per KV group, from a TLSCAL1 file or a held-out draw."""
    spec = cfg.workload
    layout = spec.layout()
    if cfg.calibration:
        dim, groups = read_calibration(cfg.calibration)
        if dim != spec.head_dim:
            raise ConfigurationError(f"calibration width {dim} != head_dim {spec.head_dim}")
        if sorted(groups) != list(range(layout.num_kv_heads)):
            raise ConfigurationError("calibration file groups do not match the KV heads")
        data = [(groups[g].query_list(), groups[g].key_matrix()) for g in sorted(groups)]
    else:
        data = calibration_set(spec)
    return [calibrate_channels(q, k, cfg.d_c) for q, k in data]


def _recall(selected, reference, k):
    if k == 0:
        return None
    return len(np.intersect1d(selected, reference[:k], assume_unique=True)) / k


def step_metrics(step, workload: Workload, t, kv, engine):
    """Error and recall of one step against the exact oracle."""
    layout = workload.layout
    query = workload.queries[t]
    exact = full_attention(query, kv, layout)
    weights = oracle_weights(query, kv, layout)
    k_t = min(engine.top_tokens, kv.n)
    B = engine.blocks.block_size
    m = -(-kv.n // B)
    tok, blk, pl = [], [], []
    planted = workload.planted[t] if t < len(workload.planted) else None
    for g in range(layout.num_kv_heads):
        ids = step.token_selection[g].token_ids
        ranking = rank_desc(weights[g])
        tok.append(_recall(ids, ranking, k_t))
        if engine.method == "full":
            blk.append(1.0)
        elif step.selected_blocks:
            mass = np.bincount(np.arange(kv.n) // B, weights=weights[g], minlength=m)
            kb = min(engine.blocks.top_blocks, m)
            blk.append(_recall(np.array(step.selected_blocks[g].block_ids), rank_desc(mass), kb))
        if planted is not None and len(planted):
            hits = len(np.intersect1d(ids, planted))
            pl.append(hits / min(len(planted), len(ids)))
    return {
        "output_error": float(np.linalg.norm(step.output - exact)),
        "token_recall": float(np.mean(tok)),
        "block_recall": float(np.mean(blk)) if blk else None,
        "planted_recall": float(np.mean(pl)) if pl else None,
    }


def step_record(step, metrics, method):
    rec = {
        "record": "step",
        "method": method,
        "step": step.step,
        "selected_blocks": [list(s.block_ids) for s in step.selected_blocks],
        "guiding_blocks": [list(s.block_ids) for s in step.guiding_blocks],
        "tokens": [s.token_ids.tolist() for s in step.token_selection],
        "transfer_blocks": [sorted(p.fetch_blocks) for p in step.transfers],
        "transfer_bytes": int(step.transfer_bytes),
        "compute_time": step.latency.compute_time,
        "transfer_time": step.latency.transfer_time,
        "latency_overlap": step.latency.overlapped,
        "latency_serial": step.latency.serial,
        "latency": step.latency.latency,
        "coarse_ops": step.ops.coarse,
        "fine_ops": step.ops.fine,
        "attn_ops": step.ops.attn,
    }
    rec.update(metrics)
    return rec


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return math.fsum(xs) / len(xs) if xs else None


def _pct(xs, q):
    return float(np.percentile(np.asarray(xs, dtype=np.float64), q)) if xs else None


def aggregate_records(records, method, config, top_blocks, bytes_per_block):
    """Aggregate object; a pure function of the step records and run settings."""
    errs = [r["output_error"] for r in records]
    fetched = [len(b) for r in records for b in r["transfer_blocks"]]
    groups = max((len(r["tokens"]) for r in records), default=0)
    total_bytes = sum(r["transfer_bytes"] for r in records)
    uses_blocks = method in ("two-level", "block-only")
    baseline = len(records) * groups * top_blocks * bytes_per_block
    lat = math.fsum(r["latency"] for r in records)
    return {
        "record": "aggregate",
        "schema": SCHEMA_VERSION,
        "method": method,
        "config": config,
        "steps": len(records),
        "output_error_mean": _mean(errs),
        "output_error_p50": _pct(errs, 50),
        "output_error_p95": _pct(errs, 95),
        "output_error_max": max(errs) if errs else None,
        "token_recall_mean": _mean([r["token_recall"] for r in records]),
        "block_recall_mean": _mean([r["block_recall"] for r in records]),
        "planted_recall_mean": _mean([r["planted_recall"] for r in records]),
        "transfer_bytes_total": total_bytes,
        "transfer_blocks_mean": _mean(fetched) if uses_blocks else None,
        "transfer_fraction_mean": (_mean(fetched) / top_blocks) if uses_blocks and fetched else None,
        "transfer_reduction_ratio": (total_bytes / baseline) if uses_blocks and baseline else None,
        "latency_total": lat,
        "latency_overlap_total": math.fsum(r["latency_overlap"] for r in records),
        "latency_serial_total": math.fsum(r["latency_serial"] for r in records),
        "compute_time_total": math.fsum(r["compute_time"] for r in records),
        "throughput": len(records) / lat if lat > 0 else None,
        "coarse_ops_total": sum(r["coarse_ops"] for r in records),
        "fine_ops_total": sum(r["fine_ops"] for r in records),
        "attn_ops_total": sum(r["attn_ops"] for r in records),
    }


def make_engine(cfg: RunConfig, method="two-level", profiles=None):
    layout = cfg.workload.layout()
    if profiles is None and method in ("two-level", "token-only"):
        profiles = channel_profiles(cfg)
    return OffloadEngine(layout, cfg.blocks, cfg.top_tokens, profiles, cfg.cost,
                         mode=cfg.mode, method=method, d_scale=cfg.d_scale)


def run_eval(cfg: RunConfig, method="two-level", workload=None, profiles=None) -> EvalReport:
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    workload = workload or generate_workload(cfg.workload)
    engine = make_engine(cfg, method, profiles)
    kv = workload.fresh_cache()
    engine.prefill_init(kv, workload.prefill_query)
    steps, records = [], []
    for t in range(cfg.workload.decode_steps):
        rep = engine.decode_step(workload.queries[t], workload.new_keys[t], workload.new_values[t])
        metrics = step_metrics(rep, workload, t, kv, engine)
        steps.append(rep)
        records.append(step_record(rep, metrics, method))
    conf = cfg.to_dict()
    agg = aggregate_records(records, method, conf, engine.blocks.top_blocks,
                            block_bytes(engine.blocks, cfg.workload.head_dim, cfg.cost))
    return EvalReport(method, conf, records, agg, steps)


def compare_methods(cfg: RunConfig):
    """Full oracle, block-only, token-only and two-level on one workload.

    Block-only gets ``top_tokens // block_size`` blocks so every method
    attends the same number of tokens per group.
    """
    workload = generate_workload(cfg.workload)
    profiles = channel_profiles(cfg)
    return {m: run_eval(cfg, m, workload, profiles) for m in ("full", "block-only", "token-only", "two-level")}


def config_from_record(conf: dict) -> RunConfig:
    from tlsattn.harness.config import config_from_dict

    return config_from_dict(conf, "<record>")


def recompute_aggregate(steps, aggregate):
    """Rebuild an aggregate object from parsed step records."""
    cfg = config_from_record(aggregate["config"])
    method = aggregate["method"]
    blocks = cfg.blocks
    if method == "block-only":
        blocks = type(blocks)(blocks.block_size, max(1, cfg.top_tokens // blocks.block_size))
    return aggregate_records(steps, method, aggregate["config"], blocks.top_blocks,
                             block_bytes(blocks, cfg.workload.head_dim, cfg.cost))
