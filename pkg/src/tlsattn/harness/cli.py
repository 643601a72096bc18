"""Command-line entry point: calibrate, run, compare, replay."""

import argparse
import filecmp
import json
import os
import sys
import tempfile
from dataclasses import replace

from tlsattn.calibfile import read_calibration, write_calibration
from tlsattn.errors import ConfigurationError, InputError
from tlsattn.harness.config import RunConfig, load_config
from tlsattn.harness.evaluate import (
    channel_profiles,
    compare_methods,
    config_from_record,
    run_eval,
)
from tlsattn.harness.report import emit_report, read_records, summary_table
from tlsattn.harness.workload import calibration_set
from tlsattn.kernels import BACKEND
from tlsattn.tokens import calibrate_channels

PROFILE_SCHEMA = "tlsattn.profile/1"


def _on_off(value):
    return {"on": True, "off": False}[value]


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overlap = None if args.overlap is None else _on_off(args.overlap)
    return cfg.with_overrides(seed=args.seed, overlap=overlap, mode=args.mode)


def cmd_calibrate(args):
    os.makedirs(args.out, exist_ok=True)
    if args.input:
        _, groups = read_calibration(args.input)
        cfg = _config(args) if args.config else None
        d_c = args.channels or (cfg.d_c if cfg else 32)
        profiles = [calibrate_channels(groups[g].query_list(), groups[g].key_matrix(), d_c)
                    for g in sorted(groups)]
    else:
        cfg = _config(args)
        path = os.path.join(args.out, "calibration.tlscal")
        write_calibration(path, calibration_set(cfg.workload))
        print(f"wrote {path}")
        cfg = replace(cfg, calibration=path, channels=args.channels or cfg.channels)
        profiles = channel_profiles(cfg)
    out = {
        "schema": PROFILE_SCHEMA,
        "groups": [
            {"channels": p.selected_channels.tolist(), "scores": p.channel_scores.tolist()}
            for p in profiles
        ],
    }
    ppath = os.path.join(args.out, "profile.json")
    with open(ppath, "w") as fh:
        json.dump(out, fh, indent=1)
        fh.write("\n")
    print(f"wrote {ppath}")
    return 0


def cmd_run(args):
    cfg = _config(args)
    report = run_eval(cfg)
    written = emit_report(report, args.out, args.format)
    if args.format == "summary":
        print(summary_table({report.method: report.aggregate}), end="")
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_compare(args):
    cfg = _config(args)
    reports = compare_methods(cfg)
    for method, report in reports.items():
        emit_report(report, os.path.join(args.out, method), args.format)
    table = summary_table({m: r.aggregate for m, r in reports.items()})
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def cmd_replay(args):
    trace = args.trace
    _, aggregate = read_records(trace)
    cfg = config_from_record(aggregate["config"])
    method = aggregate["method"]
    with tempfile.TemporaryDirectory() as tmp:
        out = args.out or tmp
        report = run_eval(cfg, method)
        emit_report(report, out, "records")
        fresh = os.path.join(out, "records.jsonl")
        same = filecmp.cmp(trace, fresh, shallow=False)
        if same:
            print(f"replay identical: {trace}")
            return 0
        with open(trace) as a, open(fresh) as b:
            for lineno, (x, y) in enumerate(zip(a, b), 1):
                if x != y:
                    print(f"replay differs at line {lineno}", file=sys.stderr)
                    break
            else:
                print("replay differs in length", file=sys.stderr)
        return 1


def build_parser():
    p = argparse.ArgumentParser(prog="tlsattn", description=__doc__)
    p.add_argument("--version", action="version", version=f"tlsattn 0.1.0 ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override workload.seed")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--format", choices=("records", "summary"), default="records")
        sp.add_argument("--overlap", choices=("on", "off"))
        sp.add_argument("--mode", choices=("staggered", "synchronous"))

    c = sub.add_parser("calibrate", help="build channel profiles from a TLSCAL1 file")
    common(c, "runs/calibration")
    c.add_argument("--input", help="TLSCAL1 calibration file; omit to draw one from the config")
    c.add_argument("--channels", type=int, help="channels to keep (default per variant)")
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("run", help="evaluate one configuration")
    common(r, "runs/run")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("compare", help="full / block-only / token-only / two-level")
    common(m, "runs/compare")
    m.set_defaults(func=cmd_compare)

    y = sub.add_parser("replay", help="re-run a records file and check it is byte-identical")
    y.add_argument("--trace", required=True, help="records.jsonl to replay")
    y.add_argument("--out", help="keep the replayed records here")
    y.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
