"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 8192]

Both backends are checked for agreement before timing. Needs the compiled
extension; without it only the numpy column is printed.
"""

import argparse
import timeit

import numpy as np

from tlsattn.kernels import available_backends


def cases(n, d, d_c, B, G, seed):
    rng = np.random.default_rng(seed)
    keys = rng.standard_normal((n, d))
    q = rng.standard_normal((G, d))
    qp = np.ascontiguousarray(q[:, :d_c])
    m = -(-n // B)
    kmax = rng.standard_normal((m, d))
    kmin = kmax - rng.exponential(1.0, (m, d))
    sub = np.ascontiguousarray(keys[:, :d_c])
    codes, scale, zero = available_backends()["python"].quantize_rows(sub)
    rows = np.arange(0, n, 2, dtype=np.int64)
    scores = rng.standard_normal(n)
    return {
        "block_max_min": lambda k: k.block_max_min(keys, B),
        "quest_scores": lambda k: k.quest_scores(q, kmax, kmin),
        "quantize_rows": lambda k: k.quantize_rows(sub),
        "int4_logits": lambda k: k.int4_logits(qp, codes, scale, zero, rows),
        "top_k": lambda k: k.top_k(scores, 512),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-12)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=8192)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = available_backends()
    names = sorted(backends, key=lambda s: s != "cython")
    work = cases(args.n, args.d, args.channels, args.block_size, args.heads, args.seed)
    print(f"n={args.n} d={args.d} d_c={args.channels} B={args.block_size} G={args.heads}, best of {args.repeat}")
    print(f"{'kernel':<15}" + "".join(f"{b + ' (ms)':>16}" for b in names) + ("    speedup" if len(names) > 1 else ""))
    for name, fn in work.items():
        outs = [fn(backends[b]) for b in names]
        if len(outs) > 1 and not same(outs[0], outs[1]):
            raise SystemExit(f"{name}: backends disagree")
        times = []
        for b in names:
            number = 3
            best = min(timeit.repeat(lambda: fn(backends[b]), number=number, repeat=args.repeat)) / number
            times.append(best * 1e3)
        row = f"{name:<15}" + "".join(f"{t:>16.3f}" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:>10.2f}x"
        print(row)


if __name__ == "__main__":
    main()
