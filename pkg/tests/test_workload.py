import numpy as np
import pytest

from tlsattn.attention import oracle_token_ranking
from tlsattn.errors import ConfigurationError
from tlsattn.harness.workload import PATTERNS, WorkloadSpec, calibration_set, generate_workload

SMALL = dict(n=2048, decode_steps=3, head_dim=32, query_heads=4, group_size=2, region_blocks=4)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_same_seed_is_bit_identical(pattern):
    a = generate_workload(WorkloadSpec(pattern=pattern, seed=11, **SMALL))
    b = generate_workload(WorkloadSpec(pattern=pattern, seed=11, **SMALL))
    for name in ("keys", "values", "prefill_query", "queries", "new_keys", "new_values"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = generate_workload(WorkloadSpec(pattern=pattern, seed=12, **SMALL))
    assert a.keys.tobytes() != c.keys.tobytes()


def test_zero_drift_is_constant():
    wl = generate_workload(WorkloadSpec(pattern="drifting", epsilon=0.0, **SMALL))
    for p in wl.planted[1:]:
        np.testing.assert_array_equal(p, wl.planted[0])
    for q in wl.queries:
        np.testing.assert_array_equal(q, wl.prefill_query)


def test_drift_moves_the_region():
    wl = generate_workload(WorkloadSpec(pattern="drifting", epsilon=0.25, **SMALL))
    assert not np.array_equal(wl.planted[0], wl.planted[1])
    assert len(np.intersect1d(wl.planted[0], wl.planted[1])) == 3 * len(wl.planted[0]) // 4


@pytest.mark.parametrize("seed", range(5))
def test_single_planted_token_ranks_first(seed):
    wl = generate_workload(WorkloadSpec(pattern="peaked", planted=1, seed=seed, **SMALL))
    kv = wl.fresh_cache()
    for g, rank in enumerate(oracle_token_ranking(wl.prefill_query, kv, wl.layout)):
        assert rank[0] == wl.planted[0][0]


def test_scatter_puts_needles_in_distinct_blocks():
    wl = generate_workload(WorkloadSpec(pattern="scatter", planted=20, **SMALL))
    blocks = wl.planted[0] // 64
    assert len(set(blocks.tolist())) == 20


def test_calibration_draw_is_held_out():
    spec = WorkloadSpec(pattern="peaked", **SMALL)
    groups = calibration_set(spec)
    wl = generate_workload(spec)
    assert len(groups) == 2
    queries, keys = groups[0]
    assert len(queries) == 2 and queries[0].shape == (17, 32)
    assert keys.shape == (2048, 32)
    assert not np.array_equal(keys, wl.keys[0])


@pytest.mark.parametrize("bad", [
    dict(pattern="nope"),
    dict(epsilon=1.5),
    dict(pattern="scatter", planted=100, n=1024),
    dict(pattern="alternating", region_blocks=20, n=1024),
    dict(query_heads=3),
])
def test_invalid_specs(bad):
    base = dict(SMALL)
    base.update(bad)
    with pytest.raises(ConfigurationError):
        generate_workload(WorkloadSpec(**base))
