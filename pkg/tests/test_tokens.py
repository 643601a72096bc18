import math

import numpy as np
import pytest

from tlsattn.errors import ConfigurationError, InputError
from tlsattn.tokens import (
    ChannelProfile,
    approx_scores,
    calibrate_channels,
    quantize_keys,
    select_tokens,
)


def test_calibrate_hand_case():
    prof = calibrate_channels([np.array([[1.0, 0.0], [2.0, 0.0]])], np.array([[3.0, 1.0]]), 1)
    assert prof.channel_scores.tolist() == [6.0, 0.0]
    assert prof.selected_channels.tolist() == [0]


def test_calibrate_zero_queries_falls_back_to_index_order():
    prof = calibrate_channels([np.zeros((3, 5))], np.ones((4, 5)), 3)
    assert prof.channel_scores.tolist() == [0.0] * 5
    assert prof.selected_channels.tolist() == [0, 1, 2]


def test_calibrate_matches_scan(rng):
    d, G = 64, 3
    qs = [rng.standard_normal((20, d)) * rng.uniform(0.1, 3, d) for _ in range(G)]
    ks = rng.standard_normal((50, d)) * rng.uniform(0.1, 3, d)
    prof = calibrate_channels(qs, ks, 8)
    expected = []
    for c in range(d):
        kpeak = max(abs(ks[j, c]) for j in range(50))
        qpeak = sum(max(abs(q[j, c]) for j in range(20)) for q in qs) / G
        expected.append(qpeak * kpeak)
    np.testing.assert_allclose(prof.channel_scores, expected, rtol=1e-12)
    assert prof.selected_channels.tolist() == sorted(range(d), key=lambda c: (-expected[c], c))[:8]


def test_calibrate_errors():
    with pytest.raises(ConfigurationError):
        calibrate_channels([np.ones((2, 4))], np.ones((2, 4)), 5)
    with pytest.raises(InputError):
        calibrate_channels([], np.ones((2, 4)), 1)
    with pytest.raises(InputError):
        calibrate_channels([np.ones((2, 4))], np.empty((0, 4)), 1)


def test_quantize_hand_case():
    idx = quantize_keys([[0.0, 15.0]], ChannelProfile.identity(2))
    assert idx.zero_point.tolist() == [0.0]
    assert idx.scale.tolist() == [1.0]
    assert idx.codes.tolist() == [[0, 15]]


def test_quantize_constant_row():
    idx = quantize_keys([[2.5, 2.5]], ChannelProfile.identity(2))
    assert idx.scale.tolist() == [0.0]
    assert idx.codes.tolist() == [[0, 0]]
    assert idx.dequantize().tolist() == [[2.5, 2.5]]


def test_quantize_round_trip_bound(rng):
    keys = rng.standard_normal((2000, 24)) * rng.uniform(0.01, 20, (2000, 1))
    prof = ChannelProfile(np.array([3, 1, 4, 15, 9, 2, 6, 5]), np.ones(24))
    idx = quantize_keys(keys, prof)
    err = np.abs(idx.dequantize() - keys[:, prof.selected_channels])
    assert (err <= idx.scale[:, None] / 2 + 1e-12).all()
    assert (idx.scale >= 0).all()


def test_quantized_append_matches_batch(rng):
    keys = rng.standard_normal((150, 10))
    prof = ChannelProfile(np.array([0, 4, 7]), np.ones(10))
    idx = quantize_keys(keys[:20], prof)
    for row in keys[20:]:
        idx.append(row)
    ref = quantize_keys(keys, prof)
    np.testing.assert_array_equal(idx.codes, ref.codes)
    np.testing.assert_array_equal(idx.scale, ref.scale)


def test_approx_scores_symmetric_candidates():
    idx = quantize_keys([[1.0, 0.0], [1.0, 0.0]], ChannelProfile.identity(2))
    np.testing.assert_allclose(approx_scores([[1.0, 2.0]], idx, [0, 1], ChannelProfile.identity(2)), [0.5, 0.5])


def test_approx_scores_symmetric_heads():
    prof = ChannelProfile.identity(2)
    idx = quantize_keys([[1.0, 0.0], [0.0, 1.0]], prof)
    s = approx_scores([[3.0, 0.0], [0.0, 3.0]], idx, [0, 1], prof)
    assert s[0] == pytest.approx(s[1])


def unfused_reference(q, index, cand, prof, d_scale):
    qp = q[:, prof.selected_channels]
    deq = index.dequantize(np.asarray(cand))
    out = np.zeros(len(cand))
    for h in range(q.shape[0]):
        logits = [sum(qp[h, c] * deq[j, c] for c in range(prof.d_c)) / d_scale for j in range(len(cand))]
        m = max(logits)
        e = [math.exp(x - m) for x in logits]
        out += np.array(e) / math.fsum(e)
    return out / q.shape[0]


def test_approx_scores_matches_unfused_reference(rng):
    d = 16
    keys = rng.standard_normal((80, d))
    prof = ChannelProfile(np.array([1, 5, 6, 11]), np.ones(d))
    idx = quantize_keys(keys, prof)
    q = rng.standard_normal((3, d))
    cand = [2, 70, 13, 40, 41, 5]
    got = approx_scores(q, idx, cand, prof)
    np.testing.assert_allclose(got, unfused_reference(q, idx, cand, prof, math.sqrt(d)), atol=1e-6)


def test_approx_scores_exact_when_on_grid():
    # keys already on each row's 4-bit grid: compressed logits are the true logits
    prof = ChannelProfile.identity(3)
    keys = np.array([[0.0, 7.0, 15.0], [-2.0, 1.0, 13.0], [4.0, 4.5, 11.5]])
    idx = quantize_keys(keys, prof)
    np.testing.assert_array_equal(idx.dequantize(), keys)
    q = np.array([[0.3, -1.2, 0.7]])
    ref = np.exp(q @ keys.T / math.sqrt(3))
    np.testing.assert_allclose(approx_scores(q, idx, [0, 1, 2], prof), (ref / ref.sum())[0], rtol=1e-12)


def test_approx_scores_empty_candidates():
    prof = ChannelProfile.identity(2)
    with pytest.raises(InputError):
        approx_scores([[1.0, 1.0]], quantize_keys([[1.0, 2.0]], prof), [], prof)


def test_single_head_selection_invariant_to_d_scale(rng):
    d, dc = 64, 8
    keys = rng.standard_normal((600, d))
    prof = calibrate_channels([rng.standard_normal((10, d))], keys, dc)
    idx = quantize_keys(keys, prof)
    q = rng.standard_normal((1, d))
    cand = np.arange(0, 600, 2)
    picks = [select_tokens(approx_scores(q, idx, cand, prof, s), cand, 40, 0).token_ids.tolist()
             for s in (1.0, math.sqrt(d), math.sqrt(dc))]
    assert picks[0] == picks[1] == picks[2]


def test_select_tokens_hand_case():
    sel = select_tokens([0.5, 0.2, 0.3], [10, 11, 12], 2, 3)
    assert sel.token_ids.tolist() == [10, 12]
    assert sel.approx_scores.tolist() == [0.5, 0.3]


def test_select_tokens_budget_exceeds_candidates():
    assert select_tokens([0.1, 0.9], [4, 8], 5, 0).token_ids.tolist() == [4, 8]


def test_select_tokens_matches_sort(rng):
    s = rng.random(8192)
    cand = np.arange(8192) * 3
    expected = sorted(cand[i] for i in sorted(range(8192), key=lambda i: (-s[i], i))[:512])
    assert select_tokens(s, cand, 512, 0).token_ids.tolist() == expected
