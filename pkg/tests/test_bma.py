import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from osmilestone.bma import WEIGHT_LABELS, BmaWeights, WeightError, bma_ppd, compute_weights, plugin_log_g
from osmilestone.models.base import PpdMatrix


def _ppd(times, follow=0.0):
    times = np.asarray(times, dtype=float)
    ids = [f"s{j}" for j in range(times.shape[1])]
    return PpdMatrix(times, ids, np.full(times.shape[1], follow))


def test_weights_match_hand_softmax():
    ll = [np.array([-10.0, -12.0, -9.5]), np.array([-11.0, -11.0, -9.0]), np.array([-10.5, -13.0, -20.0])]
    lp = [np.array([-1.0, -1.2, -0.8]), np.array([-2.0, -1.0, -1.5]), np.array([-0.5, -0.5, -0.5])]
    log_g = np.array([0.3, -1.1, 2.0])
    prior = np.array([0.5, 0.3, 0.2])
    w = compute_weights(ll, lp, log_g, prior, labels=("T", "NL", "OS"))
    for t in range(3):
        raw = []
        for q in range(3):
            others = sum(log_g[h] for h in range(3) if h != q)
            raw.append(math.exp(ll[q][t] + lp[q][t] + others + math.log(prior[q])))
        want = np.array(raw) / sum(raw)
        np.testing.assert_allclose(w.weights[t], want, rtol=1e-12)


def test_symmetric_streams_give_uniform_weights():
    s = np.array([-3.0, -40.0, -7.5, 2.0])
    w = compute_weights([s] * 4, [s / 2] * 4, [0.7] * 4)
    assert np.array_equal(w.weights, np.full((4, 4), 0.25))


def test_dominant_stream_saturates():
    base = np.zeros(5)
    w = compute_weights([base, base, base + 1000.0, base], [base] * 4)
    assert np.all(w.weights[:, 2] == 1.0)
    assert np.all(w.weights[:, [0, 1, 3]] < 1e-300)


@settings(max_examples=60, deadline=None)
@given(arrays(float, (6, 4), elements=st.floats(-500, 500)), st.floats(-1e4, 1e4))
def test_weights_normalized_and_shift_invariant(ll, c):
    lp = np.zeros(6)
    w = compute_weights(list(ll.T), [lp] * 4)
    assert np.all(w.weights >= 0)
    np.testing.assert_allclose(w.weights.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    shifted = compute_weights(list(ll.T + c), [lp] * 4)
    np.testing.assert_allclose(shifted.weights, w.weights, rtol=1e-9, atol=1e-12)


def test_weight_errors():
    a = np.zeros(3)
    with pytest.raises(WeightError, match="same number"):
        compute_weights([a, np.zeros(4), a, a], [a] * 4)
    with pytest.raises(WeightError, match="no model"):
        compute_weights([np.array([0.0, -np.inf, 0.0])] * 4, [a] * 4)
    with pytest.raises(WeightError, match="sum to 1"):
        compute_weights([a] * 4, [a] * 4, prior_probs=[0.5, 0.5, 0.5, 0.0])
    with pytest.raises(WeightError):
        compute_weights([a] * 4, [a] * 3)


def test_plugin_log_g_is_normal_density_at_mean():
    rng = np.random.default_rng(0)
    x = rng.multivariate_normal([1.0, -2.0, 0.5], [[1.0, 0.3, 0.0], [0.3, 2.0, -0.4], [0.0, -0.4, 0.5]], 4000)
    cov = np.cov(x, rowvar=False)
    want = stats.multivariate_normal(x.mean(axis=0), cov).logpdf(x.mean(axis=0))
    assert plugin_log_g(x) == pytest.approx(want, rel=1e-9)
    assert plugin_log_g(x[:, 0]) == pytest.approx(stats.norm(0, x[:, 0].std(ddof=1)).logpdf(0), rel=1e-9)


def test_degenerate_weights_reproduce_component():
    rng = np.random.default_rng(1)
    ppds = [_ppd(rng.exponential(10.0 * (q + 1), (50, 7))) for q in range(4)]
    w = BmaWeights(np.tile([0.0, 0.0, 0.0, 1.0], (50, 1)), WEIGHT_LABELS, np.full(4, 0.25), np.zeros(4))
    out = bma_ppd(w, ppds, seed=3)
    assert np.array_equal(out.times, ppds[3].times)


def test_half_half_mixture_mean():
    ppds = [_ppd(np.full((400, 25), 10.0)), _ppd(np.full((400, 25), 20.0)),
            _ppd(np.full((400, 25), 99.0)), _ppd(np.full((400, 25), 99.0))]
    w = BmaWeights(np.tile([0.5, 0.5, 0.0, 0.0], (400, 1)), WEIGHT_LABELS, np.full(4, 0.25), np.zeros(4))
    out = bma_ppd(w, ppds, seed=5)
    assert set(np.unique(out.times)) == {10.0, 20.0}
    # 10^4 fair picks: sd of the mean is 0.05
    assert out.times.mean() == pytest.approx(15.0, abs=0.2)


def test_mixture_cdf_matches_weighted_components():
    rng = np.random.default_rng(7)
    n_it, n_sub = 1000, 100
    a = _ppd(rng.exponential(5.0, (n_it, n_sub)))
    b = _ppd(10.0 + rng.weibull(2.0, (n_it, n_sub)) * 8.0)
    wv = rng.uniform(0.1, 0.9, n_it)
    w = BmaWeights(np.column_stack([wv, 1 - wv]), ("T", "OS"), np.full(2, 0.5), np.zeros(2))
    out = bma_ppd(w, [a, b], seed=11).times.ravel()
    wbar = wv.mean()

    def mix_cdf(x):
        return wbar * stats.expon(scale=5.0).cdf(x) + (1 - wbar) * stats.weibull_min(2.0, loc=10.0, scale=8.0).cdf(x)

    assert stats.kstest(out, mix_cdf).statistic < 0.01


def test_bma_ppd_seeded_and_checked():
    rng = np.random.default_rng(2)
    ppds = [_ppd(rng.exponential(3.0, (20, 5))) for _ in range(4)]
    w = compute_weights([np.zeros(20)] * 4, [np.zeros(20)] * 4)
    assert np.array_equal(bma_ppd(w, ppds, 1).times, bma_ppd(w, ppds, 1).times)
    assert not np.array_equal(bma_ppd(w, ppds, 1).times, bma_ppd(w, ppds, 2).times)
    with pytest.raises(WeightError, match="aligned"):
        bma_ppd(w, ppds[:3] + [_ppd(np.ones((20, 4)))], 1)
    with pytest.raises(WeightError, match="one PPD"):
        bma_ppd(w, ppds[:3], 1)


def test_weight_files(tmp_path):
    w = compute_weights([np.zeros(3), np.ones(3)], [np.zeros(3)] * 2, labels=("T", "OS"))
    w.to_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "iter,w_T,w_NT,w_NL,w_OS"
    assert len(lines) == 4
    row = [float(v) for v in lines[1].split(",")[1:]]
    assert row[1] == row[2] == 0.0 and sum(row) == pytest.approx(1.0)
    w.to_json(tmp_path / "w.json")
    summary = json.loads((tmp_path / "w.json").read_text())
    assert summary["mean_weights"]["OS"] == pytest.approx(math.e / (1 + math.e))
