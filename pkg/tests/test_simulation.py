import math

import numpy as np
import pytest
from scipy import stats

from osmilestone.mcmc import MCMCSettings
from osmilestone.simulation import (
    EvalReport,
    ScenarioConfig,
    derived_seed,
    generate_trial,
    run_study,
    visit_schedule,
)


def test_visit_schedule():
    v = visit_schedule()
    assert v.size == 25 and v[0] == 0.0 and v[-1] == 60.0
    assert np.all(np.diff(v[:13]) == 2.0) and np.all(np.diff(v[12:]) == 3.0)
    with pytest.raises(ValueError):
        visit_schedule(40)


def test_config_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        ScenarioConfig(scenario=5)
    with pytest.raises(ValueError):
        ScenarioConfig(n_subjects=1)
    cfg = ScenarioConfig(scenario=3, n_subjects=50, seed=8, eta_nl=1.5)
    cfg.to_json(tmp_path / "c.json")
    assert ScenarioConfig.from_json(tmp_path / "c.json") == cfg


@pytest.fixture(scope="module")
def big():
    return {sc: generate_trial(ScenarioConfig(scenario=sc, n_subjects=100_000, seed=sc)) for sc in (1, 2, 3)}


def test_scenario1_independent(big):
    # the shared arm effect couples the margins slightly; within an arm they are independent
    lat = big[1].latent
    for a in (0, 1):
        m = lat["arm"] == a
        assert abs(stats.kendalltau(lat["t_os"][m], lat["t_nl"][m]).statistic) < 0.01


def test_scenario2_clayton_tau(big):
    lat = big[2].latent
    tau = stats.kendalltau(lat["t_os"], lat["t_nl"]).statistic
    assert tau == pytest.approx(2.0 / (2.0 + 2.0), abs=0.03)


def test_scenario3_lesion_level_shortens_survival(big):
    lat = big[3].latent
    rho = stats.spearmanr(lat["b1"], lat["t_os"]).statistic
    assert rho < -0.3


def test_most_subjects_die_within_five_years(big):
    frac = np.mean(big[1].latent["t_os"] <= 60.0)
    assert 0.8 <= frac <= 0.95


def test_generated_records(scenario2_trial):
    tr = scenario2_trial
    assert len(tr.subjects) == 60
    assert tr.truth_last_death == max(s.os.time for s in tr.subjects)
    arms = [s.experimental for s in tr.subjects]
    assert sum(arms) == 30
    for s in tr.subjects:
        assert s.os.indicator == 1
        assert s.nl.time <= s.os.time + 1e-12 and s.nt.indicator == 0
        assert all(t <= s.os.time for t, _ in s.tl_series)
        assert s.covariates == ()
    again = generate_trial(ScenarioConfig(scenario=2, n_subjects=60, seed=11))
    assert again.subjects == tr.subjects
    other = generate_trial(ScenarioConfig(scenario=2, n_subjects=60, seed=12))
    assert other.subjects != tr.subjects


def test_derived_seed():
    a = derived_seed(1, 0, "marginal")
    assert a == derived_seed(1, 0, "marginal")
    assert len({a, derived_seed(1, 1, "marginal"), derived_seed(2, 0, "marginal"), derived_seed(1, 0, "spjm")}) == 4


def _row(k, method, err, rep, lo=-1.0, hi=1.0, failed=False):
    return {"scenario": 2, "k": k, "method": method, "replicate": rep, "truth": 50.0,
            "median": 50.0 + err, "lo": 50.0 + lo, "hi": 50.0 + hi, "failed": failed}


def test_report_metrics():
    rng = np.random.default_rng(0)
    errs = rng.normal(2.0, 4.0, 30)
    rows = [_row(10, "x", e, i) for i, e in enumerate(errs)]
    rows += [_row(10, "oracle", 0.0, i, 0.0, 0.0) for i in range(5)]
    rows += [_row(10, "offset", 5.0, i, 5.0, 5.0) for i in range(5)]
    rows += [_row(10, "x", math.nan, 99, failed=True)]
    rep = EvalReport(rows)
    bias, rmse = rep.metric(10, "x", "bias"), rep.metric(10, "x", "rmse")
    assert rmse**2 == pytest.approx(bias**2 + errs.var(), abs=1e-9)
    assert rmse >= abs(bias)
    assert rep.metric(10, "x", "n_fail") == 1
    assert rep.metric(10, "oracle", "bias") == 0.0 and rep.metric(10, "oracle", "rmse") == 0.0
    assert rep.metric(10, "oracle", "cr") == 1.0
    assert rep.metric(10, "offset", "bias") == 5.0 and rep.metric(10, "offset", "rmse") == 5.0
    assert rep.metric(10, "offset", "cr") == 0.0


def test_small_study_is_reproducible(tmp_path):
    cfg = ScenarioConfig(scenario=1, n_subjects=30, seed=3)
    st = MCMCSettings(chains=1, burn_in=20, adapt=60, iters=40, seed=1)
    a = run_study(cfg, methods=("marginal",), snapshot_ks=(10, 20), replicates=2, settings=st)
    b = run_study(cfg, methods=("marginal",), snapshot_ks=(10, 20), replicates=2, settings=st)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "scenario,k,method,bias,rmse,cr,width,n_fail"
    assert len(lines) == 3
    for r in a.rows:
        assert not r["failed"] and r["lo"] <= r["median"] <= r["hi"]
    with pytest.raises(ValueError):
        run_study(cfg, methods=("oracle",), snapshot_ks=(10,), replicates=1, settings=st)
    with pytest.raises(ValueError):
        run_study(cfg, methods=("marginal",), snapshot_ks=(30,), replicates=1, settings=st)
