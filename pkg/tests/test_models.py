import math
from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

import oracles
from conftest import make_subject
from osmilestone.mcmc import MCMCSettings
from osmilestone.models import BAVE_COMPONENTS, MODEL_BUILDERS, build_model
from osmilestone.models.clayton import (
    CopulaPairModel,
    CopulaPairParams,
    clayton_joint_survival,
    loglik_clayton_pair,
    loglik_ttp_os_copula,
    ppd_sample_clayton,
    residual_chaz,
    sample_clayton_uniforms,
)
from osmilestone.models.marginal import MarginalModel, MarginalOsParams, loglik_marginal_os, ppd_sample_marginal
from osmilestone.models.multistate import (
    MultiStateParams,
    loglik_multistate,
    ppd_sample_multistate,
    progressed_mask,
    transition_probability,
)
from osmilestone.models.spjm import SpjmModel, SpjmParams, loglik_spjm, ppd_sample_spjm
from osmilestone.models.tl_os import TlOsModel, TlOsParams, loglik_tl_os, ppd_sample_tl_os
from osmilestone.trial import TrialArrays

FAST = MCMCSettings(chains=1, burn_in=50, adapt=150, iters=100, seed=4)


def rel(a, b):
    return abs(float(a) - float(b)) / max(abs(float(b)), 1e-300)


# ---------------------------------------------------------------------------
# marginal
# ---------------------------------------------------------------------------


def test_marginal_loglik_oracle(four_case_subjects):
    p = MarginalOsParams(1.4, 0.02, np.array([-0.3, 0.5]))
    want = mp.mpf(0)
    for s in four_case_subjects:
        lr = math.log(0.02) + (-0.3) * s.experimental + 0.5 * s.covariates[0]
        want += oracles.weibull_term(1.4, lr, s.os.time, s.os.indicator)
    assert rel(loglik_marginal_os(p, four_case_subjects), want) < 1e-12


def test_marginal_ppd_distribution():
    p = MarginalOsParams(1.3, 0.01, np.array([0.2]))
    u = np.random.default_rng(0).random(20000)
    t = ppd_sample_marginal(p, np.array([1.0]), 15.0, u)
    assert np.all(t > 15.0)
    rate = 0.01 * math.exp(0.2)
    cdf = lambda x: -np.expm1(-rate * (x**1.3 - 15.0**1.3))  # noqa: E731
    assert stats.kstest(t, cdf).pvalue > 1e-3


# ---------------------------------------------------------------------------
# Clayton pair
# ---------------------------------------------------------------------------

CLAYTON = CopulaPairParams(
    beta_a=np.array([-0.2, 0.4]), gamma_a=0.05, alpha_a=1.2, b_a=np.array([0.01, -0.02, 0.0, 0.005]), sigma_a=0.03,
    beta_os=np.array([0.3, -0.1]), gamma_os=0.02, alpha_os=1.5, b_os=np.array([-0.005, 0.004, 0.001, 0.0]),
    sigma_os=0.01, eta=1.7,
)


def _clayton_oracle(params, subs, comp="nl"):
    p = params.as_dict()
    total = mp.mpf(0)
    for i, s in enumerate(subs):
        z = np.array([float(s.experimental), *s.covariates])
        ba, bo = p["b"][i]
        ra = (p["gamma_a"] + ba) * math.exp(z @ p["beta_a"])
        ro = (p["gamma_os"] + bo) * math.exp(z @ p["beta_os"])
        ev = getattr(s, comp)
        total += oracles.clayton_pair_loglik(ev.time, ev.indicator, s.os.time, s.os.indicator,
                                             ra, p["alpha_a"], ro, p["alpha_os"], p["eta"])
        total += oracles.normal_logpdf(ba, p["sigma_a"]) + oracles.normal_logpdf(bo, p["sigma_os"])
    return total


@pytest.mark.parametrize("eta", [0.05, 1.7, 9.0])
def test_clayton_loglik_four_cases(four_case_subjects, eta):
    params = replace(CLAYTON, eta=eta)
    d = TrialArrays.from_subjects(four_case_subjects)
    got = loglik_clayton_pair(params, (d.nl_t, d.nl_d, d.os_t, d.os_d), d.design())
    assert rel(got, _clayton_oracle(params, four_case_subjects)) < 1e-8
    # each case on its own
    for i, s in enumerate(four_case_subjects):
        one = replace(params, b_a=params.b_a[i:i + 1], b_os=params.b_os[i:i + 1])
        di = TrialArrays.from_subjects([s])
        g = loglik_clayton_pair(one, (di.nl_t, di.nl_d, di.os_t, di.os_d), di.design())
        assert rel(g, _clayton_oracle(one, [s])) < 1e-8


def test_ttp_copula_uses_ttp_component(four_case_subjects):
    subs = [replace(s, ttp=s.nl) for s in four_case_subjects]
    assert rel(loglik_ttp_os_copula(CLAYTON, subs), _clayton_oracle(CLAYTON, subs, "ttp")) < 1e-8


def test_clayton_model_terms_match_function(four_case_subjects):
    m = CopulaPairModel(four_case_subjects, "nl")
    p = CLAYTON.as_dict()
    d = m.data
    want = loglik_clayton_pair(CLAYTON, (d.nl_t, d.nl_d, d.os_t, d.os_d), d.design())
    assert float(np.sum(m.loglik_terms(p))) == pytest.approx(want, rel=1e-13)
    bad = dict(p, b=p["b"] - np.array([1.0, 0.0]))
    assert np.isneginf(m.loglik_terms(bad)).all()


@pytest.mark.parametrize("eta", [0.5, 2.0, 8.0])
def test_clayton_uniform_sampler_kendall_tau(eta):
    u, v = sample_clayton_uniforms(eta, 20000, np.random.default_rng(int(eta * 10)))
    tau = stats.kendalltau(u, v)[0]
    assert tau == pytest.approx(eta / (eta + 2), abs=0.03)


def _conditional_survival(ha_t, ro, ao, eta, c, observed, t):
    """P(T_os > t | T_os > c, component) straight from the joint survival."""
    sa = math.exp(-ha_t)
    if observed:
        # -dS/dta is proportional to sa**(-eta-1) * J**(-1/eta-1); only J depends on t
        def g(x):
            so = math.exp(-ro * x**ao)
            return (sa**-eta + so**-eta - 1) ** (-1 / eta - 1)
    else:
        def g(x):
            return clayton_joint_survival(sa, math.exp(-ro * x**ao), eta)
    return g(t) / g(c)


@pytest.mark.parametrize("observed", [True, False])
@pytest.mark.parametrize("eta", [0.3, 2.0, 6.0])
def test_clayton_ppd_matches_conditional_law(observed, eta):
    p = replace(CLAYTON, eta=eta, b_a=np.zeros(1), b_os=np.zeros(1))
    comp = (4.0, 1) if observed else (9.0, 0)
    from osmilestone.trial import EventTime

    u = np.random.default_rng(7).random(20000)
    t = ppd_sample_clayton(p, EventTime(*comp), 9.0, np.array([1.0, 0.0]), u)
    assert np.all(t > 9.0)
    ra = p.gamma_a * math.exp(p.beta_a[0])
    ro = p.gamma_os * math.exp(p.beta_os[0])
    ha_t = ra * comp[0] ** p.alpha_a
    grid = np.quantile(t, [0.1, 0.25, 0.5, 0.75, 0.9])
    for g in grid:
        want = _conditional_survival(ha_t, ro, p.alpha_os, eta, 9.0, observed, g)
        assert np.mean(t > g) == pytest.approx(want, abs=0.012)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.floats(1e-3, 30.0), st.floats(1e-12, 1 - 1e-12), st.booleans())
def test_residual_chaz_never_below_followup(a, hc, eta, u, observed):
    r = residual_chaz(np.array(eta * a), np.array(eta * hc), eta, np.array(u), np.array(observed))
    assert r >= eta * hc * (1 - 1e-12)


# ---------------------------------------------------------------------------
# multi-state
# ---------------------------------------------------------------------------

MS = MultiStateParams(1.3, 14.0, 30.0, 8.0, np.array([0.2, -0.1]), np.array([-0.3, 0.05]), np.array([0.1, 0.2]))


def _ms_subjects():
    return [
        make_subject("p_dead", os=(14.0, 1), prog=(5.0, 1), arm=1, covs=(0.3,)),
        make_subject("p_alive", os=(20.0, 0), prog=(7.5, 1), arm=0, covs=(-1.0,)),
        make_subject("direct", os=(9.0, 1), arm=1, covs=(0.6,)),
        make_subject("cens", os=(16.0, 0), arm=0, covs=(2.1,)),
        make_subject("tie", os=(11.0, 1), prog=(11.0, 1), arm=1, covs=(0.0,)),
    ]


def test_multistate_loglik_oracle():
    subs = _ms_subjects()
    want = mp.mpf(0)
    pd = MS.as_dict()
    for s in subs:
        x = [float(s.experimental), *s.covariates]
        prog = s.progression.indicator == 1 and s.progression.time < s.os.time
        t1 = s.progression.time if prog else s.os.time
        t2 = s.os.time - s.progression.time if prog else 0.0
        want += oracles.multistate_loglik(t1, prog, s.os.indicator == 1, t2, x, pd)
    assert rel(loglik_multistate(MS, subs), want) < 1e-8


def test_progressed_mask_tie_rule():
    m = progressed_mask(np.array([5.0, 11.0, 11.0]), np.array([1, 1, 1]), np.array([14.0, 11.0, 11.0]),
                        np.array([1, 1, 0]))
    assert list(m) == [True, False, True]


@pytest.mark.parametrize("alpha", [0.7, 1.0, 1.8])
def test_transition_probabilities_sum_to_one(alpha):
    p = replace(MS, alpha=alpha)
    x = np.array([1.0, 0.3])
    for t2 in (0.5, 6.0, 30.0, 120.0):
        tot = sum(transition_probability(p, 0, s, 0.0, t2, x) for s in (0, 1, 2))
        assert tot == pytest.approx(1.0, abs=1e-6)
        assert transition_probability(p, 1, 1, 2.0, 2.0 + t2, x) + transition_probability(
            p, 1, 2, 2.0, 2.0 + t2, x) == pytest.approx(1.0, abs=1e-10)


def test_transition_p02_oracle():
    x = np.array([1.0, 0.3])
    r = MS.rates(x)
    a = MS.alpha

    def dens(u, kl):
        return a * r[kl] * u ** (a - 1)

    d = 17.0
    direct = integrate.quad(lambda u: dens(u, "02") * math.exp(-(r["01"] + r["02"]) * u**a), 0, d)[0]
    via = integrate.quad(
        lambda u: dens(u, "01") * math.exp(-(r["01"] + r["02"]) * u**a) * -math.expm1(-r["12"] * (d - u) ** a),
        0, d, epsabs=1e-13)[0]
    assert transition_probability(MS, 0, 2, 3.0, 3.0 + d, x) == pytest.approx(direct + via, abs=1e-9)


def test_transition_errors():
    with pytest.raises(ValueError):
        transition_probability(MS, 2, 0, 0.0, 1.0, np.zeros(2))
    with pytest.raises(ValueError):
        transition_probability(MS, 0, 1, 2.0, 1.0, np.zeros(2))


def test_transition_trivial_cases():
    x = np.array([1.0, 0.3])
    for pair in ((0, 0), (1, 1)):
        assert transition_probability(MS, *pair, 4.0, 4.0, x) == 1.0
    for pair in ((0, 1), (0, 2), (1, 2)):
        assert transition_probability(MS, *pair, 4.0, 4.0, x) == 0.0
    frozen = replace(MS, gamma01=1e12, gamma02=1e12)
    assert transition_probability(frozen, 0, 0, 0.0, 50.0, x) == pytest.approx(1.0, abs=1e-12)
    p00 = [transition_probability(MS, 0, 0, 1.0, 1.0 + d, x) for d in np.linspace(0.1, 40, 50)]
    assert np.all(np.diff(p00) < 0)


def test_p12_matches_forward_simulation():
    x = np.array([0.0, -0.5])
    r12 = MS.rates(x)["12"]
    d = np.random.default_rng(6).weibull(MS.alpha, 1_000_000) / r12 ** (1 / MS.alpha)
    for t in (2.0, 8.0, 20.0):
        assert transition_probability(MS, 1, 2, 3.0, 3.0 + t, x) == pytest.approx(np.mean(d <= t), abs=0.005)


def test_multistate_ppd_without_progression_is_truncated_weibull():
    p = replace(MS, gamma01=1e9)
    x = np.array([1.0, 0.3])
    u = np.random.default_rng(2).random((20000, 3))
    t = ppd_sample_multistate(p, 6.0, x, u)
    r02 = p.rates(x)["02"]
    cdf = lambda v: -np.expm1(-r02 * (v**p.alpha - 6.0**p.alpha))  # noqa: E731
    assert np.all(t > 6.0)
    assert stats.kstest(t, cdf).pvalue > 1e-3


def test_multistate_post_progression_clock_resets():
    # the 1->2 sojourn law does not depend on when progression happened
    x = np.array([1.0, 0.3])
    rng = np.random.default_rng(9)
    early = ppd_sample_multistate(MS, 2.0, x, rng.random((20000, 3)), progressed_at=2.0) - 2.0
    late = ppd_sample_multistate(MS, 30.0, x, rng.random((20000, 3)), progressed_at=30.0) - 30.0
    assert stats.ks_2samp(early, late).pvalue > 1e-3
    # already progressed with elapsed sojourn: residual life beyond the follow-up
    t = ppd_sample_multistate(MS, 12.0, x, rng.random((5000, 3)), progressed_at=5.0)
    assert np.all(t > 12.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 200.0), st.floats(0.0, 1.0, exclude_max=True), st.floats(0.0, 1.0, exclude_max=True),
       st.floats(0.0, 1.0, exclude_max=True), st.booleans())
def test_multistate_ppd_exceeds_followup(c, u0, u1, u2, progressed):
    u = np.array([[u0, u1, u2]])
    t = ppd_sample_multistate(MS, c, np.array([1.0, 0.3]), u, progressed_at=c / 2 if progressed else None)
    assert t[0] > c


# ---------------------------------------------------------------------------
# TL / OS joint model
# ---------------------------------------------------------------------------

def _tl_params(n, lam=0.02, alpha=1.3):
    rng = np.random.default_rng(3)
    return TlOsParams(
        beta_mu=np.array([55.0, -4.0, 1.0, 0.4]), sigma_eps=4.0, sigma1=12.0, sigma2=0.6, rho=0.2,
        b=rng.normal(0, [8.0, 0.3], (n, 2)), beta_os=np.array([-0.2, 0.3]), gamma_os=0.002,
        alpha_os_tl=alpha, lambda_assoc=lam,
    )


def test_tl_os_loglik_oracle(four_case_subjects):
    p = _tl_params(4)
    pd = p.as_dict()
    want = mp.mpf(0)
    for i, s in enumerate(four_case_subjects):
        x = np.array([1.0, float(s.experimental), *s.covariates])
        b1, b2 = pd["b"][i]
        m0 = x @ pd["beta_mu"][:-1] + b1
        m1 = pd["beta_mu"][-1] + b2
        want += oracles.gaussian_series_loglik(s.tl_series, m0, m1, p.sigma_eps)
        want += oracles.bvn_logpdf(b1, b2, p.sigma1, p.sigma2, p.rho)
        log_a = math.log(p.gamma_os) + x[1:] @ pd["beta_os"] + p.lambda_assoc * m0
        k = p.lambda_assoc * m1
        y = s.os.time
        want -= oracles.tl_chaz(p.alpha_os_tl, log_a, k, y)
        if s.os.indicator:
            want += mp.log(p.alpha_os_tl) + log_a + (p.alpha_os_tl - 1) * mp.log(y) + k * y
    assert rel(loglik_tl_os(p, four_case_subjects), want) < 1e-8


def test_tl_os_ppd_solves_residual_hazard(four_case_subjects):
    p = _tl_params(4)
    u = np.array([0.9, 0.5, 0.1, 1e-6])
    times, capped = ppd_sample_tl_os(p, four_case_subjects, 2, u)
    m = TlOsModel(four_case_subjects)
    pd = p.as_dict()
    c = four_case_subjects[2].os.time
    Hc = m.cumulative_hazard(pd, c, 2)
    for t, uu, cp in zip(times, u, capped):
        assert t > c
        if not cp:
            assert float((m.cumulative_hazard(pd, t, 2) - Hc)[0]) == pytest.approx(-math.log(uu), rel=1e-8)


def test_tl_os_bounded_hazard_is_capped(four_case_subjects):
    # negative association with an increasing trajectory: H(t) converges, some draws never die
    p = _tl_params(4, lam=-0.5)
    times, capped = ppd_sample_tl_os(p, four_case_subjects, 2, np.array([1e-9]))
    assert capped[0] and times[0] == pytest.approx(600.0)


def test_tl_os_integrated_loglik_matches_quadrature(four_case_subjects):
    """The package rule for the marginal over (b1, b2) against a much finer product rule."""
    subs = four_case_subjects[:2]
    m = TlOsModel(subs)
    draws = m.fit(FAST)
    got = m.os_conditional_loglik(draws)[0]
    p = draws.params_at(0)
    bm = p["beta_mu"]
    total = 0.0
    for i, s in enumerate(subs):
        x = np.array([1.0, float(s.experimental), *s.covariates])
        r0 = x @ bm[:-1]
        s1, s2, rho, se = p["sigma1"], p["sigma2"], p["rho"], p["sigma_eps"]
        cov = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
        t = np.array([v[0] for v in s.tl_series])
        z = np.array([v[1] for v in s.tl_series])
        X = np.column_stack([np.ones_like(t), t])
        # posterior of (b1, b2) given the series, Gaussian in closed form
        prec = np.linalg.inv(cov) + X.T @ X / se**2
        V = np.linalg.inv(prec)
        mean = V @ (X.T @ (z - r0 - bm[-1] * t) / se**2)
        L = np.linalg.cholesky(V)

        def density(e1, e2):
            b = mean + L @ np.array([e1, e2])
            log_a = math.log(p["gamma_os"]) + x[1:] @ p["beta_os"] + p["lam"] * (r0 + b[0])
            k = p["lam"] * (bm[-1] + b[1])
            H = integrate.quad(lambda v: p["alpha_os"] * math.exp(log_a + k * v) * v ** (p["alpha_os"] - 1),
                               0, s.os.time, epsrel=1e-12)[0]
            lh = math.log(p["alpha_os"]) + log_a + (p["alpha_os"] - 1) * math.log(s.os.time) + k * s.os.time
            return math.exp(s.os.indicator * lh - H)

        # 40x40 tensor Gauss-Hermite in whitened coordinates, far above the package's rule
        zz, ww = np.polynomial.hermite_e.hermegauss(40)
        ww = ww / ww.sum()
        val = sum(wi * wj * density(zi, zj) for zi, wi in zip(zz, ww) for zj, wj in zip(zz, ww))
        total += math.log(val)
    assert got == pytest.approx(total, rel=1e-4)


# ---------------------------------------------------------------------------
# SPJM
# ---------------------------------------------------------------------------


def _spjm_params(n, rng=None):
    rng = rng or np.random.default_rng(8)
    return SpjmParams(
        beta0=np.array([55.0, -4.0, 1.0, 0.4]), sigma_y=4.0, sigma_b1=12.0, sigma_b2=0.6, rho=-0.3,
        sigma_b3=0.4, sigma_b4=0.5, alpha_nt=1.1, alpha_nl=1.2, alpha_os=1.4,
        beta_nt=np.array([-3.5, 0.1, 0.2]), beta_nl=np.array([-3.0, -0.2, 0.1]), beta_os=np.array([-4.0, -0.3, 0.05]),
        phi=np.array([0.01, 0.2, 0.02, -0.1, 0.03, 0.5, 0.4, 0.3]),
        b=rng.normal(0, [8.0, 0.3, 0.4, 0.5], (n, 4)),
    )


@pytest.mark.parametrize("include_nt", [True, False])
def test_spjm_loglik_oracle(four_case_subjects, include_nt):
    subs = [replace(s, nt=replace(s.nl, indicator=1 - s.nl.indicator)) for s in four_case_subjects]
    p = _spjm_params(4)
    pd = p.as_dict()
    phi = np.concatenate([[0.0], pd["phi"]])
    want = mp.mpf(0)
    for i, s in enumerate(subs):
        x = np.array([1.0, float(s.experimental), *s.covariates])
        b1, b2, b3, b4 = pd["b"][i]
        if not include_nt:
            b3 = 0.0
        m0 = x @ pd["beta0"][:-1] + b1
        m1 = pd["beta0"][-1] + b2
        want += oracles.gaussian_series_loglik(s.tl_series, m0, m1, p.sigma_y)
        want += oracles.bvn_logpdf(b1, b2, p.sigma_b1, p.sigma_b2, p.rho)
        want += oracles.normal_logpdf(b4, p.sigma_b4)
        lr_nl = x @ pd["beta_nl"] + phi[3] * b1 + phi[4] * b2 + b4
        lr_os = x @ pd["beta_os"] + phi[5] * b1 + phi[6] * b2 + phi[7] * b3 + phi[8] * b4
        want += oracles.weibull_term(p.alpha_nl, lr_nl, s.nl.time, s.nl.indicator)
        want += oracles.weibull_term(p.alpha_os, lr_os, s.os.time, s.os.indicator)
        if include_nt:
            want += oracles.normal_logpdf(b3, p.sigma_b3)
            lr_nt = x @ pd["beta_nt"] + phi[1] * b1 + phi[2] * b2 + b3
            want += oracles.weibull_term(p.alpha_nt, lr_nt, s.nt.time, s.nt.indicator)
    assert rel(loglik_spjm(p, subs, include_nt=include_nt), want) < 1e-10


def test_spjm_drops_nt_without_events(scenario2_trial):
    m = SpjmModel(scenario2_trial.subjects)
    assert not m.include_nt
    assert "sigma_b3" not in m.space and m.space["b"].size == 3
    assert len(m.space["phi"].labels) == 5


def test_spjm_ppd_truncated(four_case_subjects):
    p = _spjm_params(4)
    u = np.random.default_rng(2).random(5000)
    t = ppd_sample_spjm(p, four_case_subjects, 3, u)
    assert np.all(t > four_case_subjects[3].os.time)


# ---------------------------------------------------------------------------
# every model: fit, PPD shape, determinism
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(MODEL_BUILDERS))
def test_fit_and_ppd_contract(name, scenario2_trial):
    from osmilestone.trial import snapshot_at_kth_death

    snap = snapshot_at_kth_death(scenario2_trial.subjects, 25)
    m = build_model(name, snap.subjects)
    draws = m.fit(FAST)
    ppd = m.ppd(draws, 11)
    alive = [s.subject_id for s in snap.subjects if s.os.indicator == 0]
    assert ppd.subject_ids == alive
    assert ppd.times.shape == (FAST.iters, len(alive))
    assert np.all(ppd.times > ppd.followup[None, :])
    again = m.ppd(draws, 11)
    assert np.array_equal(again.times, ppd.times)
    draws2 = build_model(name, snap.subjects).fit(FAST)
    assert np.array_equal(draws.globals, draws2.globals)
    if m.bma_label is not None:
        ll = m.os_conditional_loglik(draws)
        assert ll.shape == (FAST.iters,) and np.all(np.isfinite(ll))


def test_build_model_rejects_unknown():
    with pytest.raises(ValueError):
        build_model("cox", [make_subject("a")])
    assert set(BAVE_COMPONENTS) == {"T", "NT", "NL", "OS"}


def _clayton_density(s, ra, aa, ro, ao, eta):
    ya, yo = s.nl.time, s.os.time
    sa, so = math.exp(-ra * ya**aa), math.exp(-ro * yo**ao)
    fa, fo = aa * ra * ya ** (aa - 1) * sa, ao * ro * yo ** (ao - 1) * so
    j = sa**-eta + so**-eta - 1
    da, do = s.nl.indicator, s.os.indicator
    if da and do:
        return (1 + eta) * fa * fo * (sa * so) ** (-eta - 1) * j ** (-1 / eta - 2)
    if da:
        return fa * sa ** (-eta - 1) * j ** (-1 / eta - 1)
    if do:
        return fo * so ** (-eta - 1) * j ** (-1 / eta - 1)
    return j ** (-1 / eta)


def _pin_draw(draws, values):
    # overwrite the first kept draw with chosen global values
    for nm, v in values.items():
        draws.globals[0, 0, draws.block_slices[nm]] = v
    return draws


@pytest.mark.parametrize("sigma_a, sigma_os, eta", [(0.004, 0.002, 2.5), (0.03, 0.02, 2.5),
                                                    (0.5, 0.3, 2.5), (0.5, 0.3, 0.3)])
def test_clayton_conditional_loglik_matches_quadrature(four_case_subjects, sigma_a, sigma_os, eta):
    """Frailty-integrated ``log p(OS | component)`` against adaptive quadrature.

    Frailty sds run from negligible to several times the baseline rate, so
    the last case puts most of the normal mass outside ``gamma + b > 0``.
    """
    m = CopulaPairModel(four_case_subjects, "nl")
    draws = m.fit(FAST)
    p = {"gamma_a": 0.08, "alpha_a": 1.2, "sigma_a": sigma_a, "beta_a": [0.3, -0.2],
         "gamma_os": 0.03, "alpha_os": 1.4, "sigma_os": sigma_os, "beta_os": [-0.4, 0.1], "eta": eta}
    got = m.os_conditional_loglik(_pin_draw(draws, p))[0]
    cut_a, cut_o = -p["gamma_a"] / sigma_a, -p["gamma_os"] / sigma_os
    total = 0.0
    for s in four_case_subjects:
        z = np.array([float(s.experimental), *s.covariates])
        fa, fo = math.exp(z @ p["beta_a"]), math.exp(z @ p["beta_os"])

        def joint(eo, ea):
            ra = (p["gamma_a"] + sigma_a * ea) * fa
            ro = (p["gamma_os"] + sigma_os * eo) * fo
            return _clayton_density(s, ra, p["alpha_a"], ro, p["alpha_os"], p["eta"]) \
                * stats.norm.pdf(ea) * stats.norm.pdf(eo)

        def marg(ea):
            ra = (p["gamma_a"] + sigma_a * ea) * fa
            y, dl = s.nl.time, s.nl.indicator
            f = (p["alpha_a"] * ra * y ** (p["alpha_a"] - 1)) ** dl * math.exp(-ra * y ** p["alpha_a"])
            return f * stats.norm.pdf(ea)

        lo_a, lo_o = max(cut_a, -12.0), max(cut_o, -12.0)
        num = integrate.dblquad(joint, lo_a, 12, lo_o, 12, epsabs=0, epsrel=1e-10)[0]
        den = integrate.quad(marg, lo_a, 12, epsabs=0, epsrel=1e-12, limit=200)[0]
        total += math.log(num) - math.log(den)
    assert got == pytest.approx(total, abs=1e-4)
