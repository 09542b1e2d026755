"""Clayton survival copula linking one progression component to OS.

Each margin is Weibull with an additive per-subject frailty on its scale,
``gamma_i = gamma + b_i``, and the pair is joined through
``S(t_a, t_os) = (S_a**-eta + S_os**-eta - 1)**(-1/eta)``.
The same class serves the non-target-lesion, new-lesion and TTP pairings.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..mcmc import Block, Exponential, HalfNormal, Normal, ParameterSpace, ScaleMove, ShiftMove
from ..stats import unit_gauss_hermite, unit_gauss_legendre
from .base import Model, as_arrays, norm_logpdf, safe_log

COMPONENTS = ("nt", "nl", "ttp")
LABELS = {"nt": "NT", "nl": "NL", "ttp": "TTP"}
N_HERMITE = 8
N_LEGENDRE = 48
Z_EDGE = 8.5  # standard normal mass beyond this is negligible
DECAY = 15.0  # survival factor exp(-15): the frailty integrand is spent


@dataclass(frozen=True)
class CopulaPairParams:
    beta_a: np.ndarray
    gamma_a: float
    alpha_a: float
    b_a: np.ndarray
    sigma_a: float
    beta_os: np.ndarray
    gamma_os: float
    alpha_os: float
    b_os: np.ndarray
    sigma_os: float
    eta: float

    def __post_init__(self):
        if min(self.gamma_a, self.alpha_a, self.gamma_os, self.alpha_os) <= 0:
            raise ValueError("Weibull shapes and scales must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if min(self.sigma_a, self.sigma_os) <= 0:
            raise ValueError("frailty sds must be positive")

    def as_dict(self):
        b = np.column_stack([np.atleast_1d(self.b_a), np.atleast_1d(self.b_os)]).astype(float)
        return {
            "beta_a": np.atleast_1d(np.asarray(self.beta_a, dtype=float)),
            "gamma_a": self.gamma_a,
            "alpha_a": self.alpha_a,
            "sigma_a": self.sigma_a,
            "beta_os": np.atleast_1d(np.asarray(self.beta_os, dtype=float)),
            "gamma_os": self.gamma_os,
            "alpha_os": self.alpha_os,
            "sigma_os": self.sigma_os,
            "eta": self.eta,
            "b": b,
        }


def clayton_joint_survival(s_a, s_os, eta):
    s_a = np.asarray(s_a, dtype=float)
    s_os = np.asarray(s_os, dtype=float)
    return (s_a**-eta + s_os**-eta - 1.0) ** (-1.0 / eta)


def sample_clayton_uniforms(eta, n, rng):
    """``(u, v)`` pairs from a Clayton copula by conditional inversion."""
    u = rng.random(n)
    w = rng.random(n)
    v = ((w ** (-eta / (1.0 + eta)) - 1.0) * u**-eta + 1.0) ** (-1.0 / eta)
    return u, v


def residual_chaz(a, eta_hc, eta, u, observed):
    """``eta * H_os`` of a death time drawn given survival past follow-up.

    ``a = eta*H_a`` at the component time and ``eta_hc = eta*H_os(c)``.
    Component observed: invert the copula conditional ``C(v | u_a)``
    restricted to ``T > c``. Component censored: invert
    ``S(y_a, t) / S(y_a, c)``. Both collapse to
    ``log(exp(L + eta_hc) + expm1(L)*expm1(a))`` with ``L`` a scaled
    exponential variate, which never falls below ``eta_hc``.
    """
    log_u = np.log(u)
    L = np.where(observed, -eta / (1.0 + eta) * log_u, -eta * log_u)
    return np.logaddexp(L + eta_hc, _log_expm1(L) + _log_expm1(a))


def _log_expm1(x):
    """``log(exp(x) - 1)`` without overflow; ``-inf`` at zero."""
    x = np.asarray(x, dtype=float)
    big = x > 30.0
    with np.errstate(divide="ignore", over="ignore"):
        small = np.log(np.expm1(np.where(big, 0.0, x)))
    return np.where(big, x + np.log1p(-np.exp(-np.where(big, x, 30.0))), small)


class CopulaPairModel(Model):
    subject_block = "b"
    os_linked = ("alpha_os", "gamma_os", "beta_os", "sigma_os", "eta")

    def __init__(self, data, component="nl"):
        if component not in COMPONENTS:
            raise ValueError(f"component must be one of {COMPONENTS}")
        super().__init__(data)
        self.component = component
        self.name = f"copula_{component}"
        self.bma_label = LABELS[component]
        d = self.data
        self.ya = getattr(d, f"{component}_t")
        self.da = getattr(d, f"{component}_d")
        self.z = d.design(intercept=False)
        self.logya = safe_log(self.ya)
        self.logyo = safe_log(d.os_t)
        covs = ("arm",) + tuple(f"cov_{j + 1}" for j in range(d.n_covariates))
        p = self.z.shape[1]
        self.space = ParameterSpace(
            [
                Block("beta_a", size=p, labels=covs, vector=True),
                Block("gamma_a", support="positive", kind="rate"),
                Block("alpha_a", support="positive", kind="shape"),
                Block("sigma_a", support="positive", kind="sd"),
                Block("beta_os", size=p, labels=covs, vector=True),
                Block("gamma_os", support="positive", kind="rate"),
                Block("alpha_os", support="positive", kind="shape"),
                Block("sigma_os", support="positive", kind="sd"),
                Block("eta", support="positive", kind="eta"),
                Block("b", size=2, role="subject", kind="re"),
            ]
        )
        self.priors = {
            "beta_a": Normal(10.0),
            "gamma_a": HalfNormal(10.0),
            "alpha_a": Exponential(0.1),
            "sigma_a": HalfNormal(1.0),
            "beta_os": Normal(10.0),
            "gamma_os": HalfNormal(10.0),
            "alpha_os": Exponential(0.1),
            "sigma_os": HalfNormal(1.0),
            "eta": Exponential(0.1),
        }
        self.moves = (
            ShiftMove("gamma_a", "b", column=0),
            ShiftMove("gamma_os", "b", column=1),
            ScaleMove("sigma_a", "b", column=0),
            ScaleMove("sigma_os", "b", column=1),
        )

    def data_summary(self):
        ma = float(np.mean(self.ya)) or 1.0
        mo = float(np.mean(self.data.os_t)) or 1.0
        return {
            "n_subjects": self.data.n,
            "gamma_a": ma,
            "gamma_os": mo,
            "sigma_a": 0.1 / ma,
            "sigma_os": 0.1 / mo,
        }

    def initial_values(self):
        vals = super().initial_values()
        vals["b:proposal_sd"] = 0.5 * np.array([vals["sigma_a"][0], vals["sigma_os"][0]])
        return vals

    def loglik_terms(self, p):
        b = p["b"]
        d = self.data
        ga = p["gamma_a"] + b[:, 0]
        go = p["gamma_os"] + b[:, 1]
        bad = (ga <= 0) | (go <= 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            logba = np.log(ga) + self.z @ p["beta_a"]
            logbo = np.log(go) + self.z @ p["beta_os"]
            aa, ao = p["alpha_a"], p["alpha_os"]
            ha = np.exp(logba + aa * self.logya) * (self.ya > 0)
            ho = np.exp(logbo + ao * self.logyo) * (d.os_t > 0)
            lha = np.log(aa) + logba + (aa - 1.0) * self.logya
            lho = np.log(ao) + logbo + (ao - 1.0) * self.logyo
            out = kernels.clayton_logterms(ha, ho, lha, lho, self.da, d.os_d, p["eta"])
        out = out + norm_logpdf(b[:, 0], p["sigma_a"]) + norm_logpdf(b[:, 1], p["sigma_os"])
        return np.where(bad, -np.inf, out)

    # -- model averaging ----------------------------------------------------

    def os_conditional_loglik(self, draws):
        """``log p(OS data | component data, theta)`` with frailties integrated out.

        Each frailty integral runs over the sampler's support ``gamma + b > 0``
        only; see :func:`frailty_rule`.
        """
        d = self.data
        out = np.empty(draws.n_total)
        for t in range(draws.n_total):
            p = draws.params_at(t)
            aa, ao = p["alpha_a"], p["alpha_os"]
            lin_a, lin_o = self.z @ p["beta_a"], self.z @ p["beta_os"]
            ya_pow = np.exp(aa * self.logya) * (self.ya > 0)
            yo_pow = np.exp(ao * self.logyo) * (d.os_t > 0)
            ga, lwa = frailty_rule(p["gamma_a"], p["sigma_a"], np.exp(lin_a) * ya_pow, p["eta"])
            go, lwo = frailty_rule(p["gamma_os"], p["sigma_os"], np.exp(lin_o) * yo_pow, p["eta"])
            logba = np.log(ga) + lin_a[:, None]
            logbo = np.log(go) + lin_o[:, None]
            ha = np.exp(logba) * ya_pow[:, None]
            ho = np.exp(logbo) * yo_pow[:, None]
            lha = np.log(aa) + logba + (aa - 1.0) * self.logya[:, None]
            lho = np.log(ao) + logbo + (ao - 1.0) * self.logyo[:, None]
            joint = kernels.clayton_logterms(
                ha[:, :, None], ho[:, None, :], lha[:, :, None], lho[:, None, :],
                self.da[:, None, None], d.os_d[:, None, None], p["eta"],
            )
            joint = joint + lwa[:, :, None] + lwo[:, None, :]
            marg = np.where(self.da[:, None] > 0, lha, 0.0) - ha + lwa
            num = _logsumexp(joint.reshape(d.n, -1))
            den = _logsumexp(marg)
            out[t] = float(np.sum(num - den))
        return out

    # -- prediction ---------------------------------------------------------

    def ppd(self, draws, seed):
        u = self.ppd_uniforms(seed, draws.n_total, 1)[:, :, 0]
        a = self.alive
        b = draws.get("b")
        eta = draws.scalar("eta")[:, None]
        aa = draws.scalar("alpha_a")[:, None]
        ao = draws.scalar("alpha_os")[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            logba = np.log(draws.scalar("gamma_a")[:, None] + b[:, :, 0]) + draws.get("beta_a") @ self.z[a].T
            logbo = np.log(draws.scalar("gamma_os")[:, None] + b[:, :, 1]) + draws.get("beta_os") @ self.z[a].T
        ya = self.ya[a][None, :]
        c = self.data.os_t[a][None, :]
        ha = np.exp(logba + aa * safe_log(ya)) * (ya > 0)
        hc = np.exp(logbo + ao * safe_log(c)) * (c > 0)
        observed = np.broadcast_to(self.da[a][None, :] > 0, u.shape)
        eh = residual_chaz(eta * ha, eta * hc, eta, u, observed)
        log_h = np.log(eh) - np.log(eta)
        times = np.exp((log_h - logbo) / ao)
        times = np.maximum(times, np.nextafter(c, np.inf))
        return self.make_ppd(times)


def frailty_rule(gamma, sigma, exposure, eta=1.0):
    """Quadrature for ``E[f(gamma + sigma*Z); gamma + sigma*Z > 0]``, ``Z ~ N(0, 1)``.

    ``exposure`` holds each subject's ``H / rate``, so the likelihood carries
    a factor ``exp(-rate * exposure)``. Returns rates and log weights, both
    ``(n, nodes)``. Gauss-Hermite serves while the cut ``-gamma/sigma`` lies
    far in the lower tail; otherwise Gauss-Legendre runs from the cut up to
    where that factor has died off, so the nodes sit where the mass is.
    Under the copula a margin's tail decays like ``exp(-min(1, eta)*H)``,
    hence the ``eta`` stretch.
    """
    exposure = np.asarray(exposure, dtype=float)
    cut = -gamma / sigma
    if cut < -6.0:
        z, w = unit_gauss_hermite(N_HERMITE)
        shape = (exposure.size, z.size)
        return np.broadcast_to(gamma + sigma * z, shape), np.broadcast_to(np.log(w), shape)
    x, w = unit_gauss_legendre(N_LEGENDRE)
    with np.errstate(divide="ignore"):
        width = np.minimum(Z_EDGE - cut, DECAY / (min(1.0, eta) * sigma * exposure))
    z = cut + width[:, None] * x**2
    # rate measured from the cut avoids cancellation in gamma + sigma*z
    rate = sigma * width[:, None] * x**2
    logw = (np.log(2.0 * w * x) + np.log(width)[:, None]
            - 0.5 * z * z - 0.5 * np.log(2 * np.pi))
    return rate, logw


def _logsumexp(x):
    mx = np.max(x, axis=-1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(x - safe[..., None]), axis=-1))


def loglik_clayton_pair(params, pair_times, z):
    """Sum of Clayton pair log-likelihoods plus frailty densities.

    ``pair_times`` is ``(y_a, d_a, y_os, d_os)`` arrays; ``z`` the design.
    """
    y_a, d_a, y_o, d_o = (np.asarray(v, dtype=float) for v in pair_times)
    z = np.asarray(z, dtype=float).reshape(y_a.size, -1)
    p = params.as_dict()
    b = np.broadcast_to(p["b"], (y_a.size, 2))
    ga = p["gamma_a"] + b[:, 0]
    go = p["gamma_os"] + b[:, 1]
    if np.any(ga <= 0) or np.any(go <= 0):
        return -np.inf
    logba = np.log(ga) + z @ p["beta_a"]
    logbo = np.log(go) + z @ p["beta_os"]
    la, lo = safe_log(y_a), safe_log(y_o)
    ha = np.exp(logba + p["alpha_a"] * la) * (y_a > 0)
    ho = np.exp(logbo + p["alpha_os"] * lo) * (y_o > 0)
    lha = np.log(p["alpha_a"]) + logba + (p["alpha_a"] - 1.0) * la
    lho = np.log(p["alpha_os"]) + logbo + (p["alpha_os"] - 1.0) * lo
    terms = kernels.clayton_logterms(ha, ho, lha, lho, d_a, d_o, p["eta"])
    terms = terms + norm_logpdf(b[:, 0], p["sigma_a"]) + norm_logpdf(b[:, 1], p["sigma_os"])
    return float(np.sum(terms))


def ppd_sample_clayton(params, component, followup, z_row, u, subject=0):
    """Death times beyond ``followup`` for one subject alive at ``followup``.

    ``component`` is the subject's ``EventTime`` for the linked endpoint;
    ``u`` an array of uniforms (one death time per entry).
    """
    p = params.as_dict()
    b = np.atleast_2d(p["b"])
    b = b[subject if b.shape[0] > 1 else 0]
    logba = np.log(p["gamma_a"] + b[0]) + np.dot(z_row, p["beta_a"])
    logbo = np.log(p["gamma_os"] + b[1]) + np.dot(z_row, p["beta_os"])
    ha = np.exp(logba) * component.time ** p["alpha_a"]
    hc = np.exp(logbo) * followup ** p["alpha_os"]
    eta = p["eta"]
    u = np.asarray(u, dtype=float)
    eh = residual_chaz(eta * ha, eta * hc, eta, u, np.full(u.shape, component.indicator == 1))
    t = np.exp((np.log(eh) - np.log(eta) - logbo) / p["alpha_os"])
    return np.maximum(t, np.nextafter(followup, np.inf))


def loglik_ttp_os_copula(params, subjects):
    """TTP/OS pairing: same four-case likelihood with TTP as the component."""
    d = as_arrays(subjects)
    if d.n == 0:
        return 0.0
    return loglik_clayton_pair(params, (d.ttp_t, d.ttp_d, d.os_t, d.os_d), d.design(intercept=False))
