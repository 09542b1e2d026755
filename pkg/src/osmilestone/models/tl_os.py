"""Shared-parameter joint model of the target-lesion series and OS.

Longitudinal part: ``z_ij = mu_i(t_ij) + eps`` with
``mu_i(t) = X_i(t)'beta_mu + b1_i + b2_i t`` and ``X_i(t) = [1, arm, covs, t]``.
OS hazard: ``alpha*gamma*t**(alpha-1)*exp(Z_i'beta_os + lambda*mu_i(t))``.
Because ``mu_i`` is linear in ``t`` the cumulative hazard reduces to
``A_i*y**alpha*I(k_i*y)`` with a one-dimensional smooth integral ``I``.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..mcmc import (
    Block,
    Exponential,
    HalfNormal,
    Normal,
    ParameterSpace,
    ScaleMove,
    ShiftMove,
    Uniform,
)
from ..stats import unit_gauss_hermite, unit_gauss_legendre
from .base import HORIZON_CAP, LongitudinalStats, Model, as_arrays, bvn_logpdf, safe_log

N_QUAD = 15
N_HERMITE = 8


@dataclass(frozen=True)
class TlOsParams:
    beta_mu: np.ndarray
    sigma_eps: float
    sigma1: float
    sigma2: float
    rho: float
    b: np.ndarray
    beta_os: np.ndarray
    gamma_os: float
    alpha_os_tl: float
    lambda_assoc: float

    def __post_init__(self):
        if min(self.sigma_eps, self.sigma1, self.sigma2) <= 0:
            raise ValueError("standard deviations must be positive")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.gamma_os <= 0 or self.alpha_os_tl <= 0:
            raise ValueError("Weibull shape and scale must be positive")

    def as_dict(self):
        return {
            "beta_mu": np.asarray(self.beta_mu, dtype=float),
            "sigma_eps": self.sigma_eps,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "rho": self.rho,
            "b": np.asarray(self.b, dtype=float).reshape(-1, 2),
            "beta_os": np.asarray(self.beta_os, dtype=float),
            "gamma_os": self.gamma_os,
            "alpha_os": self.alpha_os_tl,
            "lam": self.lambda_assoc,
        }


class TlOsModel(Model):
    name = "tl_os"
    bma_label = "T"
    subject_block = "b"
    os_linked = ("alpha_os", "gamma_os", "beta_os", "lam")

    def __init__(self, data):
        super().__init__(data)
        d = self.data
        self.xs = d.design(intercept=True)  # static part of X_i(t)
        self.z = d.design(intercept=False)
        self.long = LongitudinalStats(d)
        self.logy = safe_log(d.os_t)
        self.nodes, self.weights = unit_gauss_legendre(N_QUAD)
        covs = tuple(f"cov_{j + 1}" for j in range(d.n_covariates))
        self.space = ParameterSpace(
            [
                Block("beta_mu", size=self.xs.shape[1] + 1, labels=("(Intercept)", "arm") + covs + ("time",), vector=True),
                Block("sigma_eps", support="positive", kind="sd"),
                Block("sigma1", support="positive", kind="sd"),
                Block("sigma2", support="positive", kind="sd"),
                Block("rho", support="interval", kind="corr"),
                Block("beta_os", size=self.z.shape[1], labels=("arm",) + covs, vector=True),
                Block("gamma_os", support="positive", kind="rate"),
                Block("alpha_os", support="positive", kind="shape"),
                Block("lam"),
                Block("b", size=2, role="subject", kind="re"),
            ]
        )
        self.priors = {
            "beta_mu": Normal(100.0),
            "sigma_eps": HalfNormal(100.0),
            "sigma1": HalfNormal(100.0),
            "sigma2": HalfNormal(10.0),
            "rho": Uniform(-1.0, 1.0),
            "beta_os": Normal(10.0),
            "gamma_os": HalfNormal(10.0),
            "alpha_os": Exponential(0.1),
            "lam": Normal(10.0),
        }
        self.moves = (
            ShiftMove("beta_mu", "b", column=0, index=0),
            ShiftMove("beta_mu", "b", column=1, index=self.xs.shape[1]),
            ScaleMove("sigma1", "b", column=0),
            ScaleMove("sigma2", "b", column=1),
        )

    def data_summary(self):
        v = self.data.tl_value
        sd = float(np.std(v)) if v.size > 1 else 1.0
        n_beta = self.xs.shape[1] + 1
        beta0 = np.zeros(n_beta)
        beta0[0] = self.long.mean_value
        return {
            "n_subjects": self.data.n,
            "gamma_os": float(np.mean(self.data.os_t)),
            "beta_mu": beta0,
            "sigma_eps": max(0.25 * sd, 1e-3),
            "sigma1": max(sd, 1e-3),
            "sigma2": 1.0,
        }

    def initial_values(self):
        vals = super().initial_values()
        vals["b:proposal_sd"] = np.array([0.3 * vals["sigma1"][0], 0.1])
        return vals

    # -- likelihood ---------------------------------------------------------

    def _linear(self, p):
        bm = p["beta_mu"]
        b = p["b"]
        m0 = self.xs @ bm[:-1] + b[:, 0]
        m1 = bm[-1] + b[:, 1]
        return m0, m1

    def os_terms(self, p, m0, m1):
        d = self.data
        lam = p["lam"]
        alpha = p["alpha_os"]
        loga = np.log(p["gamma_os"]) + self.z @ p["beta_os"] + lam * m0
        k = lam * m1
        y = d.os_t
        fac = kernels.tl_chaz_factor(alpha, k * y, self.nodes, self.weights)
        H = np.exp(loga + alpha * self.logy) * fac * (y > 0)
        ev = np.where(d.os_d > 0, np.log(alpha) + loga + k * y + (alpha - 1.0) * self.logy, 0.0)
        return ev - H

    def loglik_terms(self, p):
        m0, m1 = self._linear(p)
        b = p["b"]
        out = self.long.loglik(m0, m1, p["sigma_eps"])
        out += bvn_logpdf(b[:, 0], b[:, 1], p["sigma1"], p["sigma2"], p["rho"])
        out += self.os_terms(p, m0, m1)
        return out

    def cumulative_hazard(self, p, t, subject):
        """``H_i(t)`` for one subject via the quadrature kernel."""
        m0, m1 = self._linear(p)
        lam = p["lam"]
        loga = np.log(p["gamma_os"]) + self.z[subject] @ p["beta_os"] + lam * m0[subject]
        t = np.asarray(t, dtype=float)
        fac = kernels.tl_chaz_factor(p["alpha_os"], lam * m1[subject] * t, self.nodes, self.weights)
        return np.exp(loga) * t ** p["alpha_os"] * fac

    # -- model averaging ----------------------------------------------------

    def os_conditional_loglik(self, draws):
        """``log p(OS data | lesion data, theta)`` per kept iteration."""
        z_gh, w_gh = unit_gauss_hermite(N_HERMITE)
        logw = np.log(w_gh)
        bm = draws.get("beta_mu")
        cols = {nm: draws.scalar(nm) for nm in ("sigma_eps", "sigma1", "sigma2", "rho",
                                                 "gamma_os", "alpha_os", "lam")}
        beta_os = draws.get("beta_os")
        d = self.data
        out = np.empty(draws.n_total)
        for t in range(draws.n_total):
            r0 = self.xs @ bm[t, :-1]
            slope = bm[t, -1]
            m1, m2, l11, l21, l22 = self.long.re_posterior(
                r0, slope, cols["sigma1"][t], cols["sigma2"][t], cols["rho"][t], cols["sigma_eps"][t]
            )
            lam = cols["lam"][t]
            log_a0 = np.log(cols["gamma_os"][t]) + self.z @ beta_os[t] + lam * r0
            terms = kernels.tl_integrated_os(
                cols["alpha_os"][t], log_a0, lam, slope, m1, m2, l11, l21, l22,
                d.os_t, d.os_d, z_gh, logw, self.nodes, self.weights,
            )
            out[t] = float(np.sum(terms))
        return out

    # -- prediction ---------------------------------------------------------

    def ppd(self, draws, seed):
        u = self.ppd_uniforms(seed, draws.n_total, 1)[:, :, 0]
        a = self.alive
        b = draws.get("b")  # (iters, alive, 2)
        bm = draws.get("beta_mu")
        lam = draws.scalar("lam")[:, None]
        alpha = draws.scalar("alpha_os")
        m0 = bm[:, :-1] @ self.xs[a].T + b[:, :, 0]
        m1 = bm[:, -1:] + b[:, :, 1]
        loga = np.log(draws.scalar("gamma_os"))[:, None] + draws.get("beta_os") @ self.z[a].T + lam * m0
        k = lam * m1
        follow = np.broadcast_to(self.data.os_t[a], loga.shape)
        e = -np.log(u)
        times = np.empty(loga.shape)
        capped = np.zeros(loga.shape, dtype=bool)
        for t in range(loga.shape[0]):
            times[t], capped[t] = kernels.tl_ppd_solve(
                loga[t], alpha[t], k[t], follow[t], e[t], HORIZON_CAP, self.nodes, self.weights
            )
        return self.make_ppd(times, capped)


def loglik_tl_os(params, subjects):
    data = as_arrays(subjects)
    if data.n == 0:
        return 0.0
    return float(np.sum(TlOsModel(data).loglik_terms(params.as_dict())))


def ppd_sample_tl_os(params, subjects, subject_index, u):
    """Death times for one subject (alive at its follow-up) given a draw.

    ``u`` holds uniforms; each maps to ``E = -log(u)`` and the root of
    ``H(T) - H(c) = E``. Returns ``(times, capped)``.
    """
    model = TlOsModel(as_arrays(subjects))
    p = params.as_dict()
    m0, m1 = model._linear(p)
    i = subject_index
    loga = np.log(p["gamma_os"]) + model.z[i] @ p["beta_os"] + p["lam"] * m0[i]
    u = np.asarray(u, dtype=float).ravel()
    return kernels.tl_ppd_solve(
        np.full(u.size, loga), p["alpha_os"], np.full(u.size, p["lam"] * m1[i]),
        np.full(u.size, model.data.os_t[i]), -np.log(u), HORIZON_CAP, model.nodes, model.weights,
    )
