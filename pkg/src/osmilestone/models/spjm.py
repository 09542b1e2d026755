"""Shared-parameter joint model over TL, NT, NL and OS with four latent terms.

Latent terms per subject: ``(b1, b2)`` bivariate normal (random intercept
and slope of the lesion series), ``b3`` and ``b4`` independent normals. Each
event endpoint is Weibull with subject rate ``theta``:

    log theta_NT = Z'beta_NT + phi1*b1 + phi2*b2 + b3
    log theta_NL = Z'beta_NL + phi3*b1 + phi4*b2 + b4
    log theta_OS = Z'beta_OS + phi5*b1 + phi6*b2 + phi7*b3 + phi8*b4

When a dataset carries no NT events the NT endpoint is dropped together
with ``b3``, ``phi1``, ``phi2`` and ``phi7``.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..mcmc import Block, Exponential, HalfNormal, Normal, ParameterSpace, ScaleMove, ShiftMove, Uniform
from ..stats import truncated_weibull_quantile
from .base import LongitudinalStats, Model, as_arrays, bvn_logpdf, norm_logpdf

PHI_ALL = (1, 2, 3, 4, 5, 6, 7, 8)
PHI_NO_NT = (3, 4, 5, 6, 8)


@dataclass(frozen=True)
class SpjmParams:
    beta0: np.ndarray
    sigma_y: float
    sigma_b1: float
    sigma_b2: float
    rho: float
    sigma_b3: float
    sigma_b4: float
    alpha_nt: float
    alpha_nl: float
    alpha_os: float
    beta_nt: np.ndarray
    beta_nl: np.ndarray
    beta_os: np.ndarray
    phi: np.ndarray  # phi1..phi8
    b: np.ndarray = field(default=None)  # (n, 4): b1, b2, b3, b4

    def __post_init__(self):
        if min(self.sigma_y, self.sigma_b1, self.sigma_b2, self.sigma_b3, self.sigma_b4) <= 0:
            raise ValueError("standard deviations must be positive")
        if min(self.alpha_nt, self.alpha_nl, self.alpha_os) <= 0:
            raise ValueError("shapes must be positive")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")

    def as_dict(self):
        return {
            "beta0": np.asarray(self.beta0, dtype=float),
            "sigma_y": self.sigma_y,
            "sigma_b1": self.sigma_b1,
            "sigma_b2": self.sigma_b2,
            "rho": self.rho,
            "sigma_b3": self.sigma_b3,
            "sigma_b4": self.sigma_b4,
            "alpha_nt": self.alpha_nt,
            "alpha_nl": self.alpha_nl,
            "alpha_os": self.alpha_os,
            "beta_nt": np.asarray(self.beta_nt, dtype=float),
            "beta_nl": np.asarray(self.beta_nl, dtype=float),
            "beta_os": np.asarray(self.beta_os, dtype=float),
            "phi": np.asarray(self.phi, dtype=float),
            "b": np.asarray(self.b, dtype=float).reshape(-1, 4),
        }


class SpjmModel(Model):
    name = "spjm"
    subject_block = "b"

    def __init__(self, data, include_nt=None):
        super().__init__(data)
        d = self.data
        if include_nt is None:
            include_nt = bool(np.any(d.nt_d > 0))
        self.include_nt = include_nt
        self.phi_index = PHI_ALL if include_nt else PHI_NO_NT
        self.xs = d.design(intercept=True)
        self.long = LongitudinalStats(d)
        covs = tuple(f"cov_{j + 1}" for j in range(d.n_covariates))
        zlab = ("(Intercept)", "arm") + covs
        p = self.xs.shape[1]
        blocks = [
            Block("beta0", size=p + 1, labels=zlab + ("time",), vector=True),
            Block("sigma_y", support="positive", kind="sd"),
            Block("sigma_b1", support="positive", kind="sd"),
            Block("sigma_b2", support="positive", kind="sd"),
            Block("rho", support="interval", kind="corr"),
        ]
        if include_nt:
            blocks.append(Block("sigma_b3", support="positive", kind="sd"))
        blocks.append(Block("sigma_b4", support="positive", kind="sd"))
        ends = ("nt", "nl", "os") if include_nt else ("nl", "os")
        self.endpoints = ends
        for e in ends:
            blocks.append(Block(f"alpha_{e}", support="positive", kind="shape"))
        for e in ends:
            blocks.append(Block(f"beta_{e}", size=p, labels=zlab, vector=True))
        blocks.append(Block("phi", size=len(self.phi_index), labels=tuple(map(str, self.phi_index)), vector=True))
        n_re = 4 if include_nt else 3
        blocks.append(Block("b", size=n_re, role="subject", kind="re"))
        self.space = ParameterSpace(blocks)
        self.priors = {
            "beta0": Normal(100.0),
            "sigma_y": HalfNormal(100.0),
            "sigma_b1": HalfNormal(100.0),
            "sigma_b2": HalfNormal(10.0),
            "rho": Uniform(-1.0, 1.0),
            "sigma_b3": HalfNormal(2.0),
            "sigma_b4": HalfNormal(2.0),
            "phi": Normal(1.0),
        }
        for e in ends:
            self.priors[f"alpha_{e}"] = Exponential(0.1)
            self.priors[f"beta_{e}"] = Normal(10.0)
        if not include_nt:
            del self.priors["sigma_b3"]
        self.col_b4 = 3 if include_nt else 2
        moves = [
            ShiftMove("beta0", "b", column=0, index=0),
            ShiftMove("beta0", "b", column=1, index=p),
            ScaleMove("sigma_b1", "b", column=0),
            ScaleMove("sigma_b2", "b", column=1),
            ScaleMove("sigma_b4", "b", column=self.col_b4),
        ]
        if include_nt:
            moves.append(ScaleMove("sigma_b3", "b", column=2))
        self.moves = tuple(moves)

    def data_summary(self):
        d = self.data
        v = d.tl_value
        sd = float(np.std(v)) if v.size > 1 else 1.0
        beta0 = np.zeros(self.xs.shape[1] + 1)
        beta0[0] = self.long.mean_value
        out = {
            "n_subjects": d.n,
            "beta0": beta0,
            "sigma_y": max(0.25 * sd, 1e-3),
            "sigma_b1": max(sd, 1e-3),
            "sigma_b2": 1.0,
            "sigma_b3": 0.5,
            "sigma_b4": 0.5,
        }
        for e in self.endpoints:
            start = np.zeros(self.xs.shape[1])
            start[0] = -np.log(max(float(np.mean(getattr(d, f"{e}_t"))), 1e-6))
            out[f"beta_{e}"] = start
        return out

    def initial_values(self):
        vals = super().initial_values()
        hint = np.full(self.space["b"].size, 0.3)
        hint[0] = 0.3 * vals["sigma_b1"][0]
        hint[1] = 0.1
        vals["b:proposal_sd"] = hint
        return vals

    def _phi(self, p):
        full = np.zeros(9)
        full[list(self.phi_index)] = p["phi"]
        return full

    def log_rates(self, p, b, xs):
        """Subject log-rates ``log theta`` for each endpoint."""
        phi = self._phi(p)
        b1, b2 = b[..., 0], b[..., 1]
        b4 = b[..., self.col_b4]
        b3 = b[..., 2] if self.include_nt else 0.0
        out = {
            "nl": xs @ p["beta_nl"] + phi[3] * b1 + phi[4] * b2 + b4,
            "os": xs @ p["beta_os"] + phi[5] * b1 + phi[6] * b2 + phi[7] * b3 + phi[8] * b4,
        }
        if self.include_nt:
            out["nt"] = xs @ p["beta_nt"] + phi[1] * b1 + phi[2] * b2 + b3
        return out

    def loglik_terms(self, p):
        d = self.data
        b = p["b"]
        bm = p["beta0"]
        m0 = self.xs @ bm[:-1] + b[:, 0]
        m1 = bm[-1] + b[:, 1]
        out = self.long.loglik(m0, m1, p["sigma_y"])
        out += bvn_logpdf(b[:, 0], b[:, 1], p["sigma_b1"], p["sigma_b2"], p["rho"])
        out += norm_logpdf(b[:, self.col_b4], p["sigma_b4"])
        if self.include_nt:
            out += norm_logpdf(b[:, 2], p["sigma_b3"])
        rates = self.log_rates(p, b, self.xs)
        for e in self.endpoints:
            out += kernels.weibull_logterms(
                p[f"alpha_{e}"], rates[e], getattr(d, f"{e}_t"), getattr(d, f"{e}_d")
            )
        return out

    def ppd(self, draws, seed):
        u = self.ppd_uniforms(seed, draws.n_total, 1)[:, :, 0]
        a = self.alive
        b = draws.get("b")
        follow = self.data.os_t[a][None, :]
        times = np.empty(u.shape)
        for t in range(draws.n_total):
            p = draws.params_at(t)
            lr = self.log_rates(p, b[t], self.xs[a])["os"]
            times[t] = truncated_weibull_quantile(p["alpha_os"], np.exp(lr), u[t], follow[0])
        return self.make_ppd(times)


def _params_for(model, params):
    p = params.as_dict()
    if not model.include_nt:
        p["phi"] = p["phi"][[i - 1 for i in PHI_NO_NT]]
        p["b"] = p["b"][:, [0, 1, 3]]
    return p


def loglik_spjm(params, subjects, include_nt=True):
    data = as_arrays(subjects)
    if data.n == 0:
        return 0.0
    model = SpjmModel(data, include_nt=include_nt)
    return float(np.sum(model.loglik_terms(_params_for(model, params))))


def ppd_sample_spjm(params, subjects, subject_index, u, include_nt=True):
    """Truncated-Weibull death times for one alive subject given a draw."""
    model = SpjmModel(as_arrays(subjects), include_nt=include_nt)
    p = _params_for(model, params)
    i = subject_index
    lr = model.log_rates(p, p["b"][i], model.xs[i])["os"]
    return truncated_weibull_quantile(p["alpha_os"], np.exp(lr), u, model.data.os_t[i])
