"""Illness-death model with a semi-Markov (clock-reset) 1 -> 2 transition.

States: 0 = alive without progression, 1 = progressed, 2 = dead. All three
transition hazards are Weibull with a common shape ``alpha``:
``pi_kl(t) = alpha * (1/gamma_kl)**alpha * t**(alpha-1)`` where
``gamma_kl = gamma_tilde_kl * exp(beta_kl' X)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .. import kernels
from ..mcmc import Block, Exponential, HalfNormal, Normal, ParameterSpace
from ..stats import truncated_weibull_quantile
from .base import Model, as_arrays

TRANSITIONS = ("01", "02", "12")


@dataclass(frozen=True)
class MultiStateParams:
    alpha: float
    gamma01: float
    gamma02: float
    gamma12: float
    beta01: np.ndarray
    beta02: np.ndarray
    beta12: np.ndarray

    def __post_init__(self):
        if self.alpha <= 0 or min(self.gamma01, self.gamma02, self.gamma12) <= 0:
            raise ValueError("alpha and all gamma must be positive")

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "gamma01": self.gamma01,
            "gamma02": self.gamma02,
            "gamma12": self.gamma12,
            "beta01": np.atleast_1d(np.asarray(self.beta01, dtype=float)),
            "beta02": np.atleast_1d(np.asarray(self.beta02, dtype=float)),
            "beta12": np.atleast_1d(np.asarray(self.beta12, dtype=float)),
        }

    def rates(self, x):
        """Canonical Weibull rates ``(1/gamma_kl)**alpha`` for design row ``x``."""
        p = self.as_dict()
        return {kl: _rate(p, kl, np.asarray(x, dtype=float)) for kl in TRANSITIONS}


def _log_rate(p, kl, x):
    return -p["alpha"] * (np.log(p[f"gamma{kl}"]) + x @ p[f"beta{kl}"])


def _rate(p, kl, x):
    return np.exp(_log_rate(p, kl, x))


def progressed_mask(prog_t, prog_d, os_t, os_d):
    """Subjects whose history includes a 0 -> 1 transition.

    Progression recorded at the death time itself counts as death without
    progression, since the 1 -> 2 sojourn would have length zero.
    """
    return (prog_d > 0) & ((prog_t < os_t) | (os_d == 0))


class MultiStateModel(Model):
    name = "multistate"

    def __init__(self, data):
        super().__init__(data)
        d = self.data
        self.x = d.design(intercept=False)
        self.prog = progressed_mask(d.prog_t, d.prog_d, d.os_t, d.os_d)
        self.t1 = np.where(self.prog, d.prog_t, d.os_t)
        self.t2 = np.where(self.prog, d.os_t - d.prog_t, 0.0)
        self.died_direct = ((~self.prog) & (d.os_d > 0)).astype(float)
        self.died_after = (self.prog & (d.os_d > 0)).astype(float)
        covs = ("arm",) + tuple(f"cov_{j + 1}" for j in range(d.n_covariates))
        p = self.x.shape[1]
        blocks = [Block("alpha", support="positive", kind="shape")]
        blocks += [Block(f"gamma{kl}", support="positive", kind="scale") for kl in TRANSITIONS]
        blocks += [Block(f"beta{kl}", size=p, labels=covs, vector=True) for kl in TRANSITIONS]
        self.space = ParameterSpace(blocks)
        self.priors = {"alpha": Exponential(0.1)}
        for kl in TRANSITIONS:
            self.priors[f"gamma{kl}"] = HalfNormal(100.0)
            self.priors[f"beta{kl}"] = Normal(10.0)

    def data_summary(self):
        d = self.data
        m0 = float(np.mean(d.os_t)) or 1.0
        m12 = float(np.mean(self.t2[self.prog])) if self.prog.any() else m0
        return {"n_subjects": d.n, "gamma01": m0, "gamma02": m0, "gamma12": max(m12, 1e-3)}

    def loglik_terms(self, p):
        a = p["alpha"]
        lr01 = _log_rate(p, "01", self.x)
        lr02 = _log_rate(p, "02", self.x)
        lr12 = _log_rate(p, "12", self.x)
        out = kernels.weibull_logterms(a, lr01, self.t1, self.prog.astype(float))
        out += kernels.weibull_logterms(a, lr02, self.t1, self.died_direct)
        out += np.where(self.prog, kernels.weibull_logterms(a, lr12, self.t2, self.died_after), 0.0)
        return out

    def ppd(self, draws, seed):
        u = self.ppd_uniforms(seed, draws.n_total, 3)
        a = self.alive
        d = self.data
        c = d.os_t[a][None, :]
        prog = self.prog[a][None, :]
        s = np.where(prog, d.prog_t[a][None, :], 0.0)
        alpha = draws.scalar("alpha")[:, None]
        x = self.x[a]

        def rate(kl):
            lg = np.log(draws.scalar(f"gamma{kl}"))[:, None] + draws.get(f"beta{kl}") @ x.T
            return np.exp(-alpha * lg)

        r01, r02, r12 = rate("01"), rate("02"), rate("12")
        # already progressed: residual sojourn in state 1 beyond c - s
        after = s + truncated_weibull_quantile(alpha, r12, u[:, :, 0], np.maximum(c - s, 0.0))
        # still in state 0: competing latent exits, both beyond c
        t01 = truncated_weibull_quantile(alpha, r01, u[:, :, 0], c)
        t02 = truncated_weibull_quantile(alpha, r02, u[:, :, 1], c)
        fresh = truncated_weibull_quantile(alpha, r12, u[:, :, 2], 0.0)
        before = np.where(t02 <= t01, t02, t01 + fresh)
        times = np.where(prog, after, before)
        times = np.maximum(times, np.nextafter(c, np.inf))
        return self.make_ppd(times)


def loglik_multistate(params, subjects):
    data = as_arrays(subjects)
    if data.n == 0:
        return 0.0
    return float(np.sum(MultiStateModel(data).loglik_terms(params.as_dict())))


def transition_probability(params, from_state, to_state, t1, t2, x):
    """``P_kl(t1, t2)``: in state ``l`` at ``t2`` having entered ``k`` at ``t1``.

    Clock-reset semantics, so only ``d = t2 - t1`` matters. ``P00``,
    ``P11`` and ``P12`` are closed form. ``P01`` and ``P02`` integrate over
    the exit time ``u`` from state 0 in ``s = (u/d)**alpha``, which turns
    ``pi_0l(u) du`` into ``b_0l d**alpha ds`` and removes the endpoint
    singularity at ``u = 0``; adaptive quadrature handles the ``(d-u)**alpha``
    kink at ``s = 1``.
    """
    pair = (int(from_state), int(to_state))
    if pair not in {(0, 0), (1, 1), (1, 2), (0, 1), (0, 2)}:
        raise ValueError(f"unsupported transition {pair}")
    if not 0 <= t1 <= t2:
        raise ValueError("need 0 <= t1 <= t2")
    r = params.rates(x)
    a = params.alpha
    d = t2 - t1
    da = d**a
    r0 = r["01"] + r["02"]
    if pair == (0, 0):
        return float(np.exp(-r0 * da))
    if pair == (1, 1):
        return float(np.exp(-r["12"] * da))
    if pair == (1, 2):
        return float(-np.expm1(-r["12"] * da))
    if d == 0:
        return 0.0

    def exit_density(s, after):
        # leave state 0 for state 1 at u = d*s**(1/alpha), then stay or die by t2
        u = d * s ** (1.0 / a)
        h12 = r["12"] * (d - u) ** a
        tail = np.exp(-h12) if after == "stay" else -np.expm1(-h12)
        return np.exp(-r0 * da * s) * tail

    opts = {"epsabs": 1e-13, "epsrel": 1e-11, "limit": 200}
    if pair == (0, 1):
        val = r["01"] * da * integrate.quad(exit_density, 0.0, 1.0, args=("stay",), **opts)[0]
    else:
        direct = r["02"] / r0 * -np.expm1(-r0 * da)  # closed form
        via = r["01"] * da * integrate.quad(exit_density, 0.0, 1.0, args=("die",), **opts)[0]
        val = direct + via
    return float(min(max(val, 0.0), 1.0))


def ppd_sample_multistate(params, followup, x, u, progressed_at=None):
    """Death times beyond ``followup``; ``u`` has shape ``(..., 3)``.

    ``progressed_at`` is the progression time when the subject is already
    in state 1, ``None`` otherwise.
    """
    r = params.rates(x)
    a = params.alpha
    u = np.asarray(u, dtype=float)
    if progressed_at is not None:
        lag = max(followup - progressed_at, 0.0)
        t = progressed_at + truncated_weibull_quantile(a, r["12"], u[..., 0], lag)
    else:
        t01 = truncated_weibull_quantile(a, r["01"], u[..., 0], followup)
        t02 = truncated_weibull_quantile(a, r["02"], u[..., 1], followup)
        fresh = truncated_weibull_quantile(a, r["12"], u[..., 2], 0.0)
        t = np.where(t02 <= t01, t02, t01 + fresh)
    return np.maximum(t, np.nextafter(followup, np.inf))
