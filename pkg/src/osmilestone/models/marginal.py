"""Weibull proportional-hazards model for OS alone."""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..mcmc import Block, Exponential, HalfNormal, Normal, ParameterSpace
from ..stats import truncated_weibull_quantile
from .base import Model, as_arrays


@dataclass(frozen=True)
class MarginalOsParams:
    alpha: float
    gamma: float
    beta: np.ndarray

    def __post_init__(self):
        if not (self.alpha > 0 and self.gamma > 0):
            raise ValueError("alpha and gamma must be positive")


def _design(data):
    return data.design(intercept=False)


def marginal_terms(params, data):
    z = _design(data)
    logb = np.log(params.gamma) + z @ np.asarray(params.beta, dtype=float)
    return kernels.weibull_logterms(params.alpha, logb, data.os_t, data.os_d)


def loglik_marginal_os(params, subjects):
    """Sum over subjects of ``d*log h(y) - H(y)``."""
    data = as_arrays(subjects)
    if data.n == 0:
        return 0.0
    return float(np.sum(marginal_terms(params, data)))


def ppd_sample_marginal(params, z_row, followup, u):
    """Death time beyond ``followup`` by truncated inversion; broadcasts over ``u``."""
    rate = params.gamma * np.exp(np.dot(z_row, params.beta))
    return truncated_weibull_quantile(params.alpha, rate, u, followup)


class MarginalModel(Model):
    name = "marginal"
    bma_label = "OS"
    os_linked = ("alpha", "gamma", "beta")

    def __init__(self, data):
        super().__init__(data)
        self.z = _design(self.data)
        labels = ("arm",) + tuple(f"cov_{j + 1}" for j in range(self.data.n_covariates))
        self.space = ParameterSpace(
            [
                Block("alpha", support="positive", kind="shape"),
                Block("gamma", support="positive", kind="rate"),
                Block("beta", size=self.z.shape[1], kind="coef", labels=labels, vector=True),
            ]
        )
        self.priors = {"alpha": Exponential(0.1), "gamma": HalfNormal(10.0), "beta": Normal(10.0)}

    def data_summary(self):
        return {"n_subjects": self.data.n, "gamma": float(np.mean(self.data.os_t))}

    def loglik_terms(self, p):
        logb = np.log(p["gamma"]) + self.z @ p["beta"]
        return kernels.weibull_logterms(p["alpha"], logb, self.data.os_t, self.data.os_d)

    def os_conditional_loglik(self, draws):
        alpha = draws.scalar("alpha")
        gamma = draws.scalar("gamma")
        beta = draws.get("beta")
        out = np.empty(draws.n_total)
        for t in range(draws.n_total):
            logb = np.log(gamma[t]) + self.z @ beta[t]
            out[t] = np.sum(kernels.weibull_logterms(alpha[t], logb, self.data.os_t, self.data.os_d))
        return out

    def ppd(self, draws, seed):
        u = self.ppd_uniforms(seed, draws.n_total, 1)[:, :, 0]
        alpha = draws.scalar("alpha")[:, None]
        rate = draws.scalar("gamma")[:, None] * np.exp(draws.get("beta") @ self.z[self.alive].T)
        follow = self.data.os_t[self.alive][None, :]
        times = truncated_weibull_quantile(alpha, rate, u, follow)
        return self.make_ppd(times)


__all__ = ["MarginalOsParams", "MarginalModel", "loglik_marginal_os", "ppd_sample_marginal",
           "marginal_terms"]
