"""Pieces shared by every model: longitudinal sufficient statistics,
random-effect densities, the fit/predict plumbing and the PPD container."""

import math
from dataclasses import dataclass

import numpy as np

from ..mcmc import MCMCSettings, PriorSpec, initialize, run_mcmc
from ..stats import fmt_float, subject_uniforms
from ..trial import TrialArrays

HORIZON_CAP = 600.0
_LOG_2PI = math.log(2.0 * math.pi)


def as_arrays(data):
    if isinstance(data, TrialArrays):
        return data
    return TrialArrays.from_subjects(data)


def safe_log(y):
    y = np.asarray(y, dtype=float)
    return np.log(np.where(y > 0, y, 1.0))


def norm_logpdf(x, sd):
    return -0.5 * (x / sd) ** 2 - math.log(sd) - 0.5 * _LOG_2PI


def bvn_logpdf(b1, b2, s1, s2, rho):
    """Zero-mean bivariate normal log density."""
    u = b1 / s1
    v = b2 / s2
    one_m = 1.0 - rho * rho
    q = (u * u - 2.0 * rho * u * v + v * v) / one_m
    return -0.5 * q - math.log(s1 * s2) - 0.5 * math.log(one_m) - _LOG_2PI


class LongitudinalStats:
    """Per-subject sums for residuals of the linear form ``m0 + m1 * t``.

    ``sum_j (z_ij - m0_i - m1_i t_ij)**2`` is assembled from precomputed
    moments, so a likelihood evaluation is O(n) rather than O(visits).
    """

    def __init__(self, data):
        n = data.n
        sub = data.tl_subject
        t, z = data.tl_time, data.tl_value
        self.count = np.bincount(sub, minlength=n).astype(float)
        self.st = np.bincount(sub, weights=t, minlength=n)
        self.stt = np.bincount(sub, weights=t * t, minlength=n)
        self.sz = np.bincount(sub, weights=z, minlength=n)
        self.szt = np.bincount(sub, weights=z * t, minlength=n)
        self.szz = np.bincount(sub, weights=z * z, minlength=n)
        self.n_obs = int(self.count.sum())
        self.mean_value = float(z.mean()) if z.size else 0.0

    def resid_ss(self, m0, m1):
        ss = (
            self.szz
            - 2.0 * m0 * self.sz
            - 2.0 * m1 * self.szt
            + self.count * m0 * m0
            + 2.0 * m0 * m1 * self.st
            + m1 * m1 * self.stt
        )
        return np.maximum(ss, 0.0)

    def loglik(self, m0, m1, sigma):
        return -0.5 * self.count * (_LOG_2PI + 2.0 * math.log(sigma)) - self.resid_ss(m0, m1) / (
            2.0 * sigma * sigma
        )

    def re_posterior(self, r0, slope, s1, s2, rho, sigma):
        """Gaussian posterior of ``(b1, b2)`` given the series.

        ``r0`` is each subject's fixed-effect intercept, ``slope`` the fixed
        time slope. Returns mean ``(m1, m2)`` and Cholesky ``(l11, l21, l22)``.
        """
        c12 = rho * s1 * s2
        det = (s1 * s1) * (s2 * s2) - c12 * c12
        p11 = s2 * s2 / det + self.count / sigma**2
        p12 = -c12 / det + self.st / sigma**2
        p22 = s1 * s1 / det + self.stt / sigma**2
        # residual sums with fixed effects removed
        r = self.sz - self.count * r0 - slope * self.st
        rt = self.szt - r0 * self.st - slope * self.stt
        g1 = r / sigma**2
        g2 = rt / sigma**2
        pdet = p11 * p22 - p12 * p12
        v11 = p22 / pdet
        v12 = -p12 / pdet
        v22 = p11 / pdet
        m1 = v11 * g1 + v12 * g2
        m2 = v12 * g1 + v22 * g2
        l11 = np.sqrt(v11)
        l21 = v12 / l11
        l22 = np.sqrt(np.maximum(v22 - l21 * l21, 0.0))
        return m1, m2, l11, l21, l22


@dataclass
class PpdMatrix:
    """Predicted death times for subjects alive at the snapshot.

    ``times[t, j]`` is the draw for subject ``subject_ids[j]`` at kept
    iteration ``t`` (months since that subject's randomization).
    """

    times: np.ndarray
    subject_ids: list
    followup: np.ndarray
    capped: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 2 or self.times.shape[1] != len(self.subject_ids):
            raise ValueError("times must be (iterations, alive subjects)")
        self.followup = np.asarray(self.followup, dtype=float)
        if self.capped is None:
            self.capped = np.zeros(self.times.shape, dtype=bool)
        if np.any(self.times <= self.followup[None, :]):
            raise ValueError("predicted death time at or before follow-up")

    @property
    def n_iter(self):
        return self.times.shape[0]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,subject_id,pred_time_months\n")
            for t in range(self.n_iter):
                row = self.times[t]
                for sid, v in zip(self.subject_ids, row):
                    fh.write(f"{t},{sid},{fmt_float(v)}\n")

    def save(self, path):
        np.savez(path, times=self.times, followup=self.followup, capped=self.capped,
                 subject_ids=np.array(self.subject_ids, dtype=str))

    @classmethod
    def load(cls, path):
        z = np.load(path)
        return cls(z["times"], [str(s) for s in z["subject_ids"]], z["followup"], z["capped"])


def cap_times(times, followup, cap=HORIZON_CAP):
    """Clamp to the horizon, keeping the strict-truncation guarantee."""
    capped = times > cap
    times = np.where(capped, np.maximum(cap, np.nextafter(followup, np.inf)), times)
    return times, capped


class Model:
    """Base class: subclasses define the space, priors and per-subject terms."""

    name = "model"
    bma_label = None
    subject_block = None
    os_linked = ()

    def __init__(self, data):
        self.data = as_arrays(data)
        self.alive = np.flatnonzero(self.data.os_d == 0)

    # subclasses fill these in
    space = None
    priors = None
    moves = ()

    def data_summary(self):
        return {"n_subjects": self.data.n}

    def initial_values(self):
        return initialize(self.space, self.priors, self.data_summary())

    def loglik_terms(self, p):
        raise NotImplementedError

    def __call__(self, p):
        return self.loglik_terms(p)

    def fit(self, settings=None, workers=1):
        settings = settings or MCMCSettings()
        keep = self.alive if self.subject_block else None
        return run_mcmc(
            self,
            self.space,
            PriorSpec(self.priors),
            settings,
            init=self.initial_values(),
            keep_subjects=keep,
            workers=workers,
            moves=self.moves,
        )

    def ppd_uniforms(self, seed, n_iter, n_per):
        ids = [self.data.ids[i] for i in self.alive]
        return subject_uniforms(seed, self.name, ids, n_iter, n_per)

    def make_ppd(self, times, capped_extra=None):
        follow = self.data.os_t[self.alive]
        times, capped = cap_times(times, follow[None, :])
        if capped_extra is not None:
            capped |= capped_extra
        return PpdMatrix(times, [self.data.ids[i] for i in self.alive], follow, capped)

    def log_prior_linked(self, draws):
        """Per-iteration log prior of the OS-linked global parameters."""
        total = np.zeros(draws.n_total)
        for name in self.os_linked:
            prior = self.priors[name]
            vals = draws.get(name)
            for col in vals.T:
                total += np.array([prior.logpdf(float(v)) for v in col])
        return total

    def linked_matrix(self, draws):
        return np.hstack([draws.get(nm) for nm in self.os_linked])
