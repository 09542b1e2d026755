"""Shared numerical machinery: Weibull kernels, quadrature, HPD, R-hat."""

import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class WeibullHazard:
    """Weibull hazard ``h(t) = shape * rate_scale * t**(shape - 1)``.

    Every model in the package maps its own parameterization onto this
    form, so ``S(t) = exp(-rate_scale * t**shape)`` is the single survival
    kernel in use.
    """

    shape: float
    rate_scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate_scale > 0):
            raise ValueError(
                f"Weibull shape and rate must be positive, got "
                f"shape={self.shape}, rate_scale={self.rate_scale}"
            )

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        return self.shape * self.rate_scale * t ** (self.shape - 1.0)

    def cumulative_hazard(self, t):
        t = np.asarray(t, dtype=float)
        return self.rate_scale * t**self.shape

    def survival(self, t):
        return weibull_survival(self, t)


def weibull_survival(h, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("survival evaluated at negative time")
    return np.exp(-h.rate_scale * t**h.shape)


def truncated_weibull_quantile(shape, rate, u, t0):
    """Quantile of ``T | T > t0`` for Weibull(shape, rate); broadcasts.

    The result is forced strictly above ``t0`` so that round-off on tiny
    ``u`` can never return the truncation point itself.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    t0 = np.asarray(t0, dtype=float)
    u = np.asarray(u, dtype=float)
    t = (t0**shape - np.log1p(-u) / rate) ** (1.0 / shape)
    return np.maximum(t, np.nextafter(t0, np.inf))


def weibull_inverse_truncated(h, u, lower_trunc=0.0):
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    if np.any(np.asarray(lower_trunc) < 0):
        raise ValueError("truncation point must be nonnegative")
    return truncated_weibull_quantile(h.shape, h.rate_scale, u_arr, lower_trunc)


def conditional_weibull_cdf(h, t, t0):
    """``P(T <= t | T > t0)``."""
    t = np.asarray(t, dtype=float)
    return -np.expm1(-h.rate_scale * (t**h.shape - np.asarray(t0) ** h.shape))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

# Exponent used to absorb the t**(shape-1) endpoint singularity: with
# t = T * w**(POWER_SUB / shape) the Weibull factor becomes a polynomial in w.
POWER_SUB = 3.0


@lru_cache(maxsize=None)
def unit_gauss_legendre(n_nodes):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=None)
def unit_gauss_hermite(n_nodes):
    """Nodes/weights for expectations under N(0, 1); weights sum to one."""
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_chaz(log_hazard_fn, t_end, n_nodes=15, shape=None):
    """Cumulative hazard ``int_0^t_end exp(log_hazard_fn(t)) dt``.

    ``log_hazard_fn`` must accept an array of times. When the hazard carries
    a Weibull ``t**(shape-1)`` factor, pass ``shape`` so the nodes are placed
    on ``t = t_end * w**(3/shape)``; that turns the integrand into a smooth
    function of ``w`` and restores Gauss-Legendre's polynomial exactness.
    """
    if n_nodes < 2:
        raise ValueError("need at least 2 quadrature nodes")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if t_end == 0:
        return 0.0
    w_nodes, w_weights = unit_gauss_legendre(n_nodes)
    if shape is None:
        t = t_end * w_nodes
        return float(t_end * np.sum(w_weights * np.exp(log_hazard_fn(t))))
    p = POWER_SUB / shape
    t = t_end * w_nodes**p
    jac = t_end * p * w_nodes ** (p - 1.0)
    return float(np.sum(w_weights * jac * np.exp(log_hazard_fn(t))))


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HpdInterval:
    lower: float
    upper: float
    mass: float = 0.9

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, x):
        return self.lower <= x <= self.upper


def hpd_interval(draws, mass=0.9):
    """Narrowest contiguous interval holding ``ceil(mass * n)`` draws."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n < 10:
        raise ValueError(f"hpd_interval needs at least 10 draws, got {n}")
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    m = int(np.ceil(mass * n - 1e-9))
    widths = x[m - 1 :] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return HpdInterval(float(x[i]), float(x[i + m - 1]), mass)


def gelman_rubin_rhat(chains):
    """Split-R-hat for an array shaped (chains, iters) or (chains, iters, params)."""
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError("chains must be 2-D or 3-D")
    n_chains, n_iter, _ = x.shape
    if n_chains < 2:
        raise ValueError("R-hat needs at least two chains")
    if n_iter < 10:
        raise ValueError("R-hat needs at least 10 iterations per chain")
    half = n_iter // 2
    split = np.concatenate([x[:, :half], x[:, n_iter - half :]], axis=0)
    n = half
    chain_means = split.mean(axis=1)
    chain_vars = split.var(axis=1, ddof=1)
    between = n * chain_means.var(axis=0, ddof=1)
    within = chain_vars.mean(axis=0)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / within)
    # constant parameters: identical chains are converged, differing ones not
    const = within == 0
    if np.any(const):
        rhat = np.where(const & (between == 0), 1.0, rhat)
        rhat = np.where(const & (between > 0), np.inf, rhat)
    return rhat


# ---------------------------------------------------------------------------
# RNG contract
# ---------------------------------------------------------------------------


def chain_rng(seed, chain):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain,)))


def fmt_float(x):
    """Shortest round-tripping text for a float (numpy scalars included)."""
    return repr(float(x))


def stream_key(label):
    """Stable 32-bit integer for a string label (subject id, model tag)."""
    return zlib.crc32(str(label).encode("utf-8"))


def subject_uniforms(seed, tag, ids, n_iter, n_per=1):
    """Uniform(0,1) array shaped ``(n_iter, len(ids), n_per)``.

    Each subject draws from its own generator keyed by ``(tag, id)``, so a
    subject's draws do not depend on which other subjects are present, on
    their order, or on how the work is split across workers.
    """
    out = np.empty((n_iter, len(ids), n_per))
    t = stream_key(tag)
    for j, sid in enumerate(ids):
        ss = np.random.SeedSequence(seed, spawn_key=(t, stream_key(sid)))
        out[:, j, :] = np.random.default_rng(ss).random((n_iter, n_per))
    # open interval, so log(u) and log1p(-u) stay finite
    np.clip(out, 2.0**-60, 1.0 - 2.0**-53, out=out)
    return out
