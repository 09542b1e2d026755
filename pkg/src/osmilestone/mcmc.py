"""Adaptive random-walk Metropolis-within-Gibbs sampler.

A target is any callable mapping a parameter dict to per-subject
log-likelihood terms (an ``(n,)`` array) or to a scalar. Global blocks get
component-wise univariate proposals plus one joint proposal built from the
adaptation-phase covariance; subject-level random-effect blocks are updated
per subject with independent accept/reject decisions, which is valid because
subjects are conditionally independent given the globals.
"""

import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stats import chain_rng, fmt_float, gelman_rubin_rhat

SUPPORTS = ("real", "positive", "interval")
KINDS = ("coef", "shape", "rate", "scale", "eta", "sd", "corr", "re")

TARGET_SCALAR = 0.44
TARGET_BLOCK = 0.23


class ConvergenceWarning(UserWarning):
    pass


class SamplerError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class Normal:
    sd: float
    mean: float = 0.0

    def __post_init__(self):
        if self.sd <= 0:
            raise ValueError("Normal prior sd must be positive")

    def logpdf(self, x):
        z = (x - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - _LOG_SQRT_2PI


@dataclass(frozen=True)
class HalfNormal:
    sd: float

    def __post_init__(self):
        if self.sd <= 0:
            raise ValueError("HalfNormal prior sd must be positive")

    def logpdf(self, x):
        if x < 0:
            return -math.inf
        z = x / self.sd
        return -0.5 * z * z - math.log(self.sd) - _LOG_SQRT_2PI + math.log(2.0)


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("Exponential prior rate must be positive")

    def logpdf(self, x):
        if x < 0:
            return -math.inf
        return math.log(self.rate) - self.rate * x


@dataclass(frozen=True)
class Uniform:
    low: float = -1.0
    high: float = 1.0

    def logpdf(self, x):
        if not self.low < x < self.high:
            return -math.inf
        return -math.log(self.high - self.low)


class Flat:
    """Improper flat prior; only for tests and conjugate checks."""

    def logpdf(self, x):
        return 0.0

    def __eq__(self, other):
        return isinstance(other, Flat)

    def __hash__(self):
        return hash("Flat")

    def __repr__(self):
        return "Flat()"


class PriorSpec(dict):
    """Mapping of global block name to a prior applied to each element."""

    def validate(self, space):
        for b in space.global_blocks:
            if b.name not in self:
                raise ValueError(f"no prior for block {b.name!r}")

    def logpdf(self, space, x_global):
        total = 0.0
        for b, sl in zip(space.global_blocks, space.global_slices):
            prior = self[b.name]
            for v in x_global[sl]:
                total += prior.logpdf(float(v))
        return total


# ---------------------------------------------------------------------------
# Parameter space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    name: str
    size: int = 1
    support: str = "real"
    role: str = "global"
    kind: str = "coef"
    labels: tuple = ()
    vector: bool = False  # keep as an array even when size == 1

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"block {self.name!r} must have dimension >= 1")
        if self.support not in SUPPORTS:
            raise ValueError(f"unknown support {self.support!r}")
        if self.role not in ("global", "subject"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")

    def element_names(self):
        if self.labels:
            return [f"{self.name}[{lab}]" for lab in self.labels]
        if self.size == 1:
            return [self.name]
        return [f"{self.name}[{j}]" for j in range(self.size)]


class ParameterSpace:
    def __init__(self, blocks):
        blocks = list(blocks)
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError("block names must be unique")
        self.blocks = blocks
        self.global_blocks = [b for b in blocks if b.role == "global"]
        self.subject_blocks = [b for b in blocks if b.role == "subject"]
        if not self.global_blocks and not self.subject_blocks:
            raise ValueError("parameter space has zero dimension")
        self.global_slices = []
        start = 0
        for b in self.global_blocks:
            self.global_slices.append(slice(start, start + b.size))
            start += b.size
        self.n_global = start
        self.global_names = [nm for b in self.global_blocks for nm in b.element_names()]
        self._support = np.array(
            [SUPPORTS.index(b.support) for b in self.global_blocks for _ in range(b.size)]
        )

    def __getitem__(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def __contains__(self, name):
        return any(b.name == name for b in self.blocks)

    def slice_of(self, name):
        for b, sl in zip(self.global_blocks, self.global_slices):
            if b.name == name:
                return sl
        raise KeyError(name)

    # transforms between natural and unconstrained scales
    def to_unconstrained(self, x):
        z = np.array(x, dtype=float)
        pos = self._support == 1
        itv = self._support == 2
        z[pos] = np.log(z[pos])
        z[itv] = np.arctanh(z[itv])
        return z

    def to_natural(self, z):
        x = np.array(z, dtype=float)
        pos = self._support == 1
        itv = self._support == 2
        x[pos] = np.exp(x[pos])
        x[itv] = np.tanh(x[itv])
        return x

    def log_jacobian(self, z):
        pos = self._support == 1
        itv = self._support == 2
        t = np.tanh(z[itv])
        return float(np.sum(z[pos]) + np.sum(np.log1p(-t * t)))

    def pack(self, values):
        """dict of natural values -> (global vector, dict of subject arrays)."""
        x = np.empty(self.n_global)
        for b, sl in zip(self.global_blocks, self.global_slices):
            x[sl] = np.asarray(values[b.name], dtype=float).reshape(b.size)
        subj = {}
        for b in self.subject_blocks:
            arr = np.array(values[b.name], dtype=float)
            subj[b.name] = arr.reshape(arr.shape[0], b.size)
        return x, subj

    def unpack(self, x, subj):
        out = {}
        for b, sl in zip(self.global_blocks, self.global_slices):
            out[b.name] = x[sl.start] if b.size == 1 and not b.vector else x[sl]
        out.update(subj)
        return out

    def check_support(self, x):
        pos = self._support == 1
        itv = self._support == 2
        return bool(np.all(np.isfinite(x)) and np.all(x[pos] > 0) and np.all(np.abs(x[itv]) < 1))


@dataclass(frozen=True)
class ShiftMove:
    """Joint move ``x[param][index] += d`` and ``re[block][:, column] -= d``.

    Leaves sums like ``intercept + b1_i`` unchanged, which is what lets an
    intercept travel along its posterior ridge with its random effects.
    """

    param: str
    block: str
    column: int = 0
    index: int = 0


@dataclass(frozen=True)
class ScaleMove:
    """Joint move ``sd *= e**d`` and ``re[block][:, column] *= e**d``."""

    param: str
    block: str
    column: int = 0
    index: int = 0


def initialize(space, priors, data_summary=None):
    """Deterministic starting point.

    Shapes start at 1, rates at 1/mean(time), scales at mean(time),
    coefficients and random effects at 0, copula dependence at 1,
    correlations at 0. ``data_summary`` maps block names to the mean observed
    time (rate/scale blocks) or to explicit starting values (any block).
    """
    data_summary = data_summary or {}
    values = {}
    for b in space.global_blocks:
        given = data_summary.get(b.name)
        if b.kind == "shape":
            v = 1.0
        elif b.kind == "rate":
            v = 1.0 / given if given is not None else 1.0
        elif b.kind == "scale":
            v = given if given is not None else 1.0
        elif b.kind == "eta":
            v = 1.0
        elif b.kind == "corr":
            v = 0.0
        elif b.kind == "sd":
            v = given if given is not None else 1.0
        else:
            v = given if given is not None else 0.0
        values[b.name] = np.broadcast_to(np.asarray(v, dtype=float), (b.size,)).copy()
    n = data_summary.get("n_subjects", 0)
    for b in space.subject_blocks:
        values[b.name] = np.zeros((n, b.size))
    return values


# ---------------------------------------------------------------------------
# Draws
# ---------------------------------------------------------------------------


@dataclass
class MCMCSettings:
    chains: int = 2
    burn_in: int = 1000
    adapt: int = 8000
    iters: int = 10000
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        for nm in ("chains", "iters", "thin"):
            if getattr(self, nm) < 1:
                raise ValueError(f"{nm} must be positive")
        for nm in ("burn_in", "adapt"):
            if getattr(self, nm) < 0:
                raise ValueError(f"{nm} must be nonnegative")


@dataclass
class PosteriorDraws:
    global_names: list
    block_slices: dict
    globals: np.ndarray  # (chains, iters, d)
    subject: dict  # name -> (chains, iters, n_keep, size)
    subject_index: np.ndarray
    loglik: np.ndarray  # (chains, iters)
    logprior: np.ndarray  # (chains, iters)
    acceptance: dict = field(default_factory=dict)
    vector_blocks: list = field(default_factory=list)

    @property
    def n_chains(self):
        return self.globals.shape[0]

    @property
    def n_iter(self):
        return self.globals.shape[1]

    @property
    def n_total(self):
        return self.n_chains * self.n_iter

    def flat(self):
        return self.globals.reshape(-1, self.globals.shape[-1])

    def get(self, name):
        """Stacked draws (chains*iters, ...) for a global or subject block."""
        if name in self.subject:
            a = self.subject[name]
            return a.reshape((-1,) + a.shape[2:])
        sl = self.block_slices[name]
        return self.flat()[:, sl]

    def scalar(self, name):
        return self.get(name)[:, 0]

    def params_at(self, t):
        """Global parameters of stacked iteration ``t``, shaped like the sampler's dict."""
        row = self.flat()[t]
        return {
            nm: row[sl] if (nm in self.vector_blocks or sl.stop - sl.start > 1) else row[sl.start]
            for nm, sl in self.block_slices.items()
        }

    def rhat(self):
        if self.n_chains < 2 or self.n_iter < 10:
            return {}
        r = gelman_rubin_rhat(self.globals)
        return dict(zip(self.global_names, map(float, r)))

    def diagnostics(self):
        rh = self.rhat()
        return {
            nm: {"rhat": rh.get(nm), "acceptance": self.acceptance.get(nm)}
            for nm in self.global_names
        }

    def to_csv(self, path, include_subject=False, ids=None):
        with open(path, "w") as fh:
            fh.write("chain,iter,param_name,value\n")
            for c in range(self.n_chains):
                for i in range(self.n_iter):
                    row = self.globals[c, i]
                    for nm, v in zip(self.global_names, row):
                        fh.write(f"{c},{i},{nm},{fmt_float(v)}\n")
                    if include_subject:
                        for bn, arr in self.subject.items():
                            for k, sidx in enumerate(self.subject_index):
                                sid = ids[sidx] if ids is not None else int(sidx)
                                for j in range(arr.shape[-1]):
                                    fh.write(f"{c},{i},{bn}[{sid}][{j}],{fmt_float(arr[c, i, k, j])}\n")

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "globals.npy", self.globals)
        np.save(d / "loglik.npy", self.loglik)
        np.save(d / "logprior.npy", self.logprior)
        np.save(d / "subject_index.npy", self.subject_index)
        for nm, arr in self.subject.items():
            np.save(d / f"re_{nm}.npy", arr)
        meta = {
            "global_names": self.global_names,
            "block_slices": {k: [v.start, v.stop] for k, v in self.block_slices.items()},
            "subject_blocks": sorted(self.subject),
            "acceptance": self.acceptance,
            "vector_blocks": self.vector_blocks,
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        return cls(
            global_names=meta["global_names"],
            block_slices={k: slice(*v) for k, v in meta["block_slices"].items()},
            globals=np.load(d / "globals.npy"),
            subject={nm: np.load(d / f"re_{nm}.npy") for nm in meta["subject_blocks"]},
            subject_index=np.load(d / "subject_index.npy"),
            loglik=np.load(d / "loglik.npy"),
            logprior=np.load(d / "logprior.npy"),
            acceptance=meta["acceptance"],
            vector_blocks=meta.get("vector_blocks", []),
        )


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------


def _as_terms(val):
    arr = np.asarray(val, dtype=float)
    return np.where(np.isnan(arr), -np.inf, arr)


class _ChainRunner:
    def __init__(self, loglik, space, priors, settings, init, keep_subjects, moves=()):
        self.loglik = loglik
        self.moves = [
            (mv, space.slice_of(mv.param).start + mv.index) for mv in moves
        ]
        self.space = space
        self.priors = priors
        self.settings = settings
        self.init = init
        self.keep_subjects = keep_subjects
        self.elem_priors = [
            priors[b.name] for b in space.global_blocks for _ in range(b.size)
        ]

    def _prior_elem(self, j, v):
        return self.elem_priors[j].logpdf(float(v))

    def _jac_elem(self, j, z):
        s = self.space._support[j]
        if s == 1:
            return z
        if s == 2:
            t = math.tanh(z)
            return math.log1p(-t * t)
        return 0.0

    def __call__(self, chain):
        space, st = self.space, self.settings
        rng = chain_rng(st.seed, chain)
        x, subj = space.pack(self.init)
        if not space.check_support(x):
            raise SamplerError("initial point violates a support constraint")
        z = space.to_unconstrained(x)
        d = space.n_global

        terms = _as_terms(self.loglik(space.unpack(x, subj)))
        ll = float(np.sum(terms))
        prior_el = np.array([self._prior_elem(j, x[j]) for j in range(d)])
        jac_el = np.array([self._jac_elem(j, z[j]) for j in range(d)])
        if not np.isfinite(ll + prior_el.sum()):
            raise SamplerError("log-posterior is not finite at the initial point")
        if subj and terms.ndim != 1:
            raise SamplerError("targets with subject blocks must return per-subject terms")

        scales = np.where(space._support == 0, 0.1 * np.maximum(1.0, np.abs(x)), 0.1)
        log_scales = np.log(scales)
        re_log_scales = {
            nm: np.full(arr.shape, math.log(0.5 * max(1e-3, float(np.std(arr)) or 1.0)))
            for nm, arr in subj.items()
        }
        for b in space.subject_blocks:
            sd_hint = self.init.get(f"{b.name}:proposal_sd")
            if sd_hint is not None:
                re_log_scales[b.name][:] = np.log(np.broadcast_to(sd_hint, (b.size,)))

        # joint-proposal adaptation state (running mean/cov of z)
        run_n = 0
        run_mean = np.zeros(d)
        run_m2 = np.zeros((d, d))
        joint_chol = None
        joint_log_scale = math.log(2.38 / math.sqrt(max(d, 1)))
        joint_start = max(200, 20 * d)

        n_adapt, n_burn, n_keep, thin = st.adapt, st.burn_in, st.iters, st.thin
        total = n_adapt + n_burn + n_keep * thin
        keep = self.keep_subjects
        out_g = np.empty((n_keep, d))
        out_s = {nm: np.empty((n_keep, keep.size, arr.shape[1])) for nm, arr in subj.items()}
        out_ll = np.empty(n_keep)
        out_lp = np.empty(n_keep)
        acc_count = np.zeros(d)
        move_log_scales = np.array(
            [math.log(0.1 * abs(x[j])) if isinstance(mv, ShiftMove) and x[j] != 0 else math.log(0.1)
             for mv, j in self.moves]
        )
        joint_acc = 0
        joint_tries = 0

        for it in range(total):
            adapting = it < n_adapt
            gain = (it + 1) ** -0.6 if adapting else 0.0

            # component-wise updates of globals
            for j in range(d):
                zj_new = z[j] + math.exp(log_scales[j]) * rng.standard_normal()
                log_u = math.log(rng.random())
                z_old = z[j]
                x_old = x[j]
                z[j] = zj_new
                xj = zj_new
                sup = space._support[j]
                if sup == 1:
                    xj = math.exp(zj_new)
                elif sup == 2:
                    xj = math.tanh(zj_new)
                x[j] = xj
                pr = self._prior_elem(j, xj)
                accepted = False
                if pr > -math.inf:
                    new_terms = _as_terms(self.loglik(space.unpack(x, subj)))
                    new_ll = float(np.sum(new_terms))
                    jac = self._jac_elem(j, zj_new)
                    delta = (new_ll - ll) + (pr - prior_el[j]) + (jac - jac_el[j])
                    if log_u < delta:
                        accepted = True
                        terms, ll = new_terms, new_ll
                        prior_el[j], jac_el[j] = pr, jac
                if not accepted:
                    z[j], x[j] = z_old, x_old
                if adapting:
                    log_scales[j] += gain * ((1.0 if accepted else 0.0) - TARGET_SCALAR)
                elif accepted and it >= n_adapt + n_burn:
                    acc_count[j] += 1

            # joint update of all globals
            if joint_chol is not None and d > 1:
                z_new = z + math.exp(joint_log_scale) * (joint_chol @ rng.standard_normal(d))
                log_u = math.log(rng.random())
                x_new = space.to_natural(z_new)
                pr_new = np.array([self._prior_elem(j, x_new[j]) for j in range(d)])
                accepted = False
                if np.all(pr_new > -np.inf):
                    new_terms = _as_terms(self.loglik(space.unpack(x_new, subj)))
                    new_ll = float(np.sum(new_terms))
                    jac_new = np.array([self._jac_elem(j, z_new[j]) for j in range(d)])
                    delta = (new_ll - ll) + (pr_new.sum() - prior_el.sum()) + (
                        jac_new.sum() - jac_el.sum()
                    )
                    if log_u < delta:
                        accepted = True
                        z, x, terms, ll = z_new, x_new, new_terms, new_ll
                        prior_el, jac_el = pr_new, jac_new
                if adapting:
                    joint_log_scale += gain * ((1.0 if accepted else 0.0) - TARGET_BLOCK)
                elif it >= n_adapt + n_burn:
                    joint_tries += 1
                    joint_acc += accepted

            # paired global / random-effect moves
            for m_i, (mv, j) in enumerate(self.moves):
                delta = math.exp(move_log_scales[m_i]) * rng.standard_normal()
                log_u = math.log(rng.random())
                col = subj[mv.block][:, mv.column]
                x_new = x.copy()
                trial = dict(subj)
                blk = subj[mv.block].copy()
                if isinstance(mv, ShiftMove):
                    x_new[j] = x[j] + delta
                    blk[:, mv.column] = col - delta
                    log_jac = 0.0
                else:
                    x_new[j] = x[j] * math.exp(delta)
                    blk[:, mv.column] = col * math.exp(delta)
                    log_jac = delta * (col.size + 1)
                trial[mv.block] = blk
                pr = self._prior_elem(j, x_new[j])
                accepted = False
                if pr > -math.inf and space.check_support(x_new):
                    new_terms = _as_terms(self.loglik(space.unpack(x_new, trial)))
                    new_ll = float(np.sum(new_terms))
                    delta_lp = (new_ll - ll) + (pr - prior_el[j])
                    # deterministic map with volume change e**(log_jac)
                    delta_lp += log_jac
                    if log_u < delta_lp:
                        accepted = True
                        x, subj, terms, ll = x_new, trial, new_terms, new_ll
                        z[j] = space.to_unconstrained(x)[j]
                        prior_el[j] = pr
                        jac_el[j] = self._jac_elem(j, z[j])
                if adapting:
                    move_log_scales[m_i] += gain * ((1.0 if accepted else 0.0) - TARGET_SCALAR)

            # subject-level random effects
            for nm, arr in subj.items():
                ls = re_log_scales[nm]
                for j in range(arr.shape[1]):
                    prop = arr.copy()
                    prop[:, j] += np.exp(ls[:, j]) * rng.standard_normal(arr.shape[0])
                    log_u = np.log(rng.random(arr.shape[0]))
                    trial = dict(subj)
                    trial[nm] = prop
                    new_terms = _as_terms(self.loglik(space.unpack(x, trial)))
                    with np.errstate(invalid="ignore"):
                        acc = log_u < (new_terms - terms)
                    arr[acc, j] = prop[acc, j]
                    terms = np.where(acc, new_terms, terms)
                    if adapting:
                        ls[:, j] += gain * (acc - TARGET_SCALAR)
                ll = float(np.sum(terms))

            if adapting:
                run_n += 1
                delta_m = z - run_mean
                run_mean += delta_m / run_n
                run_m2 += np.outer(delta_m, z - run_mean)
                if run_n >= joint_start and run_n % 100 == 0 and d > 1:
                    cov = run_m2 / (run_n - 1)
                    cov = cov + 1e-10 * np.eye(d) + 1e-6 * np.diag(np.diag(cov))
                    try:
                        joint_chol = np.linalg.cholesky(cov)
                    except np.linalg.LinAlgError:
                        pass

            k = it - n_adapt - n_burn
            if k >= 0 and (k + 1) % thin == 0:
                r = k // thin
                out_g[r] = x
                for nm, arr in subj.items():
                    out_s[nm][r] = arr[keep]
                out_ll[r] = ll
                out_lp[r] = float(prior_el.sum())

        acceptance = acc_count / max(n_keep * thin, 1)
        return out_g, out_s, out_ll, out_lp, acceptance, (joint_acc / joint_tries if joint_tries else None)


def default_workers():
    env = os.environ.get("OSM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_mcmc(loglik, space, priors, settings, init=None, keep_subjects=None, workers=1,
             moves=()):
    """Sample a target built from ``loglik`` and ``priors``.

    ``keep_subjects`` selects which rows of the subject-level blocks are
    stored (all by default). Chains are independent (seed, chain) streams,
    so results do not depend on ``workers``.
    """
    if not isinstance(priors, PriorSpec):
        priors = PriorSpec(priors)
    priors.validate(space)
    if init is None:
        init = initialize(space, priors)
    n_subj = 0
    for b in space.subject_blocks:
        n_subj = np.asarray(init[b.name]).shape[0]
    if keep_subjects is None:
        keep_subjects = np.arange(n_subj)
    keep_subjects = np.asarray(keep_subjects, dtype=np.int64)
    runner = _ChainRunner(loglik, space, priors, settings, init, keep_subjects, moves)
    chains = range(settings.chains)
    if workers > 1 and settings.chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, settings.chains)) as ex:
            results = list(ex.map(runner, chains))
    else:
        results = [runner(c) for c in chains]

    g = np.stack([r[0] for r in results])
    subj = {nm: np.stack([r[1][nm] for r in results]) for nm in results[0][1]}
    ll = np.stack([r[2] for r in results])
    lp = np.stack([r[3] for r in results])
    acc = np.mean([r[4] for r in results], axis=0)
    acceptance = dict(zip(space.global_names, map(float, acc)))
    joint = [r[5] for r in results if r[5] is not None]
    if joint:
        acceptance["__joint__"] = float(np.mean(joint))
    draws = PosteriorDraws(
        global_names=list(space.global_names),
        block_slices={b.name: sl for b, sl in zip(space.global_blocks, space.global_slices)},
        globals=g,
        subject=subj,
        subject_index=keep_subjects,
        loglik=ll,
        logprior=lp,
        acceptance=acceptance,
        vector_blocks=[b.name for b in space.global_blocks if b.vector],
    )
    if not np.all(np.isfinite(g)):
        raise SamplerError("non-finite values in stored draws")
    rh = draws.rhat()
    bad = {k: v for k, v in rh.items() if not v < 1.1}
    if bad:
        worst = max(bad, key=lambda k: bad[k])
        warnings.warn(
            f"R-hat above 1.1 for {len(bad)} parameter(s), worst {worst}={bad[worst]:.3f}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return draws
