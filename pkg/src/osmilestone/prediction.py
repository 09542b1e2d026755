"""Trial-level forecasts from a posterior predictive matrix."""

import json
from dataclasses import dataclass

import numpy as np

from .stats import HpdInterval, fmt_float, hpd_interval
from .trial import DAYS_PER_MONTH, day_to_iso, kaplan_meier, logrank_test, rmst_difference


class PredictionError(ValueError):
    pass


def _index(snapshot):
    return {s.subject_id: s for s in snapshot.subjects}


def predicted_days(ppd, snapshot):
    """Calendar day of each predicted death, shaped like ``ppd.times``."""
    idx = _index(snapshot)
    try:
        rand = np.array([idx[sid].randomization_date for sid in ppd.subject_ids])
    except KeyError as exc:
        raise PredictionError(f"subject {exc.args[0]} not in snapshot") from None
    return rand[None, :] + ppd.times * DAYS_PER_MONTH


def observed_death_days(snapshot):
    return np.sort([s.death_day for s in snapshot.subjects if s.death_day is not None])


def _origin(snapshot):
    return min(s.randomization_date for s in snapshot.subjects)


@dataclass
class MilestoneForecast:
    target_n: int
    draws_day: np.ndarray  # calendar day per kept iteration
    draws_months: np.ndarray  # months since the first randomization
    point: float  # median, calendar day
    hpd90: HpdInterval  # calendar days

    @property
    def median_date(self):
        return day_to_iso(self.point)

    def to_json(self, path, draws_path=None):
        out = {
            "target_n": self.target_n,
            "median_date": self.median_date,
            "hpd90": [day_to_iso(self.hpd90.lower), day_to_iso(self.hpd90.upper)],
            "median_months": float(np.median(self.draws_months)),
            "hpd90_days": [self.hpd90.lower, self.hpd90.upper],
            "draws_path": draws_path,
        }
        with open(path, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)

    def draws_to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,milestone_day,milestone_date,milestone_months\n")
            for t, (d, m) in enumerate(zip(self.draws_day, self.draws_months)):
                fh.write(f"{t},{fmt_float(d)},{day_to_iso(d)},{fmt_float(m)}\n")


def nth_death_days(ppd, snapshot, n):
    """Per-iteration calendar day of the ``n``-th death (observed and predicted pooled)."""
    obs = observed_death_days(snapshot)
    total = len(snapshot.subjects)
    if not obs.size < n <= obs.size + len(ppd.subject_ids) or n > total:
        raise PredictionError(
            f"target n={n} must exceed the {obs.size} observed deaths and not exceed "
            f"{min(total, obs.size + len(ppd.subject_ids))}"
        )
    pred = predicted_days(ppd, snapshot)
    pooled = np.concatenate([np.broadcast_to(obs, (pred.shape[0], obs.size)), pred], axis=1)
    return np.partition(pooled, n - 1, axis=1)[:, n - 1]


def milestone_nth_death(ppd, snapshot, n, mass=0.9):
    days = nth_death_days(ppd, snapshot, n)
    months = (days - _origin(snapshot)) / DAYS_PER_MONTH
    point = float(np.median(days))
    hpd = hpd_interval(days, mass)
    # the median sits inside any central-mass HPD of a unimodal sample; clamp for the rest
    hpd = HpdInterval(min(hpd.lower, point), max(hpd.upper, point), mass)
    return MilestoneForecast(int(n), days, months, point, hpd)


def death_count_at(ppd, snapshot, calendar_day):
    """Posterior draws of the cumulative death count at ``calendar_day``."""
    if calendar_day < snapshot.cutoff_calendar_date:
        raise PredictionError("query date precedes the snapshot cutoff")
    pred = predicted_days(ppd, snapshot)
    return snapshot.deaths_observed + np.sum(pred <= calendar_day, axis=1)


def _completed(ppd, snapshot):
    """Per-subject arrays of (randomization day, death day per iteration, arm)."""
    subs = snapshot.subjects
    pos = {s.subject_id: j for j, s in enumerate(subs)}
    rand = np.array([s.randomization_date for s in subs])
    arm = np.array([s.experimental for s in subs])
    base = np.array([s.death_day if s.death_day is not None else np.inf for s in subs])
    days = np.broadcast_to(base, (ppd.n_iter, len(subs))).copy()
    cols = [pos[sid] for sid in ppd.subject_ids]
    days[:, cols] = predicted_days(ppd, snapshot)
    return rand, days, arm


def probability_of_success(ppd, snapshot, target_n, alpha_level=0.05, one_sided=False):
    """Fraction of iterations where the completed trial, cut at the target death,
    shows a significant log-rank result favouring the experimental arm.

    Two-sided by default (``p < alpha_level`` and a favourable direction);
    ``one_sided=True`` uses the one-sided p-value against ``alpha_level``.
    """
    rand, days, arm = _completed(ppd, snapshot)
    if arm.all() or not arm.any():
        raise PredictionError("both arms must be present")
    cut = nth_death_days(ppd, snapshot, target_n)
    wins = 0
    for t in range(ppd.n_iter):
        died = days[t] <= cut[t]
        time = (np.minimum(days[t], cut[t]) - rand) / DAYS_PER_MONTH
        res = logrank_test(time, died.astype(float), arm)
        favours = res.observed_minus_expected < 0
        if one_sided:
            p = res.p_value / 2.0 if favours else 1.0 - res.p_value / 2.0
            wins += p < alpha_level
        else:
            wins += favours and res.p_value < alpha_level
    return wins / ppd.n_iter


@dataclass
class KmBand:
    grid: np.ndarray
    arms: tuple  # arm labels
    curves: dict  # label -> (iterations, grid) survival
    med: dict
    lo: dict
    hi: dict
    rmst_diff: np.ndarray = None  # experimental minus control, per iteration

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("arm,time,med,lo,hi\n")
            for lab in self.arms:
                for g, m, lo, hi in zip(self.grid, self.med[lab], self.lo[lab], self.hi[lab]):
                    fh.write(f"{lab},{fmt_float(g)},{fmt_float(m)},{fmt_float(lo)},{fmt_float(hi)}\n")


def predicted_km(ppd, snapshot, grid=None, tau=None, mass=0.9):
    """Per-iteration KM curves of the completed trial by arm, with pointwise bands.

    Times are study months since each subject's randomization. Subjects whose
    follow-up ended without death and who are absent from the PPD stay
    censored at their last contact.
    """
    subs = snapshot.subjects
    rand, days, arm = _completed(ppd, snapshot)
    follow = np.array([s.os.time for s in subs])
    if grid is None:
        grid = np.linspace(0.0, float(np.max(np.where(np.isfinite(days), (days - rand) / DAYS_PER_MONTH, follow))), 101)
    grid = np.asarray(grid, dtype=float)
    labels = ("Control", "Experimental")
    curves = {lab: np.empty((ppd.n_iter, grid.size)) for lab in labels}
    diffs = np.empty(ppd.n_iter) if tau is not None else None
    q = (1.0 - mass) / 2.0
    for t in range(ppd.n_iter):
        ev = np.isfinite(days[t])
        time = np.where(ev, (days[t] - rand) / DAYS_PER_MONTH, follow)
        kms = {}
        for lab, mask in zip(labels, (~arm, arm)):
            if not mask.any():
                continue
            kms[lab] = kaplan_meier(time[mask], ev[mask].astype(int))
            curves[lab][t] = kms[lab](grid)
        if diffs is not None and len(kms) == 2:
            diffs[t] = rmst_difference(kms["Experimental"], kms["Control"], tau)
    present = tuple(lab for lab, mask in zip(labels, (~arm, arm)) if mask.any())
    curves = {lab: curves[lab] for lab in present}
    med = {lab: np.median(c, axis=0) for lab, c in curves.items()}
    lo = {lab: np.quantile(c, q, axis=0) for lab, c in curves.items()}
    hi = {lab: np.quantile(c, 1.0 - q, axis=0) for lab, c in curves.items()}
    return KmBand(grid, present, curves, med, lo, hi, diffs)
