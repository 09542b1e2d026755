"""Trial data: subject records, CSV ingestion, snapshots, KM/RMST/log-rank."""

import csv
import datetime as _dt
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import stats as _sps

DAYS_PER_MONTH = 365.25 / 12.0
_EPOCH = _dt.date(1970, 1, 1)
# slack used when comparing event times against a cutoff derived from dates
_TIME_TOL = 1e-9


class DataError(ValueError):
    """Raised when trial input violates the file schema or record invariants."""


class Arm(str, Enum):
    EXPERIMENTAL = "Experimental"
    CONTROL = "Control"

    @classmethod
    def parse(cls, value):
        try:
            return cls(str(value).strip())
        except ValueError:
            raise DataError(f"unknown arm {value!r}") from None


def iso_to_day(value):
    try:
        return float((_dt.date.fromisoformat(str(value).strip()) - _EPOCH).days)
    except ValueError:
        raise DataError(f"not an ISO-8601 date: {value!r}") from None


def day_to_iso(day):
    return (_EPOCH + _dt.timedelta(days=int(math.floor(day)))).isoformat()


def months_to_days(months):
    return np.asarray(months, dtype=float) * DAYS_PER_MONTH


def days_to_months(days):
    return np.asarray(days, dtype=float) / DAYS_PER_MONTH


@dataclass(frozen=True)
class EventTime:
    time: float
    indicator: int

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise DataError(f"event time must be finite and >= 0, got {self.time}")
        if self.indicator not in (0, 1):
            raise DataError(f"event indicator must be 0 or 1, got {self.indicator}")


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    arm: Arm
    covariates: tuple
    randomization_date: float
    tl_series: tuple
    nt: EventTime
    nl: EventTime
    ttp: EventTime
    progression: EventTime
    os: EventTime

    def __post_init__(self):
        times = [t for t, _ in self.tl_series]
        if any(t < 0 for t in times):
            raise DataError(f"{self.subject_id}: negative visit time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError(f"{self.subject_id}: visit times must be strictly increasing")
        if self.os.indicator == 1 and times and times[-1] > self.os.time + _TIME_TOL:
            raise DataError(
                f"{self.subject_id}: target-lesion measurement at {times[-1]} "
                f"after death at {self.os.time}"
            )
        if self.ttp.time > self.os.time + _TIME_TOL:
            raise DataError(f"{self.subject_id}: ttp time exceeds os time")

    @property
    def experimental(self):
        return self.arm is Arm.EXPERIMENTAL

    @property
    def death_day(self):
        """Calendar day of death, or None while alive."""
        if self.os.indicator != 1:
            return None
        return self.randomization_date + self.os.time * DAYS_PER_MONTH


@dataclass(frozen=True)
class TrialSnapshot:
    cutoff_calendar_date: float
    subjects: tuple
    deaths_observed: int

    def __post_init__(self):
        recount = sum(s.os.indicator for s in self.subjects)
        if recount != self.deaths_observed:
            raise DataError(
                f"deaths_observed={self.deaths_observed} but subjects record {recount}"
            )

    @property
    def cutoff_study_time(self):
        """Per-subject follow-up at the cutoff, in months."""
        rand = np.array([s.randomization_date for s in self.subjects])
        return days_to_months(self.cutoff_calendar_date - rand)

    @property
    def cutoff_iso(self):
        return day_to_iso(self.cutoff_calendar_date)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def _censor_event(ev, cutoff):
    if ev.time <= cutoff + _TIME_TOL:
        return ev
    return EventTime(cutoff, 0)


def censor_subject(subj, cutoff_day):
    """Administrative censoring of one subject at a calendar day."""
    c = float((cutoff_day - subj.randomization_date) / DAYS_PER_MONTH)
    death = subj.death_day
    if death is not None and death <= cutoff_day:
        os_ev = subj.os
    elif subj.os.time <= c + _TIME_TOL and subj.os.indicator == 0:
        os_ev = subj.os  # already censored earlier (lost to follow-up)
    else:
        os_ev = EventTime(c, 0)
    tl = tuple((t, v) for t, v in subj.tl_series if t <= c + _TIME_TOL)
    return replace(
        subj,
        tl_series=tl,
        nt=_censor_event(subj.nt, c),
        nl=_censor_event(subj.nl, c),
        ttp=_censor_event(subj.ttp, c),
        progression=_censor_event(subj.progression, c),
        os=os_ev,
    )


def snapshot_at_date(subjects, cutoff_day):
    """Censor every subject at ``cutoff_day``; subjects randomized later are dropped."""
    kept = [censor_subject(s, cutoff_day) for s in subjects if s.randomization_date <= cutoff_day]
    deaths = sum(s.os.indicator for s in kept)
    return TrialSnapshot(float(cutoff_day), tuple(kept), deaths)


def snapshot_at_kth_death(subjects, k):
    if k < 1:
        raise DataError("k must be at least 1")
    death_days = np.sort([d for d in (s.death_day for s in subjects) if d is not None])
    if k > death_days.size:
        raise DataError(f"requested k={k} but only {death_days.size} deaths recorded")
    return snapshot_at_date(subjects, float(death_days[k - 1]))


# ---------------------------------------------------------------------------
# Kaplan-Meier, RMST, log-rank
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KMCurve:
    """Right-continuous product-limit step function.

    ``time[0] == 0`` and ``survival[0] == 1``; ``survival[j]`` holds on
    ``[time[j], time[j+1])``. ``support`` is the largest observed time.
    """

    time: np.ndarray
    survival: np.ndarray
    support: float
    n_at_risk: np.ndarray = field(default=None, repr=False)
    n_events: np.ndarray = field(default=None, repr=False)

    def __call__(self, t):
        idx = np.searchsorted(self.time, np.asarray(t, dtype=float), side="right") - 1
        return self.survival[np.maximum(idx, 0)]


def kaplan_meier(times, indicators):
    times = np.asarray(times, dtype=float)
    events = np.asarray(indicators)
    if times.size == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    if np.any(times < 0):
        raise ValueError("negative survival time")
    if not np.all(np.isin(events, (0, 1))):
        raise ValueError("indicators must be 0/1")
    uniq, inv = np.unique(times, return_inverse=True)
    d = np.bincount(inv, weights=events, minlength=uniq.size)
    n_total = np.bincount(inv, minlength=uniq.size)
    at_risk = times.size - np.concatenate([[0], np.cumsum(n_total)[:-1]])
    has_event = d > 0
    ev_t = uniq[has_event]
    ev_d = d[has_event]
    ev_n = at_risk[has_event]
    surv = np.cumprod(1.0 - ev_d / ev_n)
    if ev_t.size and ev_t[0] == 0.0:
        t_out, s_out = ev_t, surv
    else:
        t_out = np.concatenate([[0.0], ev_t])
        s_out = np.concatenate([[1.0], surv])
    return KMCurve(t_out, s_out, float(uniq[-1]), ev_n, ev_d)


class RmstExtrapolationWarning(UserWarning):
    pass


def restricted_mean(km, tau):
    """Area under ``km`` on [0, tau]; second value flags carry-forward past support."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    edges = np.concatenate([km.time[km.time < tau], [tau]])
    widths = np.diff(edges)
    area = float(np.sum(widths * km.survival[: widths.size]))
    return area, tau > km.support


def rmst_difference(km_a, km_b, tau):
    """Exact area between two step functions on [0, tau] (A minus B)."""
    area_a, ext_a = restricted_mean(km_a, tau)
    area_b, ext_b = restricted_mean(km_b, tau)
    if ext_a or ext_b:
        warnings.warn(
            f"tau={tau} is beyond the observed support; last KM value carried forward",
            RmstExtrapolationWarning,
            stacklevel=2,
        )
    return area_a - area_b


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    observed_minus_expected: float  # for group 1; negative favours group 1


def logrank_test(times, events, group):
    """Unstratified two-sample log-rank test (group coded 0/1)."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    group = np.asarray(group, dtype=bool)
    if group.all() or not group.any():
        raise ValueError("log-rank test needs both groups present")
    uniq, inv = np.unique(times, return_inverse=True)
    d = np.bincount(inv, weights=events, minlength=uniq.size)
    d1 = np.bincount(inv, weights=events * group, minlength=uniq.size)
    n_t = np.bincount(inv, minlength=uniq.size).astype(float)
    n1_t = np.bincount(inv, weights=group.astype(float), minlength=uniq.size)
    r = times.size - np.concatenate([[0.0], np.cumsum(n_t)[:-1]])
    r1 = group.sum() - np.concatenate([[0.0], np.cumsum(n1_t)[:-1]])
    m = d > 0
    d, d1, r, r1 = d[m], d1[m], r[m], r1[m]
    expected = d * r1 / r
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(r > 1, d * (r1 / r) * (1 - r1 / r) * (r - d) / (r - 1), 0.0)
    o_e = float(np.sum(d1 - expected))
    v = float(np.sum(var))
    if v <= 0:
        return LogRankResult(0.0, 1.0, o_e)
    stat = o_e**2 / v
    return LogRankResult(stat, float(_sps.chi2.sf(stat, 1)), o_e)


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

LONGITUDINAL_HEADER = ["subject_id", "visit_time_months", "tl_sum_mm"]
_EVENT_FIELDS = ["nt", "nl", "ttp", "prog", "os"]


def events_header(n_covariates):
    cols = ["subject_id", "arm", "randomization_date"]
    for f in _EVENT_FIELDS:
        cols += [f"{f}_time", f"{f}_event"]
    return cols + [f"cov_{j + 1}" for j in range(n_covariates)]


def _num(value, what, row_no):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row_no}: non-numeric {what}: {value!r}") from None
    if not math.isfinite(x):
        raise DataError(f"row {row_no}: non-finite {what}")
    return x


def _indicator(value, what, row_no):
    x = _num(value, what, row_no)
    if x not in (0.0, 1.0):
        raise DataError(f"row {row_no}: {what} must be 0 or 1, got {value!r}")
    return int(x)


def _n_covariates(config):
    if config is None:
        return None
    if isinstance(config, int):
        return config
    return config.get("n_covariates")


def load_trial(longitudinal_csv_path, events_csv_path, config=None):
    """Read the two trial CSV files into validated ``SubjectRecord`` objects."""
    p = _n_covariates(config)
    tl = {}
    with open(longitudinal_csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LONGITUDINAL_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"longitudinal file lacks columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            sid = row["subject_id"].strip()
            t = _num(row["visit_time_months"], "visit_time_months", row_no)
            v = _num(row["tl_sum_mm"], "tl_sum_mm", row_no)
            series = tl.setdefault(sid, {})
            if t in series:
                raise DataError(f"row {row_no}: duplicate visit {t} for subject {sid}")
            series[t] = v

    subjects = []
    with open(events_csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        cov_cols = [c for c in fields if c.startswith("cov_")]
        if p is None:
            p = len(cov_cols)
        expected = events_header(p)
        missing = set(expected) - set(fields)
        if missing:
            raise DataError(f"events file lacks columns {sorted(missing)}")
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            sid = row["subject_id"].strip()
            if sid in seen:
                raise DataError(f"row {row_no}: duplicate subject {sid}")
            seen.add(sid)
            if sid not in tl:
                raise DataError(f"subject {sid} has no rows in the longitudinal file")
            evs = {
                f: EventTime(
                    _num(row[f"{f}_time"], f"{f}_time", row_no),
                    _indicator(row[f"{f}_event"], f"{f}_event", row_no),
                )
                for f in _EVENT_FIELDS
            }
            covs = tuple(_num(row[f"cov_{j + 1}"], f"cov_{j + 1}", row_no) for j in range(p))
            series = tuple(sorted(tl[sid].items()))
            subjects.append(
                SubjectRecord(
                    subject_id=sid,
                    arm=Arm.parse(row["arm"]),
                    covariates=covs,
                    randomization_date=iso_to_day(row["randomization_date"]),
                    tl_series=series,
                    nt=evs["nt"],
                    nl=evs["nl"],
                    ttp=evs["ttp"],
                    progression=evs["prog"],
                    os=evs["os"],
                )
            )
    orphans = set(tl) - seen
    if orphans:
        raise DataError(f"longitudinal rows for unknown subjects: {sorted(orphans)[:5]}")
    return subjects


def write_trial(subjects, longitudinal_csv_path, events_csv_path):
    subjects = list(subjects)
    p = len(subjects[0].covariates) if subjects else 0
    with open(longitudinal_csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONGITUDINAL_HEADER)
        for s in subjects:
            for t, v in s.tl_series:
                w.writerow([s.subject_id, repr(float(t)), repr(float(v))])
    with open(events_csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(events_header(p))
        for s in subjects:
            row = [s.subject_id, s.arm.value, day_to_iso(s.randomization_date)]
            for ev in (s.nt, s.nl, s.ttp, s.progression, s.os):
                row += [repr(float(ev.time)), ev.indicator]
            row += [repr(float(c)) for c in s.covariates]
            w.writerow(row)


def write_snapshot(snapshot, longitudinal_csv_path, events_csv_path):
    write_trial(snapshot.subjects, longitudinal_csv_path, events_csv_path)
    sidecar = Path(events_csv_path).with_suffix(".snapshot.json")
    sidecar.write_text(
        json.dumps(
            {"cutoff_date": snapshot.cutoff_iso, "deaths_observed": snapshot.deaths_observed},
            indent=2,
        )
        + "\n"
    )
    return sidecar


# ---------------------------------------------------------------------------
# Array view for the models
# ---------------------------------------------------------------------------


@dataclass
class TrialArrays:
    """Column-oriented copy of a subject list, in the layout the kernels use."""

    ids: list
    arm: np.ndarray
    covariates: np.ndarray
    rand_day: np.ndarray
    tl_ptr: np.ndarray
    tl_time: np.ndarray
    tl_value: np.ndarray
    nt_t: np.ndarray
    nt_d: np.ndarray
    nl_t: np.ndarray
    nl_d: np.ndarray
    ttp_t: np.ndarray
    ttp_d: np.ndarray
    prog_t: np.ndarray
    prog_d: np.ndarray
    os_t: np.ndarray
    os_d: np.ndarray

    @classmethod
    def from_subjects(cls, subjects):
        subjects = list(subjects)
        n = len(subjects)
        p = len(subjects[0].covariates) if n else 0
        counts = np.array([len(s.tl_series) for s in subjects], dtype=np.int64)
        ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        tl = [pt for s in subjects for pt in s.tl_series]
        tl_arr = np.array(tl, dtype=float).reshape(-1, 2)

        def ev(name):
            t = np.array([getattr(s, name).time for s in subjects], dtype=float)
            d = np.array([getattr(s, name).indicator for s in subjects], dtype=float)
            return t, d

        nt_t, nt_d = ev("nt")
        nl_t, nl_d = ev("nl")
        ttp_t, ttp_d = ev("ttp")
        pr_t, pr_d = ev("progression")
        os_t, os_d = ev("os")
        return cls(
            ids=[s.subject_id for s in subjects],
            arm=np.array([1.0 if s.experimental else 0.0 for s in subjects]),
            covariates=np.array([s.covariates for s in subjects], dtype=float).reshape(n, p),
            rand_day=np.array([s.randomization_date for s in subjects], dtype=float),
            tl_ptr=ptr,
            tl_time=np.ascontiguousarray(tl_arr[:, 0]),
            tl_value=np.ascontiguousarray(tl_arr[:, 1]),
            nt_t=nt_t, nt_d=nt_d, nl_t=nl_t, nl_d=nl_d, ttp_t=ttp_t, ttp_d=ttp_d,
            prog_t=pr_t, prog_d=pr_d, os_t=os_t, os_d=os_d,
        )

    @property
    def n(self):
        return self.arm.size

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    def design(self, intercept=False):
        """Baseline design row: [1?] + arm + covariates."""
        cols = [self.arm[:, None], self.covariates]
        if intercept:
            cols.insert(0, np.ones((self.n, 1)))
        return np.ascontiguousarray(np.hstack(cols))

    @property
    def tl_subject(self):
        return np.repeat(np.arange(self.n), np.diff(self.tl_ptr))
