import numpy as np
import pytest

from osmilestone.simulation import ScenarioConfig, generate_trial
from osmilestone.trial import Arm, EventTime, SubjectRecord, iso_to_day

DAY0 = iso_to_day("2021-03-01")


def make_subject(sid, os=(12.0, 0), nl=None, nt=None, ttp=None, prog=None, arm=0,
                 covs=(), tl=None, rand=DAY0):
    """Compact subject constructor; unspecified endpoints are censored at OS."""
    os_ev = EventTime(*os)
    cens = EventTime(os_ev.time, 0)
    nl_ev = EventTime(*nl) if nl else cens
    nt_ev = EventTime(*nt) if nt else cens
    ttp_ev = EventTime(*ttp) if ttp else nl_ev
    prog_ev = EventTime(*prog) if prog else ttp_ev
    if tl is None:
        tl = tuple((float(t), 50.0 + t) for t in np.arange(0.0, os_ev.time + 1e-9, 3.0))
    return SubjectRecord(
        subject_id=sid,
        arm=Arm.EXPERIMENTAL if arm else Arm.CONTROL,
        covariates=tuple(covs),
        randomization_date=float(rand),
        tl_series=tuple(tl),
        nt=nt_ev,
        nl=nl_ev,
        ttp=ttp_ev,
        progression=prog_ev,
        os=os_ev,
    )


@pytest.fixture(scope="session")
def scenario2_trial():
    return generate_trial(ScenarioConfig(scenario=2, n_subjects=60, seed=11))


@pytest.fixture(scope="session")
def four_case_subjects():
    """One subject per (component, OS) censoring pattern."""
    return [
        make_subject("A", os=(14.0, 1), nl=(5.0, 1), arm=1, covs=(0.3,)),
        make_subject("B", os=(9.0, 1), arm=0, covs=(-1.2,)),
        make_subject("C", os=(20.0, 0), nl=(7.5, 1), arm=1, covs=(0.0,)),
        make_subject("D", os=(16.0, 0), arm=0, covs=(2.1,)),
    ]


# -- acceptance verdict lines -------------------------------------------------

_VERDICTS = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    tag = request.node.name.split("_")[1].upper()
    seen = []

    def record(ok, detail):
        seen.append(True)
        _VERDICTS.append(f"{tag} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    yield record
    if not seen:
        _VERDICTS.append(f"{tag} FAIL: did not complete")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
