"""Shared fixtures.

The two case-study presets are expensive to integrate, so every run the
suite needs is produced exactly once per session here: the eight
acceptance runs at t_end = 5, dt = 1e-3, and the same scenarios at
their native horizons (shared with the acceptance runs where the
settings coincide).
"""

from __future__ import annotations

import time

import pytest

from zgsflow.cli import attach_references
from zgsflow.integrator import integrate
from zgsflow.oracle import solve_kkt
from zgsflow.presets import PRESETS, T_END, case_problems
from zgsflow.protocols import FAMILIES

CASES = ("case1_equality", "case2_inequality")

# The long barrier LP tail is smooth; dt = 2e-3 halves its wall time
# while keeping the capture residual near 2e-7.
_NATIVE_DT = {("case2_inequality", "LP"): 2e-3}


def timed_run(case: str, family: str, t_end: float | None = None,
              dt: float | None = None):
    """Build a preset scenario, attach references, integrate, and time it."""
    sc = PRESETS[case](family, t_end=t_end, dt=dt)
    attach_references(sc)
    start = time.perf_counter()
    traj = integrate(sc, sc.settings, sc.t_end)
    return sc, traj, time.perf_counter() - start


@pytest.fixture(scope="session")
def preset_runs():
    """All eight preset runs at the acceptance settings t_end=5, dt=1e-3."""
    return {(case, fam): timed_run(case, fam, t_end=5.0, dt=1e-3)
            for case in CASES for fam in FAMILIES}


@pytest.fixture(scope="session")
def native_runs(preset_runs):
    """The eight presets at their native horizons and default steps."""
    out = {}
    for case in CASES:
        for fam in FAMILIES:
            native = T_END[(case.split("_")[0], fam)]
            if native == 5.0 and (case, fam) not in _NATIVE_DT:
                out[(case, fam)] = preset_runs[(case, fam)]
            else:
                out[(case, fam)] = timed_run(
                    case, fam, dt=_NATIVE_DT.get((case, fam)))
    return out


@pytest.fixture(scope="session")
def case1_problems():
    return case_problems()


@pytest.fixture(scope="session")
def case2_problems():
    return case_problems(with_inequality=True)


@pytest.fixture(scope="session")
def case1_reference(case1_problems):
    return solve_kkt(list(case1_problems))
