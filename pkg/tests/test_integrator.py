"""Integrator behavior on flows with known closed-form solutions."""

from __future__ import annotations

import numpy as np
import pytest

from zgsflow.centralized import CentralFlow, CentralProblem
from zgsflow.errors import MaxStepsExceeded, StepUnderflow
from zgsflow.integrator import (
    FlowModel,
    IntegratorSettings,
    Trajectory,
    integrate,
    settling_time,
)
from zgsflow.problem import EqualityConstraint, LocalProblem, quadratic_cost
from zgsflow.protocols import ProtocolSpec, sgn_pow


class _Decay(FlowModel):
    """Scalar test flow u' = -u."""

    dim = 1

    def initial_state(self):
        return np.array([1.0])

    def rhs(self, t, u):
        return -u


class _SignedDecay(FlowModel):
    """Scalar test flow u' = -sgn^(1/2)(u); u(t) = (1 - t/2)^2 from 1."""

    dim = 1

    def initial_state(self):
        return np.array([1.0])

    def rhs(self, t, u):
        return -sgn_pow(u, 0.5)

    def y_slice(self):
        return slice(0, 1)


class _Smooth2D(FlowModel):
    """Nonlinear smooth flow for the order-of-convergence check."""

    dim = 2

    def initial_state(self):
        return np.array([1.0, 0.5])

    def rhs(self, t, u):
        return np.array([-u[0] + u[1] ** 2, -u[1] - u[0] * u[1]])


class _WallCrash(FlowModel):
    """Constant drift into a hard wall at u = 1."""

    dim = 1

    def initial_state(self):
        return np.array([0.0])

    def rhs(self, t, u):
        return np.ones(1)

    def margin(self, t, u):
        return float(1.0 - u[0])


def _central_flow(family: str) -> CentralFlow:
    prob = LocalProblem(cost=quadratic_cost(2.0 * np.eye(2)),
                        eq=EqualityConstraint([[1.0, 1.0]], [2.0]))
    cp = CentralProblem.from_local([prob])
    if family == "LP":
        spec = ProtocolSpec("LP", n_agents=1, c0=2.0)
    elif family == "FxTP":
        spec = ProtocolSpec("FxTP", n_agents=1, eta=1, drive_gain=5.0,
                            alpha=[0.5], beta=[1.5], alpha_edge={(1, 2): 0.5},
                            beta_edge={(1, 2): 1.5})
    else:
        spec = ProtocolSpec("PTP", n_agents=1)
    return CentralFlow(cp, spec, np.zeros(3))


def test_scalar_linear_decay():
    traj = integrate(_Decay(), IntegratorSettings(dt=1e-3), 1.0)
    assert abs(traj.states[-1][0] - np.exp(-1.0)) <= 1e-10


def test_scalar_linear_decay_adaptive():
    settings = IntegratorSettings(method="rk45_adaptive", dt=1e-2)
    traj = integrate(_Decay(), settings, 1.0)
    assert abs(traj.states[-1][0] - np.exp(-1.0)) <= 1e-7


def test_finite_time_scalar_settles_at_two():
    """u' = -sgn^(1/2)(u) from 1 reaches zero at exactly t = 2; the
    integrator detects settling within one base step."""
    settings = IntegratorSettings(dt=1e-3, sample_dt=1e-2)
    traj = integrate(_SignedDecay(), settings, 4.0)
    assert traj.termination == "settled"
    assert traj.settle_time is not None
    assert abs(traj.settle_time - 2.0) <= 1e-3
    early = traj.times <= 1.9
    closed = (1.0 - traj.times[early] / 2.0) ** 2
    assert np.max(np.abs(traj.states[early, 0] - closed)) <= 1e-6
    late = traj.times >= 2.0
    assert np.all(traj.states[late, 0] == 0.0)


def test_order_four_convergence():
    """Richardson self-convergence: halving dt cuts the endpoint error
    by about 2^4 against a dt/64 reference."""
    ref = integrate(_Smooth2D(), IntegratorSettings(dt=0.1 / 64), 1.0)
    e = []
    for dt in (0.1, 0.05):
        traj = integrate(_Smooth2D(), IntegratorSettings(dt=dt, sample_dt=0.1), 1.0)
        e.append(np.max(np.abs(traj.states[-1] - ref.states[-1])))
    ratio = e[0] / e[1]
    assert 12.0 <= ratio <= 20.0


def test_lp_costate_matches_exponential_closed_form():
    """LP drive: max-abs of y equals its initial value times e^(-c0 t)
    to rel. 1e-6 at every sample."""
    traj = integrate(_central_flow("LP"), IntegratorSettings(dt=1e-3), 5.0)
    y = traj.metric("y_norm")
    want = y[0] * np.exp(-2.0 * traj.times)
    assert np.max(np.abs(y - want) / want) <= 1e-6


def test_determinism_bit_identical():
    settings = IntegratorSettings(dt=1e-3, sample_dt=5e-3)
    a = integrate(_central_flow("FxTP"), settings, 3.0)
    b = integrate(_central_flow("FxTP"), settings, 3.0)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.states, b.states)
    assert set(a.metrics) == set(b.metrics)
    for k in a.metrics:
        assert np.array_equal(a.metrics[k], b.metrics[k], equal_nan=True)
    assert a.steps == b.steps
    assert a.termination == b.termination
    assert a.settle_time == b.settle_time


class _GuardModel(FlowModel):
    """Smooth decay with a declared guard band just before t = 0.5."""

    dim = 1

    def initial_state(self):
        return np.array([1.0])

    def rhs(self, t, u):
        return -u

    def breakpoints(self):
        return ((0.5 - 1e-9, 0.5),)


def test_guard_band_is_jumped_not_entered():
    traj = integrate(_GuardModel(), IntegratorSettings(dt=1e-3), 1.0)
    assert traj.meta["guard_jumps"] == 1
    assert abs(traj.states[-1][0] - np.exp(-1.0)) <= 1e-8


def test_prescribed_drive_absorbs_before_horizon():
    """The diverging drive gain contracts y below the absorption
    threshold just before the horizon; the flow settles there and y is
    exactly zero from then on."""
    traj = integrate(_central_flow("PTP"),
                     IntegratorSettings(dt=1e-3, sample_dt=5e-3), 2.0)
    assert traj.termination == "settled"
    assert 0.49 <= traj.settle_time <= 0.5
    past = traj.times >= traj.settle_time
    assert np.all(traj.metric("y_norm")[past] == 0.0)


def test_wall_collision_raises_step_underflow():
    with pytest.raises(StepUnderflow):
        integrate(_WallCrash(), IntegratorSettings(dt=1e-2, max_steps=100000), 5.0)


def test_step_budget_enforced():
    with pytest.raises(MaxStepsExceeded):
        integrate(_Decay(), IntegratorSettings(dt=1e-4, max_steps=10), 1.0)


def test_horizon_snaps_to_sample_grid():
    traj = integrate(_Decay(), IntegratorSettings(dt=1e-3, sample_dt=0.3), 1.0)
    assert len(traj.times) == 4
    assert traj.t_end == pytest.approx(0.9)


def test_settings_validation():
    with pytest.raises(ValueError):
        IntegratorSettings(method="euler")
    with pytest.raises(ValueError):
        IntegratorSettings(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorSettings(sample_dt=-1.0)


def _metric_traj(times, **metrics):
    return Trajectory(times=np.asarray(times, dtype=float),
                      states=np.zeros((len(times), 1)),
                      metrics={k: np.asarray(v, dtype=float)
                               for k, v in metrics.items()})


def test_settling_time_detection():
    t = np.linspace(0.0, 10.0, 1001)
    traj = _metric_traj(t, zero=np.zeros_like(t), decay=np.exp(-t))
    assert settling_time(traj, "zero", 0.0, 0.5) == 0.0
    tau = settling_time(traj, "decay", np.exp(-5.0), 0.1)
    assert tau is not None and abs(tau - 5.0) <= 0.01 + 1e-12
    assert settling_time(traj, "decay", 1e-9, 0.1) is None


def test_settling_time_requires_hold_window():
    t = np.arange(0.0, 1.01, 0.01)
    vals = np.ones_like(t)
    vals[10:13] = 0.0   # 0.02 s dip, shorter than the hold
    vals[50:] = 0.0     # long final run
    traj = _metric_traj(t, m=vals)
    assert settling_time(traj, "m", 0.0, 0.1) == pytest.approx(0.5)
    # A window reaching the trajectory end still counts only if it is
    # at least the hold long.
    short = _metric_traj(t[:55], m=vals[:55])
    assert settling_time(short, "m", 0.0, 0.1) is None
