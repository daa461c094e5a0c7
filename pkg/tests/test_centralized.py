"""Centralized flows: conjugacy, settling onto the KKT point, barrier gap."""

from __future__ import annotations

import numpy as np
import pytest

from zgsflow.analysis import exp_fit
from zgsflow.centralized import (
    CentralFlow,
    CentralProblem,
    aggregate_cost,
    barrier_cta_rhs,
    newton_cta_rhs,
    stacked_equality,
    suboptimality_bound,
)
from zgsflow.errors import ConfigError
from zgsflow.integrator import IntegratorSettings, integrate, settling_time
from zgsflow.oracle import solve_kkt
from zgsflow.problem import (
    EqualityConstraint,
    InequalityBlock,
    LocalProblem,
    SlackSchedule,
    linear_inequality,
    quadratic_cost,
)
from zgsflow.protocols import ProtocolSpec

_SETTINGS = IntegratorSettings(dt=1e-3, sample_dt=5e-3)
_KKT3 = np.array([[2.0, 0.0, 1.0], [0.0, 2.0, 1.0], [1.0, 1.0, 0.0]])


def _pair_problem() -> LocalProblem:
    """f(x) = ||x||^2 on R^2 with x1 + x2 = 2; optimum (1, 1), dual -2."""
    return LocalProblem(cost=quadratic_cost(2.0 * np.eye(2)),
                        eq=EqualityConstraint([[1.0, 1.0]], [2.0]))


def _lp(c0: float) -> ProtocolSpec:
    return ProtocolSpec("LP", n_agents=1, c0=c0)


def _drive_spec(family: str) -> ProtocolSpec:
    if family == "FTP":
        return ProtocolSpec("FTP", n_agents=1, drive_gain=5.0, alpha=[0.5],
                            alpha_edge={(1, 2): 0.5})
    if family == "FxTP":
        return ProtocolSpec("FxTP", n_agents=1, eta=1, drive_gain=5.0,
                            alpha=[0.5], beta=[1.5],
                            alpha_edge={(1, 2): 0.5}, beta_edge={(1, 2): 1.5})
    return ProtocolSpec("PTP", n_agents=1)


def _no_eq(n: int) -> EqualityConstraint:
    return EqualityConstraint(np.zeros((0, n)), np.zeros(0))


def test_equilibrium_at_kkt_point():
    cp = CentralProblem.from_local([_pair_problem()])
    dz, dy = newton_cta_rhs(cp, _lp(2.0), np.array([1.0, 1.0, -2.0]),
                            np.zeros(3), 0.0)
    assert np.array_equal(dz, np.zeros(3))
    assert np.array_equal(dy, np.zeros(3))


def test_initial_costate_and_first_derivative():
    cp = CentralProblem.from_local([_pair_problem()])
    flow = CentralFlow(cp, _lp(1.0), np.zeros(3))
    assert np.array_equal(flow.y0, [0.0, 0.0, -2.0])
    rhs = flow.rhs(0.0, flow.initial_state())
    want_dz = -np.linalg.solve(_KKT3, flow.y0)
    assert np.allclose(rhs[:3], want_dz, atol=1e-12)
    assert np.array_equal(rhs[3:], -flow.y0)


def test_conjugacy_identity_tracks_error_budget():
    """grad L(z(t)) - y(t) stays within 10x the local error budget at
    every sample of an equality-only run."""
    cp = CentralProblem.from_local([_pair_problem()])
    flow = CentralFlow(cp, _lp(2.0), np.zeros(3))
    traj = integrate(flow, _SETTINGS, 5.0)
    budget = 10.0 * np.maximum(traj.metric("err_est"), 1e-16) + 1e-13
    assert np.all(traj.metric("grad_res") <= budget)


@pytest.mark.parametrize("family", ["FTP", "FxTP", "PTP"])
def test_nonsmooth_drives_settle_on_the_oracle(family):
    """Past the measured drive settling, the Lagrangian gradient is zero
    (<= 1e-8) and the state sits on the KKT solution to 1e-6."""
    prob = _pair_problem()
    cp = CentralProblem.from_local([prob])
    flow = CentralFlow(cp, _drive_spec(family), np.zeros(3),
                       reference=solve_kkt([prob]))
    traj = integrate(flow, _SETTINGS, 5.0)
    tau = settling_time(traj, "y_norm", 1e-12, 0.25)
    assert tau is not None and tau < 2.5
    tail = traj.times >= tau
    assert float(traj.metric("grad_norm")[tail].max()) <= 1e-8
    z_err = np.hypot(traj.metric("x_err"), traj.metric("lam_err"))
    assert float(z_err[tail].max()) <= 1e-6


def test_exponential_drive_rate_matches_gain():
    """With drive r0 * y, || z(t) - z* || decays at rate r0 within 5%."""
    prob = _pair_problem()
    cp = CentralProblem.from_local([prob])
    flow = CentralFlow(cp, _lp(2.0), np.zeros(3), reference=solve_kkt([prob]))
    traj = integrate(flow, _SETTINGS, 5.0)
    z_err = np.hypot(traj.metric("x_err"), traj.metric("lam_err"))
    rate, r2 = exp_fit(traj.times, z_err, 1.0, 5.0)
    assert abs(rate - 2.0) <= 0.1
    assert r2 >= 0.99


def test_barrier_rhs_reduces_to_equality_rhs_far_from_wall():
    """With a huge penalty and a distant wall the barrier terms are
    O(1/c) and both flows produce the same derivative."""
    cost = quadratic_cost(2.0 * np.eye(2))
    eq = EqualityConstraint([[1.0, 1.0]], [2.0])
    wall = linear_inequality(np.array([1.0, 0.0]), 100.0)
    cp_eq = CentralProblem(cost=cost, eq=eq)
    cp_b = CentralProblem(cost=cost, eq=eq, constraints=(wall,), c0=1e9,
                          slack=SlackSchedule(0.0, 1.0, 2))
    rng = np.random.default_rng(2)
    spec = _lp(2.0)
    for _ in range(10):
        z = rng.standard_normal(3)
        y = rng.standard_normal(3)
        dz_e, dy_e = newton_cta_rhs(cp_eq, spec, z, y, 0.0)
        dz_b, dy_b = barrier_cta_rhs(cp_b, spec, z, y, 0.0)
        assert np.max(np.abs(dz_b - dz_e)) <= 1e-8
        assert np.array_equal(dy_b, dy_e)


def test_barrier_flow_finds_scalar_stationary_point():
    """f = x^2 with barrier -log(1 - x) at unit penalty settles on the
    root of 2x + 1/(1 - x) = 0, located by bisection."""
    cp = CentralProblem(cost=quadratic_cost(np.array([[2.0]])), eq=_no_eq(1),
                        constraints=(linear_inequality(np.array([1.0]), 1.0),),
                        c0=1.0, slack=SlackSchedule(0.0, 1.0, 2))
    flow = CentralFlow(cp, _lp(5.0), np.zeros(1))
    traj = integrate(flow, _SETTINGS, 3.0)

    g = lambda x: 2.0 * x + 1.0 / (1.0 - x)
    lo, hi = -0.9, 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    assert root == pytest.approx((1.0 - np.sqrt(3.0)) / 2.0, abs=1e-12)
    assert abs(traj.states[-1][0] - root) <= 1e-6
    budget = 10.0 * np.maximum(traj.metric("err_est"), 1e-16) + 1e-13
    assert np.all(traj.metric("grad_res") <= budget)


def test_constant_penalty_duality_gap():
    """Barrier tracking with s = 0 and constant c lands within p/c of
    the constrained optimum F(x*) = 1 (analytic for this instance)."""
    cp = CentralProblem(
        cost=quadratic_cost(np.array([[2.0]]), np.array([-2.0]), 1.0),
        eq=_no_eq(1), constraints=(linear_inequality(np.array([1.0]), 0.0),),
        c0=100.0, slack=SlackSchedule(0.0, 1.0, 2))
    flow = CentralFlow(cp, _lp(5.0), np.array([-0.5]))
    traj = integrate(flow, _SETTINGS, 5.0)
    x_end = traj.states[-1][0]
    gap = cp.cost.value(np.array([x_end])) - 1.0
    assert 0.0 <= gap <= cp.p / cp.c0 + 1e-6
    # The relaxed optimum solves 200 x^2 - 200 x - 1 = 0 (negative root).
    root = (1.0 - np.sqrt(1.02)) / 2.0
    assert abs(x_end - root) <= 1e-6
    assert np.all(traj.metric("margin_min") > 0.0)


def test_suboptimality_bound_values():
    walls = tuple(linear_inequality(np.array([1.0]), float(k))
                  for k in range(1, 7))
    cp6 = CentralProblem(cost=quadratic_cost(np.array([[2.0]])), eq=_no_eq(1),
                         constraints=walls, c0=1000.0)
    assert suboptimality_bound(cp6, 0.0) == pytest.approx(0.006)
    cp1 = CentralProblem(cost=quadratic_cost(np.array([[2.0]])), eq=_no_eq(1),
                         constraints=walls[:1], c0=10.0)
    assert suboptimality_bound(cp1, 0.0) == pytest.approx(0.1)
    cp0 = CentralProblem.from_local([_pair_problem()])
    assert suboptimality_bound(cp0, 3.0) == 0.0
    grown = CentralProblem(cost=quadratic_cost(np.array([[2.0]])),
                           eq=_no_eq(1), constraints=walls[:1], c0=1.0,
                           r_c=1.0, c_max=1e6)
    assert suboptimality_bound(grown, 100.0) == pytest.approx(1e-6)


def test_penalty_schedule_and_breakpoints():
    cp = CentralProblem(cost=quadratic_cost(np.array([[2.0]])), eq=_no_eq(1),
                        constraints=(linear_inequality(np.array([1.0]), 1.0),),
                        c0=1.0, r_c=1.0, c_max=np.e ** 3,
                        slack=SlackSchedule(0.5, 1.0, 2))
    c, cdot = cp.penalty(0.0)
    assert (c, cdot) == (1.0, 1.0)
    assert cp.cap_time == pytest.approx(3.0)
    c, cdot = cp.penalty(10.0)
    assert c == cp.c_max and cdot == 0.0

    flow = CentralFlow(cp, _lp(5.0), np.array([0.0]))
    times = [b[0] for b in flow.breakpoints()]
    assert cp.cap_time in times and 1.0 in times
    assert not flow.settle_allowed(0.5)
    assert flow.settle_allowed(3.5)


def test_aggregation_helpers():
    p1 = _pair_problem()
    p2 = LocalProblem(
        cost=quadratic_cost(4.0 * np.eye(2), np.array([1.0, 0.0])),
        eq=EqualityConstraint([[1.0, -1.0]], [0.0]),
        ineq=InequalityBlock((linear_inequality(np.array([0.0, 1.0]), 5.0),),
                             c=50.0, slack=SlackSchedule(0.2, 1.0, 2)))
    agg = aggregate_cost([p1, p2])
    x = np.array([0.3, -0.7])
    assert agg.value(x) == pytest.approx(p1.cost.value(x) + p2.cost.value(x))
    assert np.allclose(agg.grad(x), p1.cost.grad(x) + p2.cost.grad(x))
    assert np.allclose(agg.hess(x), p1.cost.hess(x) + p2.cost.hess(x))
    assert agg.theta == pytest.approx(p1.cost.theta + p2.cost.theta)

    eq = stacked_equality([p1, p2])
    assert np.array_equal(eq.A, [[1.0, 1.0], [1.0, -1.0]])
    assert np.array_equal(eq.b, [2.0, 0.0])

    cp = CentralProblem.from_local([p1, p2], c0=50.0)
    assert cp.p == 1 and cp.slack.s0 == 0.2


def test_construction_validation():
    with pytest.raises(ConfigError):
        CentralProblem(cost=quadratic_cost(np.array([[2.0]])), eq=_no_eq(1),
                       c0=0.0)
    cp = CentralProblem.from_local([_pair_problem()])
    with pytest.raises(ConfigError):
        CentralFlow(cp, _lp(1.0), np.zeros(4))
