"""End-to-end acceptance checks for the simulation library.

One test per headline guarantee, each with its tolerances stated
inline. All trajectory-level checks run against the shared preset
fixtures so the expensive integrations happen once per session.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from zgsflow.analysis import exp_fit
from zgsflow.centralized import CentralFlow, CentralProblem
from zgsflow.integrator import IntegratorSettings, integrate, settling_time
from zgsflow.oracle import solve_active_kkt, total_objective
from zgsflow.problem import (
    EqualityConstraint,
    LocalProblem,
    InequalityBlock,
    SlackSchedule,
    linear_inequality,
    quadratic_cost,
)
from zgsflow.protocols import ProtocolSpec


def test_capture_identities_and_runtime(preset_runs):
    """Every preset run finishes within 30 s at dt=1e-3, t_end=5; the
    conservation identities track within 10x the accumulated local
    error estimate at every sample; runs with finite-settling drives
    hold both aggregate residuals at or below 1e-6 once the drive has
    settled."""
    for (case, fam), (sc, traj, elapsed) in preset_runs.items():
        label = f"{case}/{fam}"
        assert elapsed <= 30.0, f"{label}: took {elapsed:.1f}s"

        # Identity drift budget: 10x the running local-error estimate
        # plus a rounding atom for the exact samples near t = 0.
        budget = 10.0 * np.maximum(traj.metrics["err_est"], 1e-16) + 1e-13
        assert np.all(traj.metrics["id_zgs"] <= budget), label
        assert np.all(traj.metrics["id_feas"] <= budget), label

        if fam in ("FTP", "FxTP", "PTP"):
            tau = settling_time(traj, "y_norm", 0.0, 0.5)
            assert tau is not None, f"{label}: drive never reached zero"
            past = traj.times >= tau
            assert traj.metrics["zgs_residual"][past].max() <= 1e-6, label
            assert traj.metrics["feas_residual"][past].max() <= 1e-6, label


def test_prescribed_time_convergence(preset_runs):
    """The equality-case prescribed-time run (T=1, T0=0.5, kappa=10,
    h=3) meets E_x(1.0) <= 1e-3 and E_lam(1.0) <= 1e-2; the sampled
    state-derivative magnitude stays finite, peaks during the initial
    transient, and collapses at the horizon sample (<= 1e-3)."""
    sc, traj, _ = preset_runs[("case1_equality", "PTP")]
    k = traj.at_time(1.0)
    assert abs(traj.times[k] - 1.0) < 1e-9
    assert traj.metrics["E_x"][k] <= 1e-3
    assert traj.metrics["E_lam"][k] <= 1e-2

    dz = traj.metrics["dz_max"]
    t = traj.times
    assert np.all(np.isfinite(dz))
    # The exact flow's input envelope decays from its transient peak;
    # compare coarse halves of the approach instead of per-sample
    # monotonicity, which step noise would make vacuous.
    assert int(np.argmax(dz)) < int(np.searchsorted(t, 0.5))
    first_half = dz[(t <= 0.5)].max()
    second_half = dz[(t >= 0.5) & (t <= 1.0)].max()
    assert second_half <= first_half
    assert dz[k] <= 1e-3


def test_family_rate_ordering(preset_runs):
    """Equality case: the signed-power families settle E_x to 1e-6 in
    finite measured time; the linear protocol never does within
    t_end=5 but decays exponentially (log-slope fit over [1, 4] with
    R^2 >= 0.99)."""
    for fam in ("FTP", "FxTP"):
        _, traj, _ = preset_runs[("case1_equality", fam)]
        s = settling_time(traj, "E_x", 1e-6, 0.1)
        assert s is not None, f"{fam}: no finite settling"
        assert s < 5.0

    _, traj, _ = preset_runs[("case1_equality", "LP")]
    assert settling_time(traj, "E_x", 1e-6, 0.1) is None
    rate, r2 = exp_fit(traj.times, traj.metrics["E_x"], 1.0, 4.0)
    assert rate > 0.0
    assert r2 >= 0.99


def test_reference_solution_band(case1_reference):
    """With the recorded seed 42, the equality-case solve lands within
    a loose band of the case study's published optimum (+-0.5 per
    primal component, +-2.0 per dual component; the published random
    draw itself is unknown). The hard requirement is the KKT residual
    at 1e-12."""
    expected_x = np.array(
        [-0.100, 0.763, 0.506, -0.710, -0.490, 0.266, 0.546])
    expected_lam = np.array(
        [7.838, -6.301, -12.907, 5.947, 4.553, 6.165])
    ref = case1_reference
    assert ref.kkt_residual <= 1e-12
    assert np.all(np.abs(ref.x - expected_x) <= 0.5)
    assert np.all(np.abs(ref.lam - expected_lam) <= 2.0)


def test_barrier_relaxation_gap(preset_runs):
    """Inequality case with the fixed-time protocol: the final mean
    objective exceeds the exact constrained optimum by at most
    p/c + 1e-6 = 6e-3 + 1e-6, every sample keeps a strictly positive
    barrier margin, and E_x against the relaxed optimum ends at or
    below 1e-4."""
    sc, traj, _ = preset_runs[("case2_inequality", "FxTP")]
    flow = sc.flow_model()
    xbar = traj.states[-1][flow.x_idx].mean(axis=0)
    gap = total_objective(sc.problems, xbar) - sc.reference_exact.objective
    assert gap <= 6e-3 + 1e-6
    assert np.all(traj.metrics["ineq_margin"] > 0.0)
    assert traj.metrics["E_x"][-1] <= 1e-4


def test_centralized_rate_propositions(case1_problems):
    """Centralized flows: (1) with the linear drive r0*y the gradient
    norm decays at rate r0 within 5%; (2) with an exponential penalty
    c(t) = c0*exp(r_c*t) the primal error decays at rate r_c/2 within
    10% once both the drive and the slack have settled."""
    # (1) aggregated equality-case problem, r0 = 2.
    cp = CentralProblem.from_local(list(case1_problems))
    spec = ProtocolSpec(family="LP", n_agents=1, c0=2.0)
    flow = CentralFlow(cp, spec, np.zeros(cp.dim))
    settings = IntegratorSettings(dt=1e-3, sample_dt=5e-3)
    traj = integrate(flow, settings, 5.0)
    rate, r2 = exp_fit(traj.times, traj.metrics["grad_norm"], 0.5, 4.0)
    assert abs(rate - 2.0) <= 0.05 * 2.0
    assert r2 >= 0.99

    # (2) small barrier problem with growing penalty, r_c = 1; the fit
    # starts 0.25 s past the later of drive settling and slack horizon.
    cost = quadratic_cost(2.0 * np.eye(2))
    eq = EqualityConstraint(np.array([[0.0, 1.0]]), np.array([1.0]))
    wall = linear_inequality(np.array([1.0, 0.0]), 0.0)
    prob = LocalProblem(
        cost=cost, eq=eq,
        ineq=InequalityBlock((wall,), c=1.0, slack=SlackSchedule(0.5, 1.0, 2)))
    cp2 = CentralProblem.from_local(
        [prob], c0=1.0, r_c=1.0, slack=SlackSchedule(0.5, 1.0, 2))
    spec2 = ProtocolSpec(family="LP", n_agents=1, c0=10.0)
    flow2 = CentralFlow(cp2, spec2, np.array([-0.3, 1.0, 0.0]),
                        reference=solve_active_kkt([prob]))
    settings2 = IntegratorSettings(dt=1e-3, sample_dt=2.5e-3)
    traj2 = integrate(flow2, settings2, 5.0)
    tau = settling_time(traj2, "y_norm", 1e-6, 0.1)
    assert tau is not None
    t0 = max(tau, 1.0) + 0.25
    rate2, r2b = exp_fit(traj2.times, traj2.metrics["x_err"], t0, 5.0)
    assert abs(rate2 - 0.5) <= 0.10 * 0.5
    assert r2b >= 0.99


def test_property_suite_complete_and_standalone():
    """Each library module has a dedicated property-test module, and
    the simulation package never touches the plotting toolkit."""
    here = Path(__file__).resolve().parent
    for mod in ("graph", "problem", "protocols", "centralized", "dynamics",
                "integrator", "analysis", "oracle", "config", "cli"):
        assert (here / f"test_{mod}.py").is_file(), mod

    src = here.parent / "src" / "zgsflow"
    for path in sorted(src.glob("*.py")):
        assert "plotkit" not in path.read_text(encoding="utf-8"), path.name
