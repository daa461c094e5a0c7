"""Metrics, spectral diagnostics, and the trajectory invariant report.

The invariant report turns the convergence guarantees of each protocol
family into checkable assertions over one completed trajectory:

(a) summed-gradient and per-agent feasibility residuals captured at
    zero once the costate drive has settled;
(b) the aggregate Bregman gap to the reference optimum decreasing
    monotonically after that settling point;
(c) settling behavior matching the family (exponential decay for the
    linear protocol, finite settling for the signed-power families);
(d) the prescribed-time family meeting its horizon error bound;
(e) bounded state derivatives throughout;
(f) strictly positive relaxed-feasibility margins on barrier runs;
(g) the final objective within the barrier suboptimality bound.

Spectral side: the consensus curvature operator M is assembled on edge
space as (B kron I_n)^T blockdiag(P_i) (B kron I_n), with B the
weighted incidence matrix and P_i the primal block of each agent's
curvature inverse. Its null space equals the cycle space of the graph
copied across coordinates, of dimension n (m - N + components), and
lambda2 is the smallest eigenvalue above that null space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpectrumMismatch
from .graph import component_count, incidence
from .integrator import Trajectory, settling_time
from .oracle import ReferenceSolution, total_objective
from .problem import (
    barrier_terms,
    block_inverse,
    lagrangian_grad_parts,
    relaxed_margin,
)
from .protocols import sgn_pow

_NULL_TOL = 1e-10


@dataclass(frozen=True)
class MetricSet:
    """Pointwise error and residual metrics for one swarm state."""

    E_x: float
    E_lam: float
    zgs_residual: float
    feas_residual: float
    consensus_diameter: float
    ineq_margin: float
    lambda2_M: float


@dataclass(frozen=True)
class Lambda2Result:
    """Spectral split of the consensus curvature operator."""

    value: float
    degenerate: bool
    nullity: int
    expected_nullity: int
    eigs: np.ndarray


def compute_metrics(sc, state, reference: ReferenceSolution) -> MetricSet:
    """All pointwise metrics of a swarm state against a reference."""
    t = state.t
    n = sc.n
    e_x = e_lam = 0.0
    zsum = np.zeros(n)
    feas = 0.0
    margin = np.inf
    xs = []
    for i, p in enumerate(sc.problems):
        a = state.agents[i]
        xs.append(a.x)
        parts = lagrangian_grad_parts(p, a.x, a.lam, t)
        zsum += parts[:n]
        if p.r:
            feas = max(feas, float(np.linalg.norm(parts[n:])))
        margin = min(margin, relaxed_margin(p, a.x, t))
        e_x += float(np.linalg.norm(a.x - reference.x))
        if p.r:
            e_lam += float(np.linalg.norm(a.lam - reference.lam_parts[i]))
    diam = 0.0
    for i in range(sc.N):
        for j in range(i + 1, sc.N):
            diam = max(diam, float(np.linalg.norm(xs[i] - xs[j])))
    return MetricSet(
        E_x=e_x / sc.N,
        E_lam=e_lam / sc.N,
        zgs_residual=float(np.linalg.norm(zsum)),
        feas_residual=feas,
        consensus_diameter=diam,
        ineq_margin=margin,
        lambda2_M=lambda2_of_M(sc, state),
    )


def _primal_blocks(sc, X: np.ndarray, t: float) -> list[np.ndarray]:
    """P_i blocks of the curvature inverses at the given x rows."""
    out = []
    for i, p in enumerate(sc.problems):
        h = p.cost.hess(X[i])
        if sc.mode == "barrier" and p.ineq is not None:
            h = h + barrier_terms(p.ineq, X[i], t, want_hess=True)["hess"]
        a = p.eq.A if p.r else np.zeros((0, sc.n))
        out.append(block_inverse(h, a).P)
    return out


def _stacked_full_rank(sc) -> bool:
    rows = [p.eq.A for p in sc.problems if p.r]
    if not rows:
        return True
    A = np.vstack(rows)
    if A.shape[0] > A.shape[1]:
        return False
    sv = np.linalg.svd(A, compute_uv=False)
    return bool(sv[-1] > 1e-10 * max(1.0, sv[0]))


def spectral_details(sc, state=None, X: np.ndarray | None = None,
                     t: float = 0.0) -> Lambda2Result:
    """Eigenvalue split of M at a swarm state (or raw x rows)."""
    if X is None:
        X = np.stack([a.x for a in state.agents])
        t = state.t
    n = sc.n
    net = sc.network
    B = incidence(net)
    m = net.edge_count
    Bbar = np.kron(B, np.eye(n))
    P = _primal_blocks(sc, X, t)
    PB = np.vstack([P[i] @ Bbar[i * n:(i + 1) * n] for i in range(sc.N)])
    M = Bbar.T @ PB
    M = 0.5 * (M + M.T)
    eigs = np.linalg.eigvalsh(M) if m else np.zeros(0)
    nullity = int(np.sum(eigs <= _NULL_TOL))
    expected = n * (m - net.node_count + component_count(net))
    degenerate = not _stacked_full_rank(sc)
    if not degenerate and nullity != expected:
        raise SpectrumMismatch(
            f"curvature operator has {nullity} near-null eigenvalues, "
            f"expected {expected} from the graph cycle space")
    above = eigs[eigs > _NULL_TOL]
    value = float(above[0]) if above.size else 0.0
    return Lambda2Result(value=value, degenerate=degenerate, nullity=nullity,
                         expected_nullity=expected, eigs=eigs)


def lambda2_of_M(sc, state) -> float:
    """Smallest eigenvalue of M above the null space, at a swarm state."""
    return spectral_details(sc, state).value


def rayleigh_floor(sc, state, alpha: float = 0.5, samples: int = 1000,
                   seed: int = 0) -> float:
    """Empirical lower estimate of the signed-power Rayleigh quotient.

    Draws random directions orthogonal to the null space of M, applies
    the componentwise signed power, and reports the observed minimum of
    f(w)^T M f(w) / f(w)^T f(w). A sampling estimate, not a certificate.
    """
    det = spectral_details(sc, state)
    X = np.stack([a.x for a in state.agents])
    n = sc.n
    B = incidence(sc.network)
    Bbar = np.kron(B, np.eye(n))
    P = _primal_blocks(sc, X, state.t)
    PB = np.vstack([P[i] @ Bbar[i * n:(i + 1) * n] for i in range(sc.N)])
    M = Bbar.T @ PB
    M = 0.5 * (M + M.T)
    w_all, v_all = np.linalg.eigh(M)
    pos = v_all[:, w_all > _NULL_TOL]
    if pos.shape[1] == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(samples):
        w = pos @ rng.standard_normal(pos.shape[1])
        f = sgn_pow(w, alpha)
        denom = float(f @ f)
        if denom <= 1e-30:
            continue
        best = min(best, float(f @ M @ f) / denom)
    return float(best) if np.isfinite(best) else 0.0


def attach_spectral_metric(traj: Trajectory, sc, stride: int = 1) -> np.ndarray:
    """Fill the lambda2_M metric column over the trajectory samples.

    Values are computed every ``stride`` samples and interpolated in
    between; the filled array is stored on the trajectory and returned.
    """
    flow = sc.flow_model()
    times = traj.times
    idx = np.arange(0, len(times), max(1, stride))
    if len(times) and idx[-1] != len(times) - 1:
        idx = np.append(idx, len(times) - 1)
    vals = np.empty(len(idx))
    for k, s in enumerate(idx):
        X = traj.states[s][flow.x_idx]
        vals[k] = spectral_details(sc, X=X, t=float(times[s])).value
    full = np.interp(times, times[idx], vals) if len(times) else vals
    traj.metrics["lambda2_M"] = full
    return full


def exp_fit(times: np.ndarray, vals: np.ndarray, t0: float,
            t1: float) -> tuple[float, float]:
    """Least-squares exponential decay fit over a time window.

    Returns (rate, r2) for vals ~ exp(-rate t); positive rate means
    decay. Nonpositive values inside the window are excluded.
    """
    mask = (times >= t0) & (times <= t1) & (vals > 0.0)
    if mask.sum() < 3:
        return 0.0, 0.0
    tt = times[mask]
    yy = np.log(vals[mask])
    slope, icept = np.polyfit(tt, yy, 1)
    pred = slope * tt + icept
    ss_res = float(np.sum((yy - pred) ** 2))
    ss_tot = float(np.sum((yy - yy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(-slope), float(r2)


# ---------------------------------------------------------------------------
# Invariant report


@dataclass
class ReportEntry:
    key: str
    label: str
    passed: bool | None
    margin: float | None = None
    detail: str = ""

    @property
    def status(self) -> str:
        if self.passed is None:
            return "info"
        return "pass" if self.passed else "FAIL"


@dataclass
class Report:
    scenario: str
    family: str
    entries: list[ReportEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed is not False for e in self.entries)

    def entry(self, key: str) -> ReportEntry | None:
        for e in self.entries:
            if e.key == key:
                return e
        return None

    def to_text(self) -> str:
        lines = [f"invariant report: {self.scenario} [{self.family}]"]
        for e in self.entries:
            head = f"  [{e.status:>4}] {e.label}"
            if e.margin is not None:
                head += f" (margin {e.margin:.3e})"
            lines.append(head)
            if e.detail:
                lines.append(f"         {e.detail}")
        for k in sorted(self.meta):
            lines.append(f"  {k} = {self.meta[k]}")
        lines.append(f"  overall: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_kv(self) -> dict[str, str]:
        out = {"scenario": self.scenario, "family": self.family,
               "overall": "pass" if self.passed else "fail"}
        for e in self.entries:
            out[f"{e.key}.status"] = e.status.strip().lower()
            if e.margin is not None:
                out[f"{e.key}.margin"] = f"{e.margin:.17g}"
            if e.detail:
                out[f"{e.key}.detail"] = e.detail
        for k in sorted(self.meta):
            out[f"meta.{k}"] = str(self.meta[k])
        return out


_DRIVE_TOL = 1e-8
_CAPTURE_TOL = 1e-6
_V_SLACK = 1e-9
_PT_TOL = 1e-3


def check_theorem_suite(traj: Trajectory, sc) -> Report:
    """Invariant report for one completed trajectory."""
    fam = sc.protocol.family
    rep = Report(scenario=sc.name, family=fam)
    times = traj.times
    if len(times) < 2:
        return rep
    span = float(times[-1] - times[0])
    hold = min(0.1, 0.25 * span)

    tau = settling_time(traj, "y_norm", _DRIVE_TOL, hold)
    rep.meta["drive_settling"] = tau
    rep.meta["termination"] = traj.termination
    rep.meta["steps"] = traj.steps
    rep.meta["err_est_final"] = float(traj.metrics["err_est"][-1])

    # (a) residual capture after drive settling
    if tau is None:
        rep.entries.append(ReportEntry(
            "zgs_capture", "summed-gradient capture", False,
            detail=f"drive never settled below {_DRIVE_TOL:g}"))
    else:
        w = times >= tau
        worst = max(float(traj.metrics["zgs_residual"][w].max()),
                    float(traj.metrics["feas_residual"][w].max()))
        rep.entries.append(ReportEntry(
            "zgs_capture", "summed-gradient capture", worst <= _CAPTURE_TOL,
            margin=_CAPTURE_TOL - worst,
            detail=f"max residual {worst:.3e} past t = {tau:.4g}"))

    # (b) Lyapunov monotonicity after drive settling
    v = traj.metrics.get("V")
    if v is None or np.isnan(v).all():
        rep.entries.append(ReportEntry(
            "lyapunov_monotone", "Bregman gap monotone", None,
            detail="no reference attached"))
    elif tau is not None:
        w = times >= tau
        vv = v[w]
        worst_rise = float(np.max(np.diff(vv))) if len(vv) > 1 else 0.0
        rep.entries.append(ReportEntry(
            "lyapunov_monotone", "Bregman gap monotone",
            worst_rise <= _V_SLACK, margin=_V_SLACK - worst_rise,
            detail=f"max forward difference {worst_rise:.3e}"))
    else:
        rep.entries.append(ReportEntry(
            "lyapunov_monotone", "Bregman gap monotone", None,
            detail="skipped: drive never settled"))

    # (c) settling behavior vs family
    ex = traj.metrics["E_x"]
    have_ref = not np.isnan(ex).all()
    if not have_ref:
        rep.entries.append(ReportEntry(
            "settling", "family settling behavior", None,
            detail="no reference attached"))
    elif fam == "LP":
        # Asserts the absence of finite settling only; the fitted decay
        # rate is informational (its quality depends on the window).
        s = settling_time(traj, "E_x", _CAPTURE_TOL, hold)
        rate, r2 = exp_fit(times, ex, 0.1 * span, 0.6 * span)
        rep.entries.append(ReportEntry(
            "settling", "exponential decay (no finite settling)", s is None,
            detail=f"fitted rate {rate:.4g}/s, r2 {r2:.5f}, settling "
                   f"{'none' if s is None else f'{s:.4g}'}"))
    elif fam in ("FTP", "FxTP"):
        s = settling_time(traj, "E_x", _CAPTURE_TOL, hold)
        if s is None:
            rep.entries.append(ReportEntry(
                "settling", "finite settling of E_x", False,
                detail=f"E_x never held below {_CAPTURE_TOL:g}"))
        else:
            rep.entries.append(ReportEntry(
                "settling", "finite settling of E_x", True,
                margin=float(times[-1]) - s,
                detail=f"settled at t = {s:.4g}"))
    else:
        k = traj.at_time(sc.protocol.T)
        rep.entries.append(ReportEntry(
            "settling", "prescribed-horizon tracking", None,
            detail=f"E_x({times[k]:.4g}) = {ex[k]:.3e}"))

    # (d) prescribed horizon compliance
    if fam == "PTP" and have_ref:
        k = traj.at_time(sc.protocol.T)
        val = float(ex[k])
        rep.entries.append(ReportEntry(
            "pt_horizon", f"E_x at T = {sc.protocol.T:g}", val <= _PT_TOL,
            margin=_PT_TOL - val, detail=f"E_x = {val:.3e}"))

    # (e) input boundedness
    dz = traj.metrics["dz_max"]
    finite = bool(np.all(np.isfinite(dz)))
    rep.entries.append(ReportEntry(
        "input_bound", "state derivatives bounded", finite,
        detail=f"max {float(np.max(dz)):.4g}, final {float(dz[-1]):.4g}"
        if finite else "nonfinite derivative sample"))

    # (f) barrier margin positivity
    if sc.mode == "barrier":
        worst = float(np.min(traj.metrics["ineq_margin"]))
        rep.entries.append(ReportEntry(
            "barrier_margin", "relaxed feasibility margin positive",
            worst > 0.0, margin=worst,
            detail=f"min margin {worst:.3e}"))

    # (g) suboptimality gap vs the barrier bound
    if sc.mode == "barrier" and sc.reference_exact is not None:
        flow = sc.flow_model()
        xbar = traj.states[-1][flow.x_idx].mean(axis=0)
        gap = total_objective(sc.problems, xbar) - sc.reference_exact.objective
        bound = sum(p.ineq.p / p.ineq.c for p in sc.problems
                    if p.ineq is not None)
        # The bound holds at the relaxed optimum; assert it only once
        # the run is close, otherwise report the running gap.
        converged = have_ref and float(ex[-1]) <= 1e-3
        rep.entries.append(ReportEntry(
            "relaxation_gap", "objective gap within p/c bound",
            gap <= bound + 1e-6 if converged else None,
            margin=bound + 1e-6 - gap if converged else None,
            detail=f"gap {gap:.4e}, bound {bound:.4e}"
                   + ("" if converged else " (not yet converged)")))

    return rep
