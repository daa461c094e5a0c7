"""Deterministic ODE integration with discontinuity-aware step control.

The workhorse is a fixed-base-step classical RK4 scheme augmented with
three event mechanisms that the signed-power flows need:

- drive pacing and absorption: components of the drive block y evolve
  under odd, componentwise-monotone vector fields whose derivatives
  blow up near their finite-time zeros, so each step is capped to
  change no active y component by more than a fraction of its
  magnitude. A paced component collapses geometrically and is absorbed
  to exactly zero once below a threshold; odd drives then keep it there
  bit-exactly. Unpaced fixed steps would both park |y| at a spurious
  stage-alternating plateau and leak secular error into the primal
  states through the steep approach region. A sign-straddle halving
  descent remains as a backstop, clamping at the step floor. The same
  relative pacing is applied to shrinking barrier margins, whose log
  gradients steepen as fast as the margins collapse.
- terminal completion: couplings with signed powers below one kink at
  every consensus-difference zero, and once the whole drive block is
  absorbed they pinch the differences onto the agreement manifold in
  finite time through ever denser sign crossings, while conserving
  exactly the aggregates that pin down the limit point. Resolving
  those crossings costs unbounded work, so at the first drive-free
  state the model is asked to complete the trajectory to the exact
  limit of its own terminal flow (a small solve on the conserved
  quantities); the state change is charged to the error budget and the
  run terminates as "settled", extended as a constant. Before that
  point, steps that cross a coupling kink are simply taken: the slip
  they leave in the conserved aggregates is part of the local error
  the budget tracks, and the completion does not depend on it.
- domain halving: steps whose stage evaluations or endpoint leave the
  relaxed barrier region are halved down to a separate floor, then
  StepUnderflow is raised.

Step-size recovery after a drive or domain halving is deliberately
slow (doubling only after a few consecutive clean steps) so steep
regions are entered and left on a graded mesh.

A running local-error budget accompanies the trajectory: step-doubling
Richardson estimates are sampled on a geometric-then-periodic step
schedule (1, 2, 4, ... then every err_interval steps) so fast initial
transients are captured; each gap contributes the larger of its two
endpoint estimates times the gap length, plus the exact magnitudes of
absorption clamps and horizon guard jumps. Each estimate takes the
worse of the state difference and the drift of the model's conserved
quantities, whose sensitivity to state error is much larger than one
near a barrier wall. Sample metrics are evaluated
at accepted step endpoints and interpolated linearly, so an
interpolated residual never exceeds the bracketing endpoint values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainViolation, MaxStepsExceeded, StepUnderflow

_TIME_EPS = 1e-13


@dataclass(frozen=True)
class IntegratorSettings:
    """Step-control parameters.

    ``dt`` is the base grid step for rk4_fixed and the initial step for
    rk45_adaptive. ``sample_dt`` defaults to ``dt``. The remaining
    fields tune the event machinery and rarely need changing.
    """

    method: str = "rk4_fixed"
    dt: float = 1e-3
    abs_tol: float = 1e-9
    rel_tol: float = 1e-7
    sample_dt: float | None = None
    pt_guard_frac: float = 1e-9
    max_steps: int = 2_000_000
    dt_floor_sign: float = 1e-11
    dt_floor_domain: float = 1e-12
    freeze_tol: float = 1e-8
    recover_after: int = 3
    err_interval: int = 64
    y_pace: float = 0.5
    y_absorb_tol: float = 1e-9
    margin_pace: float = 0.025

    def __post_init__(self):
        if self.method not in ("rk4_fixed", "rk45_adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sample_dt is not None and not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")

    @property
    def sample_step(self) -> float:
        return self.dt if self.sample_dt is None else self.sample_dt


class FlowModel:
    """Adapter interface between a scenario and the integrator.

    Subclasses override ``rhs`` and whichever hooks apply. The defaults
    describe a smooth flow with no drive block, no consensus structure,
    no barrier, and no breakpoints.
    """

    dim: int = 0

    def initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def rhs(self, t: float, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def y_slice(self) -> slice | None:
        """Index range of the drive block eligible for sign refinement."""
        return None

    def edge_diff(self, u: np.ndarray) -> np.ndarray | None:
        """Consensus differences (linear in u), or None."""
        return None

    def dt_limit(self, t: float) -> float:
        """Hard per-step cap, e.g. 0.5 / gain for time-varying gains."""
        return np.inf

    def domain_pace(self, t: float, u: np.ndarray,
                    du: np.ndarray) -> float:
        """Smallest margin-to-shrink-rate ratio; inf when none shrink."""
        return np.inf

    def breakpoints(self) -> tuple[tuple[float, float | None], ...]:
        """(time, jump_to) pairs; jump_to skips a guard band."""
        return ()

    def margin(self, t: float, u: np.ndarray) -> float:
        """Smallest relaxed-feasibility margin; inf when no barrier."""
        return np.inf

    def invariant(self, t: float, u: np.ndarray) -> np.ndarray | None:
        """Quantities the exact flow conserves, for budget sampling."""
        return None

    def settle_allowed(self, t: float) -> bool:
        """Whether the flow is autonomous from time t on (freeze legal)."""
        return True

    def settle_state(self, t: float, u: np.ndarray) \
            -> tuple[np.ndarray, float] | None:
        """Exact limit of a terminal finite-time phase, with a charge.

        Called at the first state whose drive block is identically zero
        (kinked couplings only). Returns (limit state, error charge) or
        None when no completion is available.
        """
        return None

    def metrics(self, t: float, u: np.ndarray) -> dict[str, float] | None:
        return None


@dataclass
class Trajectory:
    """Time-indexed record of one integration.

    ``states`` holds one flattened state per sample row; ``metrics``
    maps column names to per-sample arrays (including ``err_est``, the
    cumulative local-error budget). ``termination`` is "horizon" or
    "settled"; integration failures raise instead.
    """

    times: np.ndarray
    states: np.ndarray
    metrics: dict[str, np.ndarray] = field(default_factory=dict)
    termination: str = "horizon"
    steps: int = 0
    settle_time: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def metric(self, name: str) -> np.ndarray:
        return self.metrics[name]

    def at_time(self, t: float) -> int:
        """Index of the sample closest to t."""
        return int(np.argmin(np.abs(self.times - t)))


def _stage_signs_disagree(stacks: np.ndarray) -> np.ndarray:
    """Per-component True when stage values carry both strict signs."""
    pos = (stacks > 0).any(axis=0)
    neg = (stacks < 0).any(axis=0)
    return pos & neg


class _SampleWriter:
    """Accumulates grid samples by interpolating endpoint records."""

    def __init__(self, grid: np.ndarray, dim: int):
        self.grid = grid
        self.states = np.empty((len(grid), dim))
        self.metric_rows: list[dict | None] = [None] * len(grid)
        self.cursor = 0

    def start(self, t0, u0, m0):
        self.prev = (t0, u0.copy(), m0)
        self._emit_upto(t0, t0, u0, m0)

    def push(self, t1, u1, m1):
        t0, u0, m0 = self.prev
        self._emit_upto(t1, t0, u0, m0, t1_state=(u1, m1))
        self.prev = (t1, u1.copy(), m1)

    def _emit_upto(self, t1, t0, u0, m0, t1_state=None):
        while self.cursor < len(self.grid) and self.grid[self.cursor] <= t1 + _TIME_EPS:
            tk = self.grid[self.cursor]
            if t1_state is None or t1 <= t0 + _TIME_EPS:
                self.states[self.cursor] = u0
                self.metric_rows[self.cursor] = m0
            else:
                u1, m1 = t1_state
                th = (tk - t0) / (t1 - t0)
                th = min(max(th, 0.0), 1.0)
                self.states[self.cursor] = u0 + th * (u1 - u0)
                if m0 is None:
                    self.metric_rows[self.cursor] = None
                else:
                    self.metric_rows[self.cursor] = {
                        k: m0[k] + th * (m1[k] - m0[k]) for k in m0}
            self.cursor += 1

    def fill_constant(self, u, m):
        while self.cursor < len(self.grid):
            self.states[self.cursor] = u
            self.metric_rows[self.cursor] = m
            self.cursor += 1

    def finish(self, termination, steps, settle_time, meta) -> Trajectory:
        metrics: dict[str, np.ndarray] = {}
        rows = self.metric_rows
        if rows and rows[0]:
            for k in rows[0]:
                metrics[k] = np.array([r[k] for r in rows])
        return Trajectory(self.grid.copy(), self.states, metrics,
                          termination, steps, settle_time, meta)


def _resolve_model(obj) -> FlowModel:
    if isinstance(obj, FlowModel):
        return obj
    maker = getattr(obj, "flow_model", None)
    if maker is None:
        raise TypeError("integrate needs a FlowModel or an object with "
                        "a flow_model() method")
    return maker()


def integrate(scenario_or_model, settings: IntegratorSettings,
              t_end: float) -> Trajectory:
    """Integrate a flow over [0, t_end] and return its Trajectory.

    The first argument is either a FlowModel or any object exposing
    ``flow_model()`` (a Scenario). t_end is snapped to the nearest
    multiple of the sample step so every sample lands on the grid.
    """
    model = _resolve_model(scenario_or_model)
    if settings.method == "rk45_adaptive":
        return _integrate_rk45(model, settings, t_end)
    return _integrate_rk4(model, settings, t_end)


def _grid(settings: IntegratorSettings, t_end: float) -> np.ndarray:
    sd = settings.sample_step
    K = max(1, int(round(t_end / sd)))
    return np.arange(K + 1) * sd


def _sorted_breakpoints(model, t_end):
    bps = [(float(tb), jb) for tb, jb in model.breakpoints()
           if _TIME_EPS < tb < t_end - _TIME_EPS]
    bps.sort(key=lambda p: p[0])
    return bps


def _integrate_rk4(model: FlowModel, settings: IntegratorSettings,
                   t_end: float) -> Trajectory:
    grid = _grid(settings, t_end)
    t_final = float(grid[-1])
    ys = model.y_slice()
    use_edges = model.edge_diff(model.initial_state()) is not None
    kinked = use_edges and getattr(model, "edge_kinked", False)
    bps = _sorted_breakpoints(model, t_final)

    u = model.initial_state().astype(float).copy()
    t = 0.0
    dt_base = settings.dt
    dt_cur = dt_base
    clean = 0
    steps = 0
    err_accum = 0.0
    err_last = None
    err_last_step = 0
    err_next = 1
    snap_failed = False
    meta = {"clamp_count": 0, "sign_halvings": 0, "domain_halvings": 0,
            "guard_jumps": 0, "err_samples": 0}

    def endpoint_metrics(tc, uc):
        m = model.metrics(tc, uc)
        if m is None:
            m = {}
        m = dict(m)
        m["err_est"] = err_accum
        return m

    writer = _SampleWriter(grid, u.size)
    writer.start(t, u, endpoint_metrics(t, u))
    bp_idx = 0

    if kinked and ys is not None and not np.any(u[ys]) and \
            model.settle_allowed(t):
        done = model.settle_state(t, u)
        if done is not None:
            u, charge = done
            err_accum += charge
            writer.fill_constant(u, endpoint_metrics(t, u))
            return writer.finish("settled", 0, t, meta)
        snap_failed = True

    def rk4_stages(tc, uc, h, k1=None):
        if k1 is None:
            k1 = model.rhs(tc, uc)
        k2 = model.rhs(tc + 0.5 * h, uc + 0.5 * h * k1)
        k3 = model.rhs(tc + 0.5 * h, uc + 0.5 * h * k2)
        k4 = model.rhs(tc + h, uc + h * k3)
        return k1, k2, k3, k4, uc + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    while t < t_final - _TIME_EPS:
        steps += 1
        if steps > settings.max_steps:
            raise MaxStepsExceeded(f"step budget {settings.max_steps} "
                                   f"exhausted at t = {t:.6g}")
        while bp_idx < len(bps) and bps[bp_idx][0] <= t + _TIME_EPS:
            jump_to = bps[bp_idx][1]
            bp_idx += 1
            if jump_to is not None and jump_to > t:
                gap = jump_to - t
                err_accum += gap * float(np.max(np.abs(model.rhs(jump_to, u))))
                meta["guard_jumps"] += 1
                t = jump_to
                writer.push(t, u, endpoint_metrics(t, u))
        if t >= t_final - _TIME_EPS:
            break

        k1 = model.rhs(t, u)
        dt = min(dt_cur, model.dt_limit(t))
        if ys is not None:
            y0 = u[ys]
            dy0 = k1[ys]
            act = (np.abs(y0) > settings.y_absorb_tol) & (dy0 != 0.0)
            if act.any():
                cap = settings.y_pace * float(
                    np.min(np.abs(y0[act]) / np.abs(dy0[act])))
                if cap < dt:
                    dt = cap
        pace = model.domain_pace(t, u, k1)
        if np.isfinite(pace):
            cap = settings.margin_pace * pace
            if cap < dt:
                dt = max(cap, 4.0 * settings.dt_floor_domain)
        hit = None
        if bp_idx < len(bps) and t + dt >= bps[bp_idx][0] - _TIME_EPS:
            hit = bps[bp_idx][0]
            dt = hit - t
        elif t + dt >= t_final - _TIME_EPS:
            hit = t_final
            dt = t_final - t

        # attempt the step
        try:
            k1, k2, k3, k4, unew = rk4_stages(t, u, dt, k1)
            domain_bad = not np.all(np.isfinite(unew)) or \
                model.margin(t + dt, unew) <= 0.0
        except DomainViolation:
            domain_bad = True
        if domain_bad:
            if dt <= settings.dt_floor_domain:
                raise StepUnderflow(
                    f"barrier boundary collision at t = {t:.6g}")
            dt_cur = 0.5 * dt
            clean = 0
            meta["domain_halvings"] += 1
            continue

        clamp_comps = None
        trigger = None
        if ys is not None:
            y0 = u[ys]
            active = np.abs(y0) > settings.y_absorb_tol
            if active.any():
                stacks = np.stack([k1[ys], k2[ys], k3[ys], k4[ys]])
                disagree = _stage_signs_disagree(stacks)
                flip = np.sign(y0) * np.sign(unew[ys]) < 0
                comps = active & (disagree | flip)
                if comps.any():
                    if dt > settings.dt_floor_sign:
                        trigger = "sign"
                    else:
                        clamp_comps = comps
        if trigger is not None:
            dt_cur = 0.5 * dt
            clean = 0
            meta["sign_halvings"] += 1
            continue

        # accept
        if clamp_comps is not None:
            ysl = unew[ys]
            err_accum += float(np.sum(np.abs(ysl[clamp_comps])))
            ysl[clamp_comps] = 0.0
            meta["clamp_count"] += int(clamp_comps.sum())
            clean = 0
        else:
            clean += 1
            if clean >= settings.recover_after and dt_cur < dt_base:
                dt_cur = min(2.0 * dt_cur, dt_base)
                clean = 0
            if steps >= err_next and hit is None:
                try:
                    *_, uh = rk4_stages(t, u, 0.5 * dt, k1)
                    *_, uhh = rk4_stages(t + 0.5 * dt, uh, 0.5 * dt)
                    e1 = float(np.max(np.abs(unew - uhh))) * (16.0 / 15.0)
                    inv1 = model.invariant(t + dt, unew)
                    if inv1 is not None:
                        inv2 = model.invariant(t + dt, uhh)
                        e1 = max(e1, float(np.linalg.norm(inv1 - inv2))
                                 * (16.0 / 15.0))
                    gap = steps - err_last_step
                    worst = e1 if err_last is None else max(err_last, e1)
                    err_accum += worst * gap
                    err_last = e1
                    err_last_step = steps
                    meta["err_samples"] += 1
                    if 2 * steps < settings.err_interval:
                        err_next = 2 * steps
                    else:
                        err_next = steps + settings.err_interval
                except DomainViolation:
                    err_next = steps + 1
        if ys is not None:
            ysl = unew[ys]
            tiny = (ysl != 0.0) & (np.abs(ysl) <= settings.y_absorb_tol)
            if tiny.any():
                err_accum += float(np.sum(np.abs(ysl[tiny])))
                ysl[tiny] = 0.0
                meta["clamp_count"] += int(tiny.sum())

        t_next = hit if hit is not None else t + dt
        if kinked and not snap_failed and ys is not None and \
                not np.any(unew[ys]) and model.settle_allowed(t_next):
            done = model.settle_state(t_next, unew)
            if done is None:
                snap_failed = True
            else:
                unew, charge = done
                err_accum += charge
                mets = endpoint_metrics(t_next, unew)
                writer.push(t_next, unew, mets)
                writer.fill_constant(unew, mets)
                return writer.finish("settled", steps, t_next, meta)
        t = t_next
        u = unew
        writer.push(t, u, endpoint_metrics(t, u))

        if model.settle_allowed(t) and ys is not None and not np.any(u[ys]):
            d = model.edge_diff(u) if use_edges else None
            if d is None or float(np.max(np.abs(d))) <= settings.freeze_tol:
                writer.fill_constant(u, endpoint_metrics(t, u))
                return writer.finish("settled", steps, t, meta)

    return writer.finish("horizon", steps, None, meta)


# ---------------------------------------------------------------------------
# Embedded Fehlberg 4(5) for smooth flows

_RK45_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8, 3680 / 513, -845 / 4104),
    (-8 / 27, 2, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RK45_C = (0, 1 / 4, 3 / 8, 12 / 13, 1, 1 / 2)
_RK45_B5 = (16 / 135, 0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_RK45_B4 = (25 / 216, 0, 1408 / 2565, 2197 / 4104, -1 / 5, 0)


def _integrate_rk45(model: FlowModel, settings: IntegratorSettings,
                    t_end: float) -> Trajectory:
    """Error-controlled embedded pair; no sign machinery.

    Suitable for smooth flows only. Signed-power drives should use
    rk4_fixed, whose refinement handles the finite-time zero crossings
    that would make an error controller thrash.
    """
    grid = _grid(settings, t_end)
    t_final = float(grid[-1])
    bps = _sorted_breakpoints(model, t_final)
    u = model.initial_state().astype(float).copy()
    t = 0.0
    dt = settings.dt
    steps = 0
    err_accum = 0.0
    meta = {"rejects": 0, "domain_halvings": 0, "guard_jumps": 0}

    def endpoint_metrics(tc, uc):
        m = model.metrics(tc, uc) or {}
        m = dict(m)
        m["err_est"] = err_accum
        return m

    writer = _SampleWriter(grid, u.size)
    writer.start(t, u, endpoint_metrics(t, u))
    bp_idx = 0

    while t < t_final - _TIME_EPS:
        steps += 1
        if steps > settings.max_steps:
            raise MaxStepsExceeded(f"step budget exhausted at t = {t:.6g}")
        while bp_idx < len(bps) and bps[bp_idx][0] <= t + _TIME_EPS:
            jump_to = bps[bp_idx][1]
            bp_idx += 1
            if jump_to is not None and jump_to > t:
                err_accum += (jump_to - t) * float(
                    np.max(np.abs(model.rhs(jump_to, u))))
                meta["guard_jumps"] += 1
                t = jump_to
                writer.push(t, u, endpoint_metrics(t, u))
        if t >= t_final - _TIME_EPS:
            break

        h = min(dt, model.dt_limit(t))
        hit = None
        if bp_idx < len(bps) and t + h >= bps[bp_idx][0] - _TIME_EPS:
            hit = bps[bp_idx][0]
            h = hit - t
        elif t + h >= t_final - _TIME_EPS:
            hit = t_final
            h = t_final - t

        try:
            ks = []
            for i in range(6):
                ui = u.copy()
                for j, a in enumerate(_RK45_A[i]):
                    ui += h * a * ks[j]
                ks.append(model.rhs(t + _RK45_C[i] * h, ui))
            u5 = u + h * sum(b * k for b, k in zip(_RK45_B5, ks))
            u4 = u + h * sum(b * k for b, k in zip(_RK45_B4, ks))
            bad = not np.all(np.isfinite(u5)) or model.margin(t + h, u5) <= 0.0
        except DomainViolation:
            bad = True
        if bad:
            if h <= settings.dt_floor_domain:
                raise StepUnderflow(f"barrier boundary collision at t = {t:.6g}")
            dt = 0.5 * h
            meta["domain_halvings"] += 1
            continue

        scale = settings.abs_tol + settings.rel_tol * np.maximum(
            np.abs(u), np.abs(u5))
        err = float(np.max(np.abs(u5 - u4) / scale))
        if err > 1.0 and h > settings.dt_floor_domain:
            dt = h * max(0.2, 0.9 * err ** -0.2)
            meta["rejects"] += 1
            continue
        err_accum += float(np.max(np.abs(u5 - u4)))
        t = hit if hit is not None else t + h
        u = u5
        writer.push(t, u, endpoint_metrics(t, u))
        dt = h * min(5.0, max(0.2, 0.9 * err ** -0.2 if err > 0 else 5.0))

    return writer.finish("horizon", steps, None, meta)


def settling_time(traj: Trajectory, metric: str, tol: float,
                  hold: float) -> float | None:
    """First sample time after which a metric stays at or below tol.

    The metric must remain below tol on [tau, tau + hold]; the hold
    window has to fit inside the trajectory for a detection to count.
    Returns None when no such time exists.
    """
    times = traj.times
    vals = traj.metrics[metric]
    below = vals <= tol
    n = len(times)
    i = 0
    while i < n:
        if not below[i]:
            i += 1
            continue
        j = i
        while j < n and below[j]:
            j += 1
        span_end = times[j - 1]
        if span_end - times[i] >= hold - _TIME_EPS:
            return float(times[i])
        i = j
    return None
