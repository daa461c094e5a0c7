"""Centralized continuous-time flows for the aggregate problem.

Two flows are provided, both on the stacked primal-dual state
z = (x, lam) paired with an auxiliary costate y:

- the equality flow, which damps y with an odd drive and moves z
  through the inverse KKT operator so that grad L(z(t)) - y(t) stays
  constant (zero under the canonical initialization y(0) = grad L(z(0)));
- the barrier flow, which additionally carries a growing penalty c(t)
  and a shrinking slack s(t), with compensation terms so that z tracks
  the interior central path while y decays.

The penalty grows exponentially, c(t) = c0 * exp(r_c t), and is
capped at c_max; the cap time is exposed as an integration breakpoint
because c'(t) is discontinuous there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError
from .integrator import FlowModel
from .problem import (
    BlockInverse,
    EqualityConstraint,
    LocalProblem,
    SlackSchedule,
    SmoothFunction,
    barrier_terms_at,
    block_inverse,
)
from .protocols import ProtocolSpec, drive, max_gain


def aggregate_cost(problems) -> SmoothFunction:
    """Sum of the agents' cost functions, on the shared variable."""
    costs = [p.cost for p in problems]
    n = costs[0].n
    for c in costs:
        if c.n != n:
            raise ConfigError("cost dimensions differ across agents")

    def value(x: np.ndarray) -> float:
        return float(sum(c.value(x) for c in costs))

    def grad(x: np.ndarray) -> np.ndarray:
        out = np.zeros(n)
        for c in costs:
            out += c.grad(x)
        return out

    def hess(x: np.ndarray) -> np.ndarray:
        out = np.zeros((n, n))
        for c in costs:
            out += c.hess(x)
        return out

    theta = float(sum(c.theta for c in costs))
    return SmoothFunction(n=n, value=value, grad=grad, hess=hess, theta=theta)


def stacked_equality(problems) -> EqualityConstraint:
    """Row-stacked equality constraint across agents."""
    rows = [p.eq.A for p in problems if p.eq.r > 0]
    rhs = [p.eq.b for p in problems if p.eq.r > 0]
    if not rows:
        n = problems[0].n
        return EqualityConstraint(A=np.zeros((0, n)), b=np.zeros(0))
    return EqualityConstraint(A=np.vstack(rows), b=np.concatenate(rhs))


@dataclass(frozen=True)
class CentralProblem:
    """Aggregate problem with a penalty growth and slack decay schedule."""

    cost: SmoothFunction
    eq: EqualityConstraint
    constraints: tuple = ()
    c0: float = 1.0
    r_c: float = 0.0
    c_max: float = 1e12
    slack: SlackSchedule = field(default_factory=SlackSchedule)

    def __post_init__(self) -> None:
        if self.cost.n != self.eq.n:
            raise ConfigError("cost and equality dimensions differ")
        if self.c0 <= 0.0 or self.c_max < self.c0:
            raise ConfigError("need 0 < c0 <= c_max")
        if self.constraints and self.r_c < 0.0:
            raise ConfigError("penalty growth rate must be nonnegative")

    @classmethod
    def from_local(cls, problems, c0: float = 1.0, r_c: float = 0.0,
                   c_max: float = 1e12,
                   slack: SlackSchedule | None = None) -> "CentralProblem":
        cons = []
        for p in problems:
            if p.ineq is not None:
                cons.extend(p.ineq.constraints)
                if slack is None:
                    slack = p.ineq.slack
        return cls(cost=aggregate_cost(problems), eq=stacked_equality(problems),
                   constraints=tuple(cons), c0=c0, r_c=r_c, c_max=c_max,
                   slack=slack if slack is not None else SlackSchedule())

    @property
    def n(self) -> int:
        return self.cost.n

    @property
    def r(self) -> int:
        return self.eq.r

    @property
    def p(self) -> int:
        return len(self.constraints)

    @property
    def dim(self) -> int:
        return self.n + self.r

    def penalty(self, t: float) -> tuple[float, float]:
        """Penalty value and its time derivative at t."""
        if self.r_c == 0.0:
            return self.c0, 0.0
        c = self.c0 * math.exp(self.r_c * t)
        if c >= self.c_max:
            return self.c_max, 0.0
        return c, self.r_c * c

    @property
    def cap_time(self) -> float:
        """Time at which the penalty reaches its cap."""
        if self.r_c == 0.0 or self.c0 >= self.c_max:
            return 0.0
        return math.log(self.c_max / self.c0) / self.r_c

    def lagrangian_grad(self, z: np.ndarray, t: float) -> np.ndarray:
        """Stacked gradient of the (relaxed) Lagrangian at z."""
        x, lam = z[:self.n], z[self.n:]
        gx = self.cost.grad(x)
        if self.r > 0:
            gx = gx + self.eq.A.T @ lam
        if self.p > 0:
            c, _ = self.penalty(t)
            s, _ = self.slack.value(t)
            gx = gx + barrier_terms_at(self.constraints, c, s, x)["grad"]
        glam = self.eq.A @ x - self.eq.b if self.r > 0 else np.zeros(0)
        return np.concatenate([gx, glam])

    def hessian_blocks(self, x: np.ndarray, t: float,
                       terms: dict | None = None) -> BlockInverse:
        h = self.cost.hess(x)
        if terms is not None:
            h = h + terms["hess"]
        return block_inverse(h, self.eq.A)


def newton_cta_rhs(cp: CentralProblem, spec: ProtocolSpec, z: np.ndarray,
                   y: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Equality-flow derivative (dz, dy) at (z, y, t)."""
    phi = drive(spec, 1, y, t)
    blocks = cp.hessian_blocks(z[:cp.n], t)
    return -blocks.apply(phi), -phi


def barrier_cta_rhs(cp: CentralProblem, spec: ProtocolSpec, z: np.ndarray,
                    y: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Barrier-flow derivative with penalty and slack compensation."""
    if cp.p == 0:
        return newton_cta_rhs(cp, spec, z, y, t)
    x = z[:cp.n]
    c, cdot = cp.penalty(t)
    s, sdot = cp.slack.value(t)
    terms = barrier_terms_at(cp.constraints, c, s, x, want_hess=True)
    phi = drive(spec, 1, y, t)
    force = phi.copy()
    force[:cp.n] += terms["dc_grad"] * cdot + terms["ds_grad"] * sdot
    blocks = cp.hessian_blocks(x, t, terms)
    return -blocks.apply(force), -phi


def suboptimality_bound(cp: CentralProblem, t: float) -> float:
    """Duality-style bound p / c(t) on the relaxed-optimum objective gap."""
    if cp.p == 0:
        return 0.0
    c, _ = cp.penalty(t)
    return cp.p / c


class CentralFlow(FlowModel):
    """Integrator adapter for the centralized flows.

    State layout: u = [z, y] with z = (x, lam). The reference
    attribute, when set, enables the x_err / lam_err metric columns.
    """

    def __init__(self, cp: CentralProblem, spec: ProtocolSpec,
                 z0: np.ndarray, reference=None) -> None:
        z0 = np.asarray(z0, dtype=float)
        if z0.shape != (cp.dim,):
            raise ConfigError(
                f"initial state must have dimension {cp.dim}, got {z0.shape}")
        self.cp = cp
        self.spec = spec
        self.z0 = z0
        self.reference = reference
        self.y0 = cp.lagrangian_grad(z0, 0.0)

    @property
    def dim(self) -> int:
        return 2 * self.cp.dim

    def initial_state(self) -> np.ndarray:
        return np.concatenate([self.z0, self.y0])

    def rhs(self, t: float, u: np.ndarray) -> np.ndarray:
        d = self.cp.dim
        z, y = u[:d], u[d:]
        if self.cp.p > 0:
            dz, dy = barrier_cta_rhs(self.cp, self.spec, z, y, t)
        else:
            dz, dy = newton_cta_rhs(self.cp, self.spec, z, y, t)
        return np.concatenate([dz, dy])

    def y_slice(self):
        return slice(self.cp.dim, 2 * self.cp.dim)

    def dt_limit(self, t: float) -> float:
        gain = max_gain(self.spec, t)
        return 0.5 / gain if gain > 0.0 else np.inf

    def breakpoints(self):
        pts = []
        if self.spec.family == "PTP":
            sc = self.spec.drive_scaling
            pts.append((sc.T - sc.guard, sc.T))
        if self.cp.p > 0:
            if self.cp.r_c > 0.0 and self.cp.cap_time > 0.0:
                pts.append((self.cp.cap_time, None))
            if self.cp.slack.s0 > 0.0:
                pts.append((self.cp.slack.T_s, None))
        return tuple(pts)

    def margin(self, t: float, u: np.ndarray) -> float:
        if self.cp.p == 0:
            return np.inf
        c, _ = self.cp.penalty(t)
        s, _ = self.cp.slack.value(t)
        x = u[:self.cp.n]
        vals = [s - g.value(x) for g in self.cp.constraints]
        return float(min(vals))

    def settle_allowed(self, t: float) -> bool:
        if self.cp.p == 0:
            return True
        if self.cp.r_c > 0.0 and t < self.cp.cap_time:
            return False
        return not (self.cp.slack.s0 > 0.0 and t < self.cp.slack.T_s)

    def metrics(self, t: float, u: np.ndarray) -> dict:
        d = self.cp.dim
        z, y = u[:d], u[d:]
        g = self.cp.lagrangian_grad(z, t)
        out = {
            "grad_norm": float(np.linalg.norm(g)),
            "grad_res": float(np.linalg.norm(g - y)),
            "y_norm": float(np.max(np.abs(y))) if d else 0.0,
            "bound": suboptimality_bound(self.cp, t),
        }
        if self.reference is not None:
            out["x_err"] = float(
                np.linalg.norm(z[:self.cp.n] - self.reference.x))
            out["lam_err"] = float(
                np.linalg.norm(z[self.cp.n:] - self.reference.lam))
        else:
            out["x_err"] = float("nan")
            out["lam_err"] = float("nan")
        if self.cp.p > 0:
            out["margin_min"] = self.margin(t, u)
        return out
