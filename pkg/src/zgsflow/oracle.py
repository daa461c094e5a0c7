"""Centralized reference solvers grounding every error metric.

Two solvers live here: a damped Newton iteration on the stacked
equality-constrained KKT system, and a log-barrier stationary solve
(slack fixed at zero) with warm-started continuation in the barrier
parameter for large c. Both reuse the block factorization from
:mod:`zgsflow.problem` rather than factoring the saddle matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleStart, NoConvergence
from .problem import (InequalityBlock, LocalProblem, SlackSchedule,
                      barrier_terms, block_inverse, lagrangian_grad_parts)

_KKT_TOL = 1e-12
_BARRIER_TOL = 1e-10
_MAX_ITER = 100
_ARMIJO_FACTOR = 0.5
_ARMIJO_SLOPE = 1e-4


@dataclass(frozen=True)
class ReferenceSolution:
    """Solution of a centralized reference solve.

    ``lam_parts`` splits the stacked dual into per-agent blocks in agent
    order. ``c`` and ``gap_bound`` are populated by the barrier solver
    only; ``gap_bound`` is the certified suboptimality p / c.
    """

    x: np.ndarray
    lam: np.ndarray
    lam_parts: tuple[np.ndarray, ...]
    objective: float
    kkt_residual: float
    iterations: int
    duals_unique: bool = True
    c: float | None = None
    gap_bound: float | None = None
    nu: np.ndarray | None = None

    def as_dict(self) -> dict:
        out = {
            "x": [float(v) for v in self.x],
            "lambda": [float(v) for v in self.lam],
            "objective": float(self.objective),
            "kkt_residual": float(self.kkt_residual),
            "iterations": int(self.iterations),
            "duals_unique": bool(self.duals_unique),
        }
        if self.c is not None:
            out["c"] = float(self.c)
            out["gap_bound"] = float(self.gap_bound)
        if self.nu is not None:
            out["nu"] = [float(v) for v in self.nu]
        return out


def _split_duals(problems, lam: np.ndarray) -> tuple[np.ndarray, ...]:
    parts = []
    k = 0
    for p in problems:
        parts.append(lam[k:k + p.r].copy())
        k += p.r
    return tuple(parts)


def _stacked(problems) -> tuple[np.ndarray, np.ndarray]:
    A = np.vstack([p.eq.A for p in problems])
    b = np.concatenate([p.eq.b for p in problems])
    return A, b


def total_objective(problems, x: np.ndarray) -> float:
    """Aggregate cost F(x) = sum_i f_i(x), barrier excluded."""
    return float(sum(p.cost.value(x) for p in problems))


def _kkt_residual(problems, x: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Stacked KKT residual assembled from the per-agent gradient path.

    Summing the per-agent local Lagrangian gradients keeps this
    definition bit-identical to what the dynamics see.
    """
    n = problems[0].n
    gx = np.zeros(n)
    feas = []
    k = 0
    for p in problems:
        gi = lagrangian_grad_parts(
            LocalProblem(p.cost, p.eq), x, lam[k:k + p.r])
        gx += gi[:n]
        feas.append(gi[n:])
        k += p.r
    return np.concatenate([gx] + feas)


def _sum_hessians(problems, x: np.ndarray) -> np.ndarray:
    return sum(p.cost.hess(x) for p in problems)


def solve_kkt(problems: list[LocalProblem]) -> ReferenceSolution:
    """Damped Newton on the stacked equality-constrained KKT system.

    Inequality blocks on the problems are ignored here; this is the
    plain equality-constrained reference z*. When the stacked
    constraint matrix is row-rank deficient the primal is found on the
    feasible affine subspace and a minimum-norm dual is returned with
    ``duals_unique`` cleared.
    """
    A, b = _stacked(problems)
    n = problems[0].n
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size and sv[-1] <= 1e-10 * sv[0]:
        return _solve_kkt_degenerate(problems, A, b)

    x = np.zeros(n)
    lam = np.zeros(A.shape[0])
    res = _kkt_residual(problems, x, lam)
    rnorm = np.linalg.norm(res)
    for it in range(1, _MAX_ITER + 1):
        if rnorm <= _KKT_TOL:
            return ReferenceSolution(
                x, lam, _split_duals(problems, lam),
                total_objective(problems, x), float(rnorm), it - 1)
        blocks = block_inverse(_sum_hessians(problems, x), A)
        step = -blocks.apply(res)
        alpha = 1.0
        while alpha > 1e-12:
            xn = x + alpha * step[:n]
            ln = lam + alpha * step[n:]
            rn = _kkt_residual(problems, xn, ln)
            if np.linalg.norm(rn) <= (1.0 - _ARMIJO_SLOPE * alpha) * rnorm:
                break
            alpha *= _ARMIJO_FACTOR
        else:
            raise NoConvergence("KKT line search stalled", float(rnorm))
        x, lam, res = xn, ln, rn
        rnorm = np.linalg.norm(res)
    if rnorm <= _KKT_TOL:
        return ReferenceSolution(
            x, lam, _split_duals(problems, lam),
            total_objective(problems, x), float(rnorm), _MAX_ITER)
    raise NoConvergence("KKT Newton did not converge", float(rnorm))


def _solve_kkt_degenerate(problems, A, b) -> ReferenceSolution:
    """Rank-deficient stacked constraints: primal on the feasible
    subspace, minimum-norm dual by least squares."""
    n = problems[0].n
    x_p, *_ = np.linalg.lstsq(A, b, rcond=None)
    u, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-10 * s[0]))
    Z = vt[rank:].T
    x = x_p.copy()
    for it in range(1, _MAX_ITER + 1):
        g = sum(p.cost.grad(x) for p in problems)
        gz = Z.T @ g
        if np.linalg.norm(gz) <= 1e-11 and np.linalg.norm(A @ x - b) <= 1e-10:
            break
        Hz = Z.T @ _sum_hessians(problems, x) @ Z
        x = x - Z @ np.linalg.solve(Hz, gz)
    g = sum(p.cost.grad(x) for p in problems)
    lam, *_ = np.linalg.lstsq(A.T, -g, rcond=None)
    res = np.linalg.norm(np.concatenate([g + A.T @ lam, A @ x - b]))
    return ReferenceSolution(
        x, lam, _split_duals(problems, lam), total_objective(problems, x),
        float(res), it, duals_unique=False)


# ---------------------------------------------------------------------------
# Barrier reference


def _zero_slack_block(p: LocalProblem, c: float) -> InequalityBlock | None:
    if p.ineq is None:
        return None
    return InequalityBlock(p.ineq.constraints, c, SlackSchedule(0.0, 1.0, 2))


def _barrier_residual(problems, blocks, x, lam) -> np.ndarray:
    n = problems[0].n
    gx = np.zeros(n)
    feas = []
    k = 0
    for p, blk in zip(problems, blocks):
        gx += p.cost.grad(x) + p.eq.A.T @ lam[k:k + p.r]
        if blk is not None:
            gx += barrier_terms(blk, x, 0.0)["grad"]
        feas.append(p.eq.A @ x - p.eq.b)
        k += p.r
    return np.concatenate([gx] + feas)


def _barrier_hessian(problems, blocks, x) -> np.ndarray:
    H = _sum_hessians(problems, x)
    for blk in blocks:
        if blk is not None:
            H = H + barrier_terms(blk, x, 0.0, want_hess=True)["hess"]
    return H


def _min_margin(problems, x) -> float:
    worst = np.inf
    for p in problems:
        if p.ineq is None:
            continue
        for g in p.ineq.constraints:
            worst = min(worst, -g.value(x))
    return worst


def _interior_start(problems, A, b) -> np.ndarray:
    """Strictly feasible equality solution via analytic centering.

    Starts from the least-norm equality solution; if boundary
    constraints are violated, centers a slack-relaxed barrier on the
    equality manifold and shrinks the artificial slack toward zero.
    """
    n = problems[0].n
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    if _min_margin(problems, x) > 0:
        return x
    u, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-10 * s[0])) if s.size else 0
    Z = vt[rank:].T
    gmax = -_min_margin(problems, x)
    slack = gmax + max(0.5, 0.5 * gmax)
    cons = [g for p in problems if p.ineq is not None
            for g in p.ineq.constraints]
    for _ in range(200):
        # Newton-center sum of -log(slack - g(x)) over the equality manifold.
        for _ in range(50):
            grads = np.array([g.grad(x) for g in cons])
            margins = np.array([slack - g.value(x) for g in cons])
            gc = grads.T @ (1.0 / margins)
            Hc = (grads.T * margins ** -2) @ grads
            for gfun, m in zip(cons, margins):
                Hc += gfun.hess(x) / m
            gz = Z.T @ gc
            if np.linalg.norm(gz) <= 1e-8:
                break
            du = np.linalg.solve(Z.T @ Hc @ Z + 1e-12 * np.eye(Z.shape[1]), -gz)
            step = Z @ du
            alpha = 1.0
            while alpha > 1e-12:
                xn = x + alpha * step
                if min(slack - g.value(xn) for g in cons) > 0:
                    break
                alpha *= 0.5
            x = x + alpha * step
            # A comfortable true margin is all a warm start needs; full
            # centering diverges when the interior is unbounded.
            if _min_margin(problems, x) >= 0.25 * slack:
                break
        if _min_margin(problems, x) > 0:
            return x
        new_slack = 0.5 * slack
        if min(new_slack - g.value(x) for g in cons) <= 0:
            new_slack = 0.9 * slack
        if new_slack >= slack - 1e-14:
            break
        slack = new_slack
    raise InfeasibleStart("no strictly feasible interior point found")


def _solve_barrier_at(problems, c, x, lam) -> tuple[np.ndarray, np.ndarray, float, int]:
    A, _ = _stacked(problems)
    n = problems[0].n
    blocks = [_zero_slack_block(p, c) for p in problems]
    res = _barrier_residual(problems, blocks, x, lam)
    rnorm = np.linalg.norm(res)
    for it in range(1, 4 * _MAX_ITER + 1):
        if rnorm <= _BARRIER_TOL:
            return x, lam, float(rnorm), it - 1
        bi = block_inverse(_barrier_hessian(problems, blocks, x), A)
        step = -bi.apply(res)
        alpha = 1.0
        accepted = False
        while alpha > 1e-14:
            xn = x + alpha * step[:n]
            ln = lam + alpha * step[n:]
            if _min_margin(problems, xn) <= 0:
                alpha *= _ARMIJO_FACTOR
                continue
            rn = _barrier_residual(problems, blocks, xn, ln)
            if np.linalg.norm(rn) <= (1.0 - _ARMIJO_SLOPE * alpha) * rnorm:
                accepted = True
                break
            alpha *= _ARMIJO_FACTOR
        if not accepted:
            raise NoConvergence("barrier line search stalled", float(rnorm))
        x, lam, res = xn, ln, rn
        rnorm = np.linalg.norm(res)
    raise NoConvergence("barrier Newton did not converge", float(rnorm))


def solve_barrier_reference(problems: list[LocalProblem], c: float) -> ReferenceSolution:
    """Stationary point of the zero-slack barrier problem at parameter c.

    Continuation in c (one decade per stage, warm-started) keeps the
    Newton iteration inside its quadratic regime when the target c is
    large and the barrier Hessian is badly conditioned.
    """
    p_total = sum(p.p for p in problems)
    if p_total == 0:
        base = solve_kkt(problems)
        return ReferenceSolution(
            base.x, base.lam, base.lam_parts, base.objective,
            base.kkt_residual, base.iterations, base.duals_unique,
            c=float(c), gap_bound=0.0)
    A, b = _stacked(problems)
    x = _interior_start(problems, A, b)
    lam = np.zeros(A.shape[0])
    stages = [float(c)]
    while stages[0] > 2000.0:
        stages.insert(0, stages[0] / 10.0)
    total_iter = 0
    for ck in stages:
        x, lam, rnorm, its = _solve_barrier_at(problems, ck, x, lam)
        total_iter += its
    return ReferenceSolution(
        x, lam, _split_duals(problems, lam), total_objective(problems, x),
        float(rnorm), total_iter, c=float(c), gap_bound=p_total / float(c))


def solve_active_kkt(problems: list[LocalProblem]) -> ReferenceSolution:
    """True constrained optimum, inequalities included.

    A moderate-c barrier solve identifies the active set; the KKT
    system with those constraints pinned is then solved by damped
    Newton to machine accuracy, which avoids the conditioning floor a
    direct huge-c barrier hits. The returned ``nu`` holds one
    multiplier per inequality constraint in declaration order (zero on
    the inactive ones); complementarity is verified before returning.
    """
    p_total = sum(p.p for p in problems)
    if p_total == 0:
        return solve_kkt(problems)
    A, b = _stacked(problems)
    n = problems[0].n
    x = _interior_start(problems, A, b)
    lam = np.zeros(A.shape[0])
    total_iter = 0
    c_id = 1e4
    for ck in (1e2, 1e3, c_id):
        x, lam, _, its = _solve_barrier_at(problems, ck, x, lam)
        total_iter += its
    cons = [g for p in problems if p.ineq is not None
            for g in p.ineq.constraints]
    margins = np.array([-g.value(x) for g in cons])
    active = list(np.flatnonzero(margins < c_id ** -0.5))
    r_eq = A.shape[0]

    def newton(act, x, lam, nu_act):
        def residual(xc, lc, nc):
            top = sum(p.cost.grad(xc) for p in problems) + A.T @ lc
            for j, w in zip(act, nc):
                top = top + w * cons[j].grad(xc)
            rows = [A @ xc - b]
            rows.append(np.array([cons[j].value(xc) for j in act]))
            return np.concatenate([top] + rows)

        res = residual(x, lam, nu_act)
        rnorm = np.linalg.norm(res)
        for it in range(1, _MAX_ITER + 1):
            if rnorm <= _KKT_TOL:
                return x, lam, nu_act, float(rnorm), it - 1
            H = _sum_hessians(problems, x)
            for j, w in zip(act, nu_act):
                H = H + w * cons[j].hess(x)
            G = np.array([cons[j].grad(x) for j in act]) \
                if act else np.zeros((0, n))
            m = n + r_eq + len(act)
            K = np.zeros((m, m))
            K[:n, :n] = H
            K[:n, n:n + r_eq] = A.T
            K[n:n + r_eq, :n] = A
            if act:
                K[:n, n + r_eq:] = G.T
                K[n + r_eq:, :n] = G
            step = np.linalg.solve(K, -res)
            alpha = 1.0
            while alpha > 1e-12:
                xn = x + alpha * step[:n]
                ln = lam + alpha * step[n:n + r_eq]
                nn = nu_act + alpha * step[n + r_eq:]
                rn = residual(xn, ln, nn)
                if np.linalg.norm(rn) <= (1.0 - _ARMIJO_SLOPE * alpha) * rnorm:
                    break
                alpha *= _ARMIJO_FACTOR
            else:
                raise NoConvergence("active-set line search stalled",
                                    float(rnorm))
            x, lam, nu_act, res = xn, ln, nn, rn
            rnorm = np.linalg.norm(res)
        raise NoConvergence("active-set Newton did not converge",
                            float(rnorm))

    for _ in range(p_total + 1):
        nu_act = np.array([1.0 / (c_id * max(margins[j], 1e-12))
                           for j in active])
        x, lam, nu_act, rnorm, its = newton(active, x, lam, nu_act)
        total_iter += its
        if len(nu_act) and float(nu_act.min()) < -1e-9:
            active.pop(int(np.argmin(nu_act)))
            continue
        margins = np.array([-g.value(x) for g in cons])
        inact = [j for j in range(p_total) if j not in active]
        if inact and min(margins[j] for j in inact) <= 1e-12:
            active.append(min(inact, key=lambda j: margins[j]))
            continue
        break
    else:
        raise NoConvergence("active set did not stabilize", float(rnorm))
    nu = np.zeros(p_total)
    nu[active] = np.maximum(nu_act, 0.0)
    return ReferenceSolution(
        x, lam, _split_duals(problems, lam), total_objective(problems, x),
        float(rnorm), total_iter, nu=nu)
