"""Per-agent optimization data and the local Lagrangian machinery.

A LocalProblem bundles one agent's smooth cost, equality constraint, and
optional log-barrier-augmented inequality block. The module also houses
the Schur-complement block inverse of the local KKT Hessian

    [[H, A^T],
     [A, 0  ]]

whose explicit inverse blocks (P, Q, S^-1) every flow in the package
applies instead of factoring the full saddle matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainViolation, RankDeficient, SingularHessian

# Pivot tolerances for the PD and Schur factorizations.
_PD_PIVOT_REL = 1e-12
_SCHUR_COND = 1e-10


@dataclass(frozen=True)
class SmoothFunction:
    """Twice differentiable function with analytic derivative callbacks.

    Parameters
    ----------
    n : int
        Input dimension.
    value, grad, hess : callable
        x -> float, x -> (n,) array, x -> (n, n) symmetric array.
    theta : float
        Declared strong convexity modulus (0 for merely convex
        functions such as linear inequality constraints).
    """

    n: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    theta: float = 0.0


@dataclass(frozen=True)
class EqualityConstraint:
    """A x = b with A full row rank."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ValueError("row counts of A and b differ")
        if A.shape[0] > 0:
            sv = np.linalg.svd(A, compute_uv=False)
            if sv[-1] <= 1e-10 * sv[0]:
                raise RankDeficient("equality constraint matrix is not full row rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def r(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class SlackSchedule:
    """Polynomial finite-time slack decay s(t) = s0 (1 - t/T_s)^q.

    s and its derivative are continuous, sdot <= 0, and both vanish for
    t >= T_s. q >= 2 keeps sdot bounded and continuous at the junction.
    """

    s0: float = 0.0
    T_s: float = 1.0
    q: int = 2

    def __post_init__(self):
        if self.s0 < 0:
            raise ValueError("s0 must be nonnegative")
        if not self.T_s > 0:
            raise ValueError("T_s must be positive")
        if self.q < 2:
            raise ValueError("exponent q must be at least 2")

    def value(self, t: float) -> tuple[float, float]:
        """Return (s(t), sdot(t))."""
        if self.s0 == 0.0 or t >= self.T_s:
            return 0.0, 0.0
        u = 1.0 - t / self.T_s
        s = self.s0 * u ** self.q
        return s, -self.s0 * self.q / self.T_s * u ** (self.q - 1)


def slack_value(s: SlackSchedule, t: float) -> tuple[float, float]:
    """Functional form of SlackSchedule.value."""
    return s.value(t)


@dataclass(frozen=True)
class InequalityBlock:
    """Convex inequality constraints g^l(x) <= 0 handled by a log barrier.

    The barrier contributes (1/c) sum_l of terms in 1/(s(t) - g^l(x));
    strict relaxed feasibility g^l(x) < s(t) is required everywhere.
    """

    constraints: tuple[SmoothFunction, ...]
    c: float
    slack: SlackSchedule = field(default_factory=SlackSchedule)

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("barrier parameter c must be positive")
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def p(self) -> int:
        return len(self.constraints)


@dataclass(frozen=True)
class LocalProblem:
    """One agent's cost, equality constraint, and optional inequalities."""

    cost: SmoothFunction
    eq: EqualityConstraint
    ineq: InequalityBlock | None = None

    def __post_init__(self):
        if self.cost.n != self.eq.n:
            raise ValueError("cost and equality dimensions differ")
        if not self.cost.theta > 0:
            raise ValueError("cost must declare a positive convexity modulus")
        if self.ineq is not None:
            for g in self.ineq.constraints:
                if g.n != self.cost.n:
                    raise ValueError("inequality dimension differs from cost")

    @property
    def n(self) -> int:
        return self.cost.n

    @property
    def r(self) -> int:
        return self.eq.r

    @property
    def p(self) -> int:
        return 0 if self.ineq is None else self.ineq.p

    @property
    def dim(self) -> int:
        """Primal-dual dimension n + r."""
        return self.n + self.r


@dataclass
class AgentState:
    """Primal-dual pair z = (x, lambda) plus the auxiliary state y.

    Build initial states through :meth:`initial`, which enforces the
    free-initialization contract y(0) = grad of the local Lagrangian at
    z(0). Direct construction is reserved for trajectory snapshots.
    """

    x: np.ndarray
    lam: np.ndarray
    y: np.ndarray

    @classmethod
    def initial(cls, prob: LocalProblem, x0, lam0, t: float = 0.0) -> "AgentState":
        x0 = np.asarray(x0, dtype=float).copy()
        lam0 = np.asarray(lam0, dtype=float).copy()
        y0 = lagrangian_grad_parts(prob, x0, lam0, t)
        return cls(x0, lam0, y0)

    @property
    def y_x(self) -> np.ndarray:
        return self.y[: self.x.shape[0]]

    @property
    def y_lam(self) -> np.ndarray:
        return self.y[self.x.shape[0]:]


# ---------------------------------------------------------------------------
# Barrier terms


def barrier_terms_at(constraints, c: float, s: float, x: np.ndarray,
                     want_hess: bool = False):
    """Barrier contributions at explicit penalty c and slack level s.

    Returns a dict with keys:

    - ``margins``: array s - g^l(x), all strictly positive;
    - ``grad``: (1/c) sum_l grad g^l / margin_l;
    - ``hess`` (if requested): (1/c) sum_l of
      grad g^l grad g^l^T / margin_l^2 + hess g^l / margin_l;
    - ``ds_grad``: derivative of ``grad`` in s, equal to
      -(1/c) sum_l grad g^l / margin_l^2;
    - ``dc_grad``: derivative of ``grad`` in c, equal to
      -(1/c^2) sum_l grad g^l / margin_l.

    The sign of ``dc_grad`` follows from differentiating ``grad`` in c
    and is validated against finite differences in the test suite.
    Raises DomainViolation when any margin is nonpositive.
    """
    p = len(constraints)
    n = x.shape[0]
    grads = np.empty((p, n))
    margins = np.empty(p)
    for l, g in enumerate(constraints):
        margins[l] = s - g.value(x)
        grads[l] = g.grad(x)
    worst = float(margins.min()) if p else np.inf
    if worst <= 0.0:
        raise DomainViolation(
            f"relaxed feasibility violated: min margin {worst:.3e}",
            margin=worst)
    inv_m = 1.0 / margins
    gsum = grads.T @ inv_m
    out = {
        "margins": margins,
        "grad": gsum / c,
        "ds_grad": -(grads.T @ inv_m ** 2) / c,
        "dc_grad": -gsum / c ** 2,
    }
    if want_hess:
        hb = (grads.T * inv_m ** 2) @ grads
        for l, g in enumerate(constraints):
            hb = hb + g.hess(x) * inv_m[l]
        out["hess"] = hb / c
    return out


def barrier_terms(ineq: InequalityBlock, x: np.ndarray, t: float,
                  want_hess: bool = False):
    """Barrier contributions of an InequalityBlock at time t."""
    s, _ = ineq.slack.value(t)
    return barrier_terms_at(ineq.constraints, ineq.c, s, x, want_hess)


def relaxed_margin(prob: LocalProblem, x: np.ndarray, t: float) -> float:
    """Smallest s(t) - g^l(x) over the agent's inequalities (inf if none)."""
    if prob.ineq is None:
        return np.inf
    s, _ = prob.ineq.slack.value(t)
    return min(s - g.value(x) for g in prob.ineq.constraints)


# ---------------------------------------------------------------------------
# Local Lagrangian


def lagrangian_grad_parts(prob: LocalProblem, x: np.ndarray, lam: np.ndarray,
                          t: float = 0.0) -> np.ndarray:
    """Stacked gradient (grad_x L, grad_lambda L) at explicit (x, lambda).

    The x block is grad f + A^T lambda, plus the barrier gradient on the
    barrier path; the lambda block is A x - b.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    gx = prob.cost.grad(x) + prob.eq.A.T @ lam
    if prob.ineq is not None:
        gx = gx + barrier_terms(prob.ineq, x, t)["grad"]
    return np.concatenate([gx, prob.eq.A @ x - prob.eq.b])


def local_lagrangian_grad(prob: LocalProblem, state: AgentState,
                          t: float = 0.0) -> np.ndarray:
    """Gradient of the local Lagrangian at an AgentState."""
    return lagrangian_grad_parts(prob, state.x, state.lam, t)


def hessian_x_block(prob: LocalProblem, x: np.ndarray, t: float = 0.0) -> np.ndarray:
    """The (x, x) block of the local Lagrangian Hessian."""
    h = prob.cost.hess(np.asarray(x, dtype=float))
    if prob.ineq is not None:
        h = h + barrier_terms(prob.ineq, x, t, want_hess=True)["hess"]
    return h


def local_hessian(prob: LocalProblem, state: AgentState,
                  t: float = 0.0) -> np.ndarray:
    """Full KKT Hessian [[H, A^T], [A, 0]] at an AgentState."""
    n, r = prob.n, prob.r
    out = np.zeros((n + r, n + r))
    out[:n, :n] = hessian_x_block(prob, state.x, t)
    out[:n, n:] = prob.eq.A.T
    out[n:, :n] = prob.eq.A
    return out


# ---------------------------------------------------------------------------
# Block inverse


@dataclass(frozen=True)
class BlockInverse:
    """Explicit 2x2 inverse blocks of a KKT matrix [[H, A^T], [A, 0]].

    With S = A H^-1 A^T (the Schur complement), the blocks are
    Q = S^-1 A H^-1, P = H^-1 (I - A^T Q), and S_inv = S^-1; the
    assembled inverse is [[P, Q^T], [Q, -S_inv]].
    """

    P: np.ndarray
    Q: np.ndarray
    S_inv: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Multiply the assembled inverse against a stacked (n + r) vector."""
        n = self.P.shape[0]
        vx, vl = v[:n], v[n:]
        top = self.P @ vx + self.Q.T @ vl
        bot = self.Q @ vx - self.S_inv @ vl
        return np.concatenate([top, bot])

    def assembled(self) -> np.ndarray:
        n, r = self.P.shape[0], self.Q.shape[0]
        out = np.zeros((n + r, n + r))
        out[:n, :n] = self.P
        out[:n, n:] = self.Q.T
        out[n:, :n] = self.Q
        out[n:, n:] = -self.S_inv
        return out


def _spd_inverse_batch(M: np.ndarray, pivot_rel: float, err: type,
                       what: str, cond: float | None = None) -> np.ndarray:
    """Inverse of a batch of SPD matrices via Cholesky factors.

    Raises ``err`` when the factorization fails, a pivot falls below
    pivot_rel * trace / n, or (if ``cond`` is given) the squared pivot
    ratio drops below ``cond``.
    """
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise err(f"{what} factorization failed: {exc}") from exc
    d = np.einsum("...ii->...i", L)
    piv = d ** 2
    tr = np.einsum("...ii->...", M)
    nn = M.shape[-1]
    if np.any(piv.min(axis=-1) <= pivot_rel * tr / nn):
        raise err(f"{what} pivot below tolerance")
    if cond is not None and np.any(piv.min(axis=-1) <= cond * piv.max(axis=-1)):
        raise err(f"{what} conditioning below {cond:g}")
    Linv = np.linalg.inv(L)
    Minv = np.swapaxes(Linv, -1, -2) @ Linv
    return 0.5 * (Minv + np.swapaxes(Minv, -1, -2))


def block_inverse_batch(H: np.ndarray, A: np.ndarray):
    """Batched Schur-complement inverse blocks.

    Parameters
    ----------
    H : (B, n, n) array of symmetric positive definite matrices.
    A : (B, r, n) array of full-row-rank constraint matrices (r may be 0).

    Returns
    -------
    (P, Q, S_inv) with shapes (B, n, n), (B, r, n), (B, r, r).
    """
    B, n = H.shape[0], H.shape[-1]
    r = A.shape[1]
    Hinv = _spd_inverse_batch(H, _PD_PIVOT_REL, SingularHessian, "Hessian")
    if r == 0:
        return Hinv, np.zeros((B, 0, n)), np.zeros((B, 0, 0))
    HA = Hinv @ np.swapaxes(A, -1, -2)
    S = A @ HA
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    S_inv = _spd_inverse_batch(S, _PD_PIVOT_REL, RankDeficient,
                               "Schur complement", cond=_SCHUR_COND)
    Q = S_inv @ np.swapaxes(HA, -1, -2)
    P = Hinv - HA @ Q
    P = 0.5 * (P + np.swapaxes(P, -1, -2))
    return P, Q, S_inv


def block_inverse(H: np.ndarray, A: np.ndarray) -> BlockInverse:
    """Schur-complement inverse blocks of one KKT matrix.

    Never forms the full saddle matrix; both H and S go through SPD
    Cholesky factorizations.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    P, Q, S_inv = block_inverse_batch(H[None], A[None])
    return BlockInverse(P[0], Q[0], S_inv[0])


def local_block_inverse(prob: LocalProblem, state: AgentState,
                        t: float = 0.0) -> BlockInverse:
    """Block inverse of the local Lagrangian Hessian at a state."""
    return block_inverse(hessian_x_block(prob, state.x, t), prob.eq.A)


# ---------------------------------------------------------------------------
# Finite-difference validation helpers (never used for integration)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def finite_diff_jac(g: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                    h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    g0 = np.asarray(g(x), dtype=float)
    out = np.zeros((g0.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[:, k] = (np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2 * h)
    return out


def check_smooth_function(fn: SmoothFunction, points: np.ndarray,
                          rel_grad: float = 1e-5, rel_hess: float = 1e-4) -> list[str]:
    """Spot-check derivative consistency and the declared convexity modulus.

    Returns diagnostics; empty list means every sampled point passed.
    """
    bad = []
    for x in points:
        g = fn.grad(x)
        fd = finite_diff_grad(fn.value, x)
        scale = max(np.linalg.norm(g), 1.0)
        if np.linalg.norm(g - fd) > rel_grad * scale:
            bad.append(f"gradient mismatch at {x}")
        H = fn.hess(x)
        fdh = finite_diff_jac(fn.grad, x)
        hscale = max(np.linalg.norm(H), 1.0)
        if np.linalg.norm(H - 0.5 * (fdh + fdh.T)) > rel_hess * hscale:
            bad.append(f"hessian mismatch at {x}")
        if fn.theta > 0:
            lo = np.linalg.eigvalsh(0.5 * (H + H.T))[0]
            if lo < fn.theta - 1e-8:
                bad.append(f"eigenvalue floor {lo:.3e} below declared "
                           f"modulus {fn.theta:.3e} at {x}")
    return bad


# ---------------------------------------------------------------------------
# Cost catalog


def quadratic_cost(P: np.ndarray, q: np.ndarray | None = None,
                   r: float = 0.0) -> SmoothFunction:
    """f(x) = 0.5 x^T P x + q^T x + r with P symmetric positive definite."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    P = 0.5 * (P + P.T)
    n = P.shape[0]
    q = np.zeros(n) if q is None else np.asarray(q, dtype=float)
    theta = float(np.linalg.eigvalsh(P)[0])
    if theta <= 0:
        raise ValueError("quadratic cost matrix must be positive definite")
    return SmoothFunction(
        n=n,
        value=lambda x: float(0.5 * x @ P @ x + q @ x + r),
        grad=lambda x: P @ x + q,
        hess=lambda x: P.copy(),
        theta=theta,
    )


def quadratic_cosine_cost(index: int, w: np.ndarray) -> SmoothFunction:
    """f(x) = ||x||^2 - index * 1^T x + cos(w^T x / 2).

    The cosine perturbation keeps the function strongly convex with
    modulus 2 - ||w||^2 / 4, which must be positive.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    ones = np.ones(n)
    theta = 2.0 - float(w @ w) / 4.0
    if theta <= 0:
        raise ValueError("cosine perturbation too strong for convexity")
    eye2 = 2.0 * np.eye(n)
    wwT4 = np.outer(w, w) / 4.0

    def value(x):
        return float(x @ x - index * ones @ x + np.cos(w @ x / 2.0))

    def grad(x):
        return 2.0 * x - index * ones - 0.5 * np.sin(w @ x / 2.0) * w

    def hess(x):
        return eye2 - np.cos(w @ x / 2.0) * wwT4

    return SmoothFunction(n=n, value=value, grad=grad, hess=hess, theta=theta)


def linear_inequality(d: np.ndarray, e: float) -> SmoothFunction:
    """Affine constraint function g(x) = d^T x - e (convex, zero curvature)."""
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    zero = np.zeros((n, n))
    return SmoothFunction(
        n=n,
        value=lambda x: float(d @ x - e),
        grad=lambda x: d.copy(),
        hess=lambda x: zero.copy(),
        theta=0.0,
    )
