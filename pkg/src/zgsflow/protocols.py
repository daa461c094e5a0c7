"""Drive functions, consensus couplings, and their signed-power primitives.

Four protocol families are supported, identified by the canonical strings
"LP", "FTP", "FxTP", "PTP":

- LP: linear drive c0*y and coupling c0*(x_i - x_j); exponential rates.
- FTP: signed-power drive and coupling with exponents below one; finite-time
  settling that depends on the initial state.
- FxTP: sum of a sub-linear and a super-linear signed power; fixed-time
  settling with a uniform bound.
- PTP: linear terms with a time-varying gain d + mudot/mu that diverges as
  the prescribed horizon is approached; prescribed-time settling.

All couplings are antisymmetric and strictly passive, which is what the
consensus analysis requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("LP", "FTP", "FxTP", "PTP")


def sgn_pow(v, alpha):
    """Componentwise signed power sign(v_k) * |v_k| ** alpha_k.

    Parameters
    ----------
    v : array_like
    alpha : float or array_like
        Exponent(s), all >= 0. alpha = 1 reproduces v exactly; alpha = 0
        gives the hard sign with sgn_pow(0) = 0.

    Returns
    -------
    ndarray
    """
    v = np.asarray(v, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("signed-power exponents must be >= 0")
    return np.sign(v) * np.abs(v) ** alpha


@dataclass(frozen=True)
class ScalingFunction:
    """Time scaling mu(t; T) = (T / (T - t))^h on [0, T), flat 1 afterwards.

    The ratio mudot/mu equals h / (T - t) before the horizon and 0 after;
    it is computed directly from that closed form, never as a quotient of
    the two values. Near the horizon the ratio is clamped at h / eps with
    eps = guard_frac * T, matching the integrator's guard band.
    """

    T: float
    h: float
    guard_frac: float = 1e-9

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("scaling horizon T must be positive")
        if not self.h > 1:
            raise ValueError("scaling exponent h must exceed 1")

    @property
    def guard(self) -> float:
        return self.guard_frac * self.T

    def mu_eval(self, t: float) -> tuple[float, float]:
        """Return (mu, mudot) at time t."""
        if t >= self.T:
            return 1.0, 0.0
        tau = max(self.T - t, self.guard)
        mu = (self.T / tau) ** self.h
        return mu, self.h * mu / tau

    def ratio(self, t: float) -> float:
        """mudot / mu, clamped at h / guard, zero past the horizon."""
        if t >= self.T:
            return 0.0
        return self.h / max(self.T - t, self.guard)


def agent_exponents(n_agents: int, scale: float, offset: float = 0.0) -> np.ndarray:
    """Heterogeneous per-agent exponents offset + scale * i, i = 1..N."""
    return offset + scale * np.arange(1, n_agents + 1, dtype=float)


def edge_exponents(edges, scale: float, offset: float = 0.0) -> dict[tuple[int, int], float]:
    """Per-edge exponents offset + scale * min(i, j) for 1-based endpoints."""
    out = {}
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i > j:
            i, j = j, i
        out[(i, j)] = offset + scale * min(i, j)
    return out


@dataclass(frozen=True)
class ProtocolSpec:
    """Declarative description of one protocol family instance.

    Fields not used by the chosen family may be left at their defaults;
    ``validate`` enforces family consistency. Exponent containers are
    indexed by 1-based agent numbers (arrays, entry i-1 for agent i) and
    canonical 1-based edge pairs (i < j).
    """

    family: str
    n_agents: int
    c0: float = 20.0
    drive_gain: float = 5.0
    coupling_gain: float = 1.0
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    alpha_edge: dict[tuple[int, int], float] = field(default_factory=dict)
    beta_edge: dict[tuple[int, int], float] = field(default_factory=dict)
    eta: int = 0
    pt_base: float = 5.0
    kappa: float = 10.0
    T: float = 1.0
    T0: float = 0.5
    h: float = 3.0
    k0: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown protocol family {self.family!r}")
        if self.alpha is not None:
            object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        if self.beta is not None:
            object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    def validate(self) -> list[str]:
        """Family-consistency diagnostics; empty list means valid."""
        bad = []
        f = self.family
        if not self.k0 > 0:
            bad.append("k0 must be positive")
        if f == "LP":
            if not self.c0 > 0:
                bad.append("LP gain c0 must be positive")
        if f in ("FTP", "FxTP"):
            if self.alpha is None or len(self.alpha) != self.n_agents:
                bad.append("per-agent alpha exponents required")
            elif not np.all((self.alpha >= 0) & (self.alpha < 1)):
                bad.append("drive exponents alpha_i must lie in [0, 1)")
            if len(self.alpha_edge) == 0:
                bad.append("per-edge alpha exponents required")
            elif not all(0 <= a <= 1 for a in self.alpha_edge.values()):
                bad.append("coupling exponents alpha_ij must lie in [0, 1]")
            if not self.drive_gain > 0:
                bad.append("drive gain must be positive")
        if f == "FTP" and self.eta != 0:
            bad.append("FTP requires eta = 0")
        if f == "FxTP":
            if self.eta != 1:
                bad.append("FxTP requires eta = 1")
            if self.beta is None or len(self.beta) != self.n_agents:
                bad.append("per-agent beta exponents required")
            elif not np.all(self.beta > 1):
                bad.append("drive exponents beta_i must exceed 1")
            if len(self.beta_edge) == 0:
                bad.append("per-edge beta exponents required")
            elif not all(b > 1 for b in self.beta_edge.values()):
                bad.append("coupling exponents beta_ij must exceed 1")
        if f == "PTP":
            if not self.kappa > 0:
                bad.append("kappa must be positive")
            if not (self.T >= self.T0 > 0):
                bad.append("prescribed horizons must satisfy T >= T0 > 0")
            if not self.h > 1:
                bad.append("scaling exponent h must exceed 1")
        return bad

    @property
    def drive_scaling(self) -> ScalingFunction | None:
        if self.family != "PTP":
            return None
        return ScalingFunction(self.T0, self.h)

    @property
    def coupling_scaling(self) -> ScalingFunction | None:
        if self.family != "PTP":
            return None
        return ScalingFunction(self.T, self.h)

    def _agent_gain(self, i: int) -> float:
        g = np.asarray(self.drive_gain, dtype=float)
        return float(g if g.ndim == 0 else g[i - 1])

    def edge_pair(self, i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)


def drive(spec: ProtocolSpec, i: int, y: np.ndarray, t: float) -> np.ndarray:
    """Drive function g_i(y_i, t) for 1-based agent i."""
    y = np.asarray(y, dtype=float)
    f = spec.family
    if f == "LP":
        return spec.c0 * y
    if f == "FTP":
        return spec._agent_gain(i) * sgn_pow(y, spec.alpha[i - 1])
    if f == "FxTP":
        return spec._agent_gain(i) * (
            sgn_pow(y, spec.alpha[i - 1]) + sgn_pow(y, spec.beta[i - 1]))
    gain = spec.pt_base + spec.drive_scaling.ratio(t)
    return gain * y


def coupling(spec: ProtocolSpec, edge: tuple[int, int], x_i: np.ndarray,
             x_j: np.ndarray, t: float, weight: float = 1.0) -> np.ndarray:
    """Consensus coupling chi_ij(x_i, x_j) for the 1-based edge (i, j).

    Antisymmetric in its arguments: coupling(spec, (j, i), x_j, x_i) is
    the exact negation. The edge weight a_ij multiplies the whole term.
    """
    d = np.asarray(x_i, dtype=float) - np.asarray(x_j, dtype=float)
    f = spec.family
    if f == "LP":
        return weight * spec.c0 * d
    if f in ("FTP", "FxTP"):
        key = spec.edge_pair(*edge)
        a = spec.alpha_edge[key]
        out = sgn_pow(d, a)
        if f == "FxTP":
            out = out + sgn_pow(d, spec.beta_edge[key])
        return weight * spec.coupling_gain * out
    gain = spec.pt_base + spec.kappa * spec.coupling_scaling.ratio(t)
    return weight * gain * d


def drive_batch(spec: ProtocolSpec, Y: np.ndarray, t: float) -> np.ndarray:
    """Stacked drive over all agents; Y has shape (N, dim).

    Row i-1 equals drive(spec, i, Y[i-1], t) exactly.
    """
    Y = np.asarray(Y, dtype=float)
    f = spec.family
    if f == "LP":
        return spec.c0 * Y
    if f in ("FTP", "FxTP"):
        g = np.asarray(spec.drive_gain, dtype=float)
        g = g[:, None] if g.ndim == 1 else g
        out = sgn_pow(Y, spec.alpha[:, None])
        if f == "FxTP":
            out = out + sgn_pow(Y, spec.beta[:, None])
        return g * out
    return (spec.pt_base + spec.drive_scaling.ratio(t)) * Y


def edge_exponent_arrays(spec: ProtocolSpec, edges) -> tuple[np.ndarray, np.ndarray]:
    """Exponent arrays aligned with an edge list of 1-based (i, j, w) tuples."""
    m = len(edges)
    al = np.zeros(m)
    be = np.ones(m)
    if spec.family in ("FTP", "FxTP"):
        for k, e in enumerate(edges):
            key = spec.edge_pair(int(e[0]), int(e[1]))
            al[k] = spec.alpha_edge[key]
            if spec.family == "FxTP":
                be[k] = spec.beta_edge[key]
    return al, be


def coupling_batch(spec: ProtocolSpec, diffs: np.ndarray, weights: np.ndarray,
                   alpha_e: np.ndarray, beta_e: np.ndarray, t: float) -> np.ndarray:
    """Stacked couplings over all edges; diffs has shape (m, n).

    Row k equals coupling(spec, edge_k, x_i, x_j, t, weight_k) with
    diffs[k] = x_i - x_j and the exponent arrays from
    ``edge_exponent_arrays``.
    """
    f = spec.family
    w = weights[:, None]
    if f == "LP":
        return spec.c0 * w * diffs
    if f in ("FTP", "FxTP"):
        out = sgn_pow(diffs, alpha_e[:, None])
        if f == "FxTP":
            out = out + sgn_pow(diffs, beta_e[:, None])
        return spec.coupling_gain * w * out
    gain = spec.pt_base + spec.kappa * spec.coupling_scaling.ratio(t)
    return gain * w * diffs


def max_gain(spec: ProtocolSpec, t: float) -> float:
    """Largest linear gain active at time t; drives the PT step limiter.

    For signed-power families the amplitude-dependent slope is unbounded
    at the origin and is handled by the integrator's sign refinement
    instead, so only the linear part is reported here.
    """
    if spec.family == "LP":
        return spec.c0
    if spec.family == "PTP":
        g1 = spec.pt_base + spec.drive_scaling.ratio(t)
        g2 = spec.pt_base + spec.kappa * spec.coupling_scaling.ratio(t)
        return max(g1, g2)
    return float(np.max(np.asarray(spec.drive_gain, dtype=float)))
