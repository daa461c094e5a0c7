"""Named benchmark scenarios on the six-agent cycle.

Both presets share the same equality data: a fixed 6x7 coefficient
matrix with one row per agent, costs f_i(x) = ||x||^2 - i 1^T x +
cos(w_i^T x / 2) with w_i drawn uniformly from (0,1)^7 under a recorded
seed, and zero initial states. The second preset adds one coupling
inequality per agent, handled through a log barrier with penalty 1000
and zero slack.

Default horizons differ per protocol family because their settling
behavior differs by orders of magnitude; each default leaves the slow
consensus mode enough time to pass well below the reporting tolerances.
"""

from __future__ import annotations

import numpy as np

from .dynamics import Scenario
from .errors import ConfigError
from .graph import Network, cycle_graph
from .integrator import IntegratorSettings
from .problem import (
    EqualityConstraint,
    InequalityBlock,
    LocalProblem,
    SlackSchedule,
    linear_inequality,
    quadratic_cosine_cost,
)
from .protocols import (
    FAMILIES,
    ProtocolSpec,
    agent_exponents,
    edge_exponents,
)

N_AGENTS = 6
N_DIM = 7

A_ROWS = (
    (0, 1, 2, 3, 3, -1, 2),
    (1, 0, 2, -1, 2, 1, 2),
    (0, 1, 2, 0, -1, -1, 0),
    (2, -1, 2, 1, -1, 2, 3),
    (1, 1, 3, 0, 2, 3, 0),
    (2, 3, 2, -1, 0, -1, -1),
)
B_VALS = (-1, 2, 2, 2, 2, 3)

DEFAULT_SEED = 42
DEFAULT_PENALTY = 1000.0

# Horizons chosen from the measured settling behavior of each family.
# The inequality-case LP and PTP runs need long horizons: the active
# barrier wall cuts the local curvature weight lambda2 to ~0.0046, so
# the late exponential tail decays at only ~0.09/s (LP) and ~0.023/s
# (PTP past its prescribed horizon).
T_END = {
    ("case1", "LP"): 30.0,
    ("case1", "FTP"): 15.0,
    ("case1", "FxTP"): 10.0,
    ("case1", "PTP"): 5.0,
    ("case2", "LP"): 80.0,
    ("case2", "FTP"): 15.0,
    ("case2", "FxTP"): 12.0,
    ("case2", "PTP"): 20.0,
}

_SAMPLES = 2000


def cost_weights(seed: int = DEFAULT_SEED) -> np.ndarray:
    """The recorded random draw for the cosine directions w_i."""
    return np.random.default_rng(seed).random((N_AGENTS, N_DIM))


def case_network() -> Network:
    return cycle_graph(N_AGENTS)


def case_problems(seed: int = DEFAULT_SEED, with_inequality: bool = False,
                  c: float = DEFAULT_PENALTY) -> list[LocalProblem]:
    """The six agent problems, optionally with the coupling inequalities."""
    w = cost_weights(seed)
    out = []
    for i in range(1, N_AGENTS + 1):
        cost = quadratic_cosine_cost(i, w[i - 1])
        eq = EqualityConstraint(
            A=np.array(A_ROWS[i - 1], dtype=float)[None, :],
            b=np.array([B_VALS[i - 1]], dtype=float))
        ineq = None
        if with_inequality:
            d = np.ones(N_DIM)
            d[i - 1] = 0.0
            e = 1.0 + (i - 1) / 10.0
            ineq = InequalityBlock(
                constraints=(linear_inequality(d, e),),
                c=c, slack=SlackSchedule(s0=0.0))
        out.append(LocalProblem(cost=cost, eq=eq, ineq=ineq))
    return out


def case_protocol(family: str, case: str) -> ProtocolSpec:
    """Per-family protocol parameters for the named case."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown protocol family {family!r}")
    net = case_network()
    common = dict(n_agents=N_AGENTS, k0=1.0)
    if family == "LP":
        return ProtocolSpec(family="LP", c0=20.0, **common)
    if family in ("FTP", "FxTP"):
        kw = dict(
            drive_gain=5.0,
            coupling_gain=5.0,
            alpha=agent_exponents(N_AGENTS, 0.1),
            alpha_edge=edge_exponents(net.edges, 0.1),
            eta=0,
        )
        if family == "FxTP":
            kw.update(
                beta=agent_exponents(N_AGENTS, 0.1, 1.0),
                beta_edge=edge_exponents(net.edges, 0.1, 1.0),
                eta=1,
            )
        return ProtocolSpec(family=family, **common, **kw)
    kappa = 10.0 if case == "case1" else 20.0
    return ProtocolSpec(family="PTP", pt_base=5.0, kappa=kappa,
                        T=1.0, T0=0.5, h=3.0, **common)


def default_settings(t_end: float, dt: float | None = None,
                     sample_dt: float | None = None) -> IntegratorSettings:
    return IntegratorSettings(
        dt=dt if dt is not None else 1e-3,
        sample_dt=sample_dt if sample_dt is not None else t_end / _SAMPLES,
    )


def _build(case: str, mode: str, family: str, seed: int,
           t_end: float | None, dt: float | None, sample_dt: float | None,
           c: float) -> Scenario:
    te = t_end if t_end is not None else T_END[(case, family)]
    sc = Scenario(
        name=f"{case}_{'equality' if case == 'case1' else 'inequality'}",
        network=case_network(),
        problems=case_problems(seed, with_inequality=(mode == "barrier"), c=c),
        protocol=case_protocol(family, case),
        mode=mode,
        t_end=te,
        settings=default_settings(te, dt, sample_dt),
        seed=seed,
    )
    return sc


def case1_equality(family: str = "LP", seed: int = DEFAULT_SEED,
                   t_end: float | None = None, dt: float | None = None,
                   sample_dt: float | None = None,
                   c: float = DEFAULT_PENALTY) -> Scenario:
    """Equality-constrained six-agent benchmark."""
    return _build("case1", "equality", family, seed, t_end, dt, sample_dt, c)


def case2_inequality(family: str = "LP", seed: int = DEFAULT_SEED,
                     t_end: float | None = None, dt: float | None = None,
                     sample_dt: float | None = None,
                     c: float = DEFAULT_PENALTY) -> Scenario:
    """The same benchmark with one coupling inequality per agent."""
    return _build("case2", "barrier", family, seed, t_end, dt, sample_dt, c)


PRESETS = {
    "case1_equality": case1_equality,
    "case2_inequality": case2_inequality,
}
