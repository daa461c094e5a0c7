"""Simulation library for constrained consensus optimization flows.

Multi-agent continuous-time dynamics that steer networked agents to the
optimum of a sum of strongly convex costs under per-agent equality
constraints and optional log-barrier inequalities, with exponential,
finite-time, fixed-time, and prescribed-time protocol families, plus
centralized reference flows, reference solvers, and an invariant-check
harness. See the command-line entry point ``zgsflow`` for end-to-end
runs.
"""

from .analysis import (
    Lambda2Result,
    MetricSet,
    Report,
    ReportEntry,
    attach_spectral_metric,
    check_theorem_suite,
    compute_metrics,
    exp_fit,
    lambda2_of_M,
    rayleigh_floor,
    spectral_details,
)
from .centralized import (
    CentralFlow,
    CentralProblem,
    barrier_cta_rhs,
    newton_cta_rhs,
    suboptimality_bound,
)
from .config import (
    RunConfig,
    build_scenario,
    config_from_dict,
    load_config,
    validate_config,
)
from .dynamics import (
    Scenario,
    SwarmFlow,
    SwarmState,
    agent_rhs,
    ezgs_barrier_rhs,
    ezgs_rhs,
    reduced_flow_rhs,
)
from .errors import (
    ConfigError,
    DomainViolation,
    InfeasibleStart,
    MaxStepsExceeded,
    NoConvergence,
    RankDeficient,
    SingularHessian,
    SpectrumMismatch,
    StepUnderflow,
    ZgsflowError,
)
from .graph import (
    Network,
    adjacency,
    algebraic_connectivity,
    component_count,
    cycle_graph,
    incidence,
    is_connected,
    laplacian,
)
from .integrator import (
    FlowModel,
    IntegratorSettings,
    Trajectory,
    integrate,
    settling_time,
)
from .oracle import (
    ReferenceSolution,
    solve_active_kkt,
    solve_barrier_reference,
    solve_kkt,
    total_objective,
)
from .presets import PRESETS, case1_equality, case2_inequality
from .problem import (
    AgentState,
    BlockInverse,
    EqualityConstraint,
    InequalityBlock,
    LocalProblem,
    SlackSchedule,
    SmoothFunction,
    barrier_terms,
    block_inverse,
    block_inverse_batch,
    linear_inequality,
    local_block_inverse,
    local_hessian,
    local_lagrangian_grad,
    quadratic_cosine_cost,
    quadratic_cost,
    slack_value,
)
from .protocols import (
    FAMILIES,
    ProtocolSpec,
    ScalingFunction,
    coupling,
    drive,
    sgn_pow,
)

__version__ = "0.1.0"
