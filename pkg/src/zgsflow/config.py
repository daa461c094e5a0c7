"""Run configuration: YAML schema, overrides, and scenario building.

A config file is a single YAML document. Either ``preset`` or
``scenario`` must be present:

    preset: case1_equality        # or case2_inequality
    protocol: FTP                 # LP | FTP | FxTP | PTP
    seed: 42
    t_end: 15.0                   # optional horizon override
    penalty_c: 1000.0             # barrier penalty (case2 / barrier mode)
    integrator:
      method: rk4_fixed           # or rk45_adaptive
      dt: 0.001
      sample_dt: 0.0075
    run:
      out: runs/demo

A custom scenario replaces the preset:

    scenario:
      name: two_agent
      mode: equality              # or barrier
      graph: {cycle: 2}           # or {nodes: N, edges: [[i, j, w], ...]}
      agents:
        - cost: {type: quadratic, P: [[2.0]], q: [0.0]}
          A: [[1.0]]
          b: [1.0]
      protocol: {family: LP, c0: 20.0}
      t_end: 5.0

Agent entries accept cost type ``quadratic`` (P, q, r0) or
``quadratic_cosine`` (index, w), equality rows A and b, and optional
``inequalities`` ([{d, e}, ...]) with a ``barrier`` section
(c, s0, T_s, q). Protocol entries take the family plus its scalar
parameters; signed-power exponents come either from ``alpha_scale`` /
``beta_scale`` rules or explicit ``alpha`` / ``beta`` lists and
``alpha_edge`` / ``beta_edge`` triples [i, j, value].

Command-line flags override file values; the resolved configuration is
serialized next to the outputs and reproduces the run exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import Scenario
from .errors import ConfigError
from .graph import Network, cycle_graph
from .integrator import IntegratorSettings
from .presets import DEFAULT_PENALTY, DEFAULT_SEED, PRESETS
from .problem import (
    EqualityConstraint,
    InequalityBlock,
    LocalProblem,
    SlackSchedule,
    check_smooth_function,
    linear_inequality,
    quadratic_cosine_cost,
    quadratic_cost,
)
from .protocols import (
    FAMILIES,
    ProtocolSpec,
    agent_exponents,
    edge_exponents,
)

_INTEGRATOR_FIELDS = {f.name for f in dataclasses.fields(IntegratorSettings)}


@dataclass
class RunConfig:
    """Resolved run request, after file and command-line merging."""

    preset: str | None = None
    scenario: dict | None = None
    protocol: str = "LP"
    seed: int = DEFAULT_SEED
    t_end: float | None = None
    dt: float | None = None
    penalty_c: float = DEFAULT_PENALTY
    integrator: dict = field(default_factory=dict)
    out: str = "runs/out"
    emit_reference: bool = True

    def __post_init__(self) -> None:
        if (self.preset is None) == (self.scenario is None):
            raise ConfigError("exactly one of preset/scenario is required")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {self.preset!r}; choose from "
                f"{sorted(PRESETS)}")
        if self.protocol not in FAMILIES:
            raise ConfigError(
                f"unknown protocol family {self.protocol!r}; choose from "
                f"{list(FAMILIES)}")
        bad = set(self.integrator) - _INTEGRATOR_FIELDS
        if bad:
            raise ConfigError(
                f"unknown integrator settings: {sorted(bad)}")


def load_config(path: str | Path) -> dict:
    """Parse a YAML config file with positioned error diagnostics."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" \
            if mark else ""
        raise ConfigError(f"config parse error{where}: {e.problem}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config parse error: {e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def config_from_dict(data: dict, **overrides) -> RunConfig:
    """Build a RunConfig from a parsed file plus keyword overrides.

    Override values equal to None are ignored, matching unset
    command-line flags.
    """
    known = {"preset", "scenario", "protocol", "seed", "t_end", "dt",
             "penalty_c", "integrator", "run"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    run_sec = data.get("run", {}) or {}
    if not isinstance(run_sec, dict):
        raise ConfigError("run section must be a mapping")
    kw = {
        "preset": data.get("preset"),
        "scenario": data.get("scenario"),
        "protocol": data.get("protocol", "LP"),
        "seed": data.get("seed", DEFAULT_SEED),
        "t_end": data.get("t_end"),
        "dt": data.get("dt"),
        "penalty_c": data.get("penalty_c", DEFAULT_PENALTY),
        "integrator": data.get("integrator", {}) or {},
        "out": run_sec.get("out", "runs/out"),
        "emit_reference": bool(run_sec.get("emit_reference", True)),
    }
    for key, val in overrides.items():
        if val is not None:
            kw[key] = val
    if kw["preset"] is None and kw["scenario"] is None:
        raise ConfigError("config needs a preset or a scenario section")
    return RunConfig(**kw)


# ---------------------------------------------------------------------------
# Custom scenario parsing


def _parse_graph(sec) -> Network:
    if not isinstance(sec, dict):
        raise ConfigError("graph section must be a mapping")
    if "cycle" in sec:
        return cycle_graph(int(sec["cycle"]), float(sec.get("weight", 1.0)))
    try:
        nodes = int(sec["nodes"])
        edges = [(int(i), int(j), float(w)) for i, j, w in sec["edges"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"graph section needs nodes and [i, j, w] edge "
                          f"triples ({e})") from None
    return Network(node_count=nodes, edges=tuple(edges))


def _parse_cost(sec, agent: int):
    if not isinstance(sec, dict) or "type" not in sec:
        raise ConfigError(f"agent {agent}: cost needs a type")
    kind = sec["type"]
    if kind == "quadratic":
        return quadratic_cost(np.asarray(sec["P"], dtype=float),
                              np.asarray(sec["q"], dtype=float)
                              if "q" in sec else None,
                              float(sec.get("r0", 0.0)))
    if kind == "quadratic_cosine":
        return quadratic_cosine_cost(int(sec["index"]),
                                     np.asarray(sec["w"], dtype=float))
    raise ConfigError(f"agent {agent}: unknown cost type {kind!r}")


def _parse_agent(sec, agent: int, penalty_c: float) -> LocalProblem:
    if not isinstance(sec, dict):
        raise ConfigError(f"agent {agent}: entry must be a mapping")
    cost = _parse_cost(sec.get("cost"), agent)
    n = cost.n
    if "A" in sec:
        eq = EqualityConstraint(A=np.asarray(sec["A"], dtype=float),
                                b=np.asarray(sec["b"], dtype=float))
    else:
        eq = EqualityConstraint(A=np.zeros((0, n)), b=np.zeros(0))
    ineq = None
    if sec.get("inequalities"):
        cons = tuple(
            linear_inequality(np.asarray(c["d"], dtype=float), float(c["e"]))
            for c in sec["inequalities"])
        bsec = sec.get("barrier", {}) or {}
        slack = SlackSchedule(s0=float(bsec.get("s0", 0.0)),
                              T_s=float(bsec.get("T_s", 1.0)),
                              q=int(bsec.get("q", 2)))
        ineq = InequalityBlock(constraints=cons,
                               c=float(bsec.get("c", penalty_c)),
                               slack=slack)
    return LocalProblem(cost=cost, eq=eq, ineq=ineq)


def _parse_protocol(sec, net: Network) -> ProtocolSpec:
    if not isinstance(sec, dict) or "family" not in sec:
        raise ConfigError("protocol section needs a family")
    fam = sec["family"]
    if fam not in FAMILIES:
        raise ConfigError(f"unknown protocol family {fam!r}")
    n = net.node_count
    kw = {}
    for key in ("c0", "drive_gain", "coupling_gain", "pt_base", "kappa",
                "T", "T0", "h", "k0"):
        if key in sec:
            kw[key] = float(sec[key])
    if fam in ("FTP", "FxTP"):
        kw["eta"] = 0 if fam == "FTP" else 1
        if "alpha" in sec:
            kw["alpha"] = np.asarray(sec["alpha"], dtype=float)
        else:
            kw["alpha"] = agent_exponents(n, float(sec.get("alpha_scale", 0.1)))
        if "alpha_edge" in sec:
            kw["alpha_edge"] = {(int(i), int(j)): float(v)
                                for i, j, v in sec["alpha_edge"]}
        else:
            kw["alpha_edge"] = edge_exponents(
                net.edges, float(sec.get("alpha_scale", 0.1)))
        if fam == "FxTP":
            if "beta" in sec:
                kw["beta"] = np.asarray(sec["beta"], dtype=float)
            else:
                kw["beta"] = agent_exponents(
                    n, float(sec.get("beta_scale", 0.1)), 1.0)
            if "beta_edge" in sec:
                kw["beta_edge"] = {(int(i), int(j)): float(v)
                                   for i, j, v in sec["beta_edge"]}
            else:
                kw["beta_edge"] = edge_exponents(
                    net.edges, float(sec.get("beta_scale", 0.1)), 1.0)
    return ProtocolSpec(family=fam, n_agents=n, **kw)


def _build_custom(rc: RunConfig) -> Scenario:
    sec = rc.scenario
    if not isinstance(sec, dict):
        raise ConfigError("scenario section must be a mapping")
    net = _parse_graph(sec.get("graph"))
    agents_sec = sec.get("agents")
    if not isinstance(agents_sec, list) or not agents_sec:
        raise ConfigError("scenario needs a nonempty agents list")
    problems = [_parse_agent(a, i + 1, rc.penalty_c)
                for i, a in enumerate(agents_sec)]
    protocol = _parse_protocol(sec.get("protocol"), net)
    mode = sec.get("mode", "equality")
    t_end = rc.t_end if rc.t_end is not None else float(sec.get("t_end", 10.0))
    x0 = np.asarray(sec["x0"], dtype=float) if "x0" in sec else None
    settings = _settings_for(rc, t_end)
    return Scenario(
        name=str(sec.get("name", "custom")),
        network=net, problems=problems, protocol=protocol, mode=mode,
        t_end=t_end, settings=settings, x0=x0, seed=rc.seed)


def _settings_for(rc: RunConfig, t_end: float) -> IntegratorSettings:
    kw = dict(rc.integrator)
    if rc.dt is not None:
        kw["dt"] = rc.dt
    kw.setdefault("dt", 1e-3)
    kw.setdefault("sample_dt", t_end / 2000)
    return IntegratorSettings(**kw)


def build_scenario(rc: RunConfig) -> Scenario:
    """Materialize the scenario a RunConfig describes."""
    if rc.scenario is not None:
        return _build_custom(rc)
    build = PRESETS[rc.preset]
    sc = build(family=rc.protocol, seed=rc.seed, t_end=rc.t_end,
               dt=rc.dt, c=rc.penalty_c)
    if rc.integrator:
        kw = {f.name: getattr(sc.settings, f.name)
              for f in dataclasses.fields(IntegratorSettings)}
        kw.update(rc.integrator)
        if rc.dt is not None:
            kw["dt"] = rc.dt
        sc.settings = IntegratorSettings(**kw)
    return sc


def validate_config(rc: RunConfig) -> list[str]:
    """Static diagnostics without integrating: build, check, spot-check."""
    try:
        sc = build_scenario(rc)
    except ConfigError as e:
        return [str(e)]
    bad = sc.validate()
    rng = np.random.default_rng(12345)
    for i, p in enumerate(sc.problems, start=1):
        pts = rng.standard_normal((4, p.n)) * 0.5
        for msg in check_smooth_function(p.cost, pts):
            bad.append(f"agent {i} cost: {msg}")
    return bad


def effective_config(rc: RunConfig, sc: Scenario) -> dict:
    """The canonical dict whose rerun reproduces this run exactly."""
    out = {
        "protocol": rc.protocol,
        "seed": rc.seed,
        "t_end": sc.t_end,
        "penalty_c": rc.penalty_c,
        "integrator": {
            f.name: getattr(sc.settings, f.name)
            for f in dataclasses.fields(IntegratorSettings)
            if getattr(sc.settings, f.name) is not None
        },
        "run": {"out": rc.out, "emit_reference": rc.emit_reference},
    }
    if rc.preset is not None:
        out["preset"] = rc.preset
    else:
        out["scenario"] = rc.scenario
    return out


def dump_effective_config(rc: RunConfig, sc: Scenario, path: Path) -> None:
    path.write_text(yaml.safe_dump(effective_config(rc, sc),
                                   sort_keys=True, default_flow_style=False))
