"""Command-line runner: build a scenario, solve, integrate, report.

Exit codes: 0 on success with every hard invariant passing, 2 when a
static check or a report invariant fails, 1 on runtime errors
(including config parse problems).

Each run writes into its output directory:

- ``trajectory.csv``: one row per sample; columns t, then per agent
  x_i[k], lam_i[k], y_i[k], then metric columns; '#' header comments
  carry run metadata and the reference solution; floats use 17
  significant digits;
- ``reference.json``: the reference solution(s);
- ``report.txt`` / ``report.kv``: the invariant report, human- and
  machine-readable;
- ``config.yaml``: the resolved effective configuration; rerunning
  with it reproduces the outputs bit for bit.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import Report, attach_spectral_metric, check_theorem_suite
from .config import (
    RunConfig,
    build_scenario,
    config_from_dict,
    dump_effective_config,
    load_config,
    validate_config,
)
from .dynamics import Scenario
from .errors import ConfigError, ZgsflowError
from .integrator import Trajectory, integrate
from .oracle import solve_active_kkt, solve_barrier_reference, solve_kkt
from .protocols import FAMILIES

_METRIC_ORDER = (
    "E_x", "E_lam", "V", "zgs_residual", "feas_residual", "id_zgs",
    "id_feas", "consensus_diameter", "ineq_margin", "y_norm", "dz_max",
    "err_est", "lambda2_M",
)


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _vector_comment(name: str, v: np.ndarray) -> str:
    return f"# {name} = [" + ", ".join(_fmt(x) for x in v) + "]"


def attach_references(sc: Scenario) -> None:
    """Solve and attach the reference optima the metrics compare against."""
    problems = list(sc.problems)
    if sc.mode == "barrier":
        sc.reference = solve_barrier_reference(
            problems, max(p.ineq.c for p in problems if p.ineq is not None))
        sc.reference_exact = solve_active_kkt(problems)
    else:
        sc.reference = solve_kkt(problems)


def write_trajectory_csv(path: Path, sc: Scenario, traj: Trajectory) -> None:
    flow = sc.flow_model()
    cols: list[str] = ["t"]
    pulls = [traj.times[:, None]]
    for i in range(sc.N):
        off, d = int(flow.offsets[i]), flow.d_list[i]
        n = sc.n
        cols += [f"x{i + 1}[{k}]" for k in range(n)]
        pulls.append(traj.states[:, off:off + n])
        cols += [f"lam{i + 1}[{k}]" for k in range(d - n)]
        pulls.append(traj.states[:, off + n:off + d])
        cols += [f"y{i + 1}[{k}]" for k in range(d)]
        pulls.append(traj.states[:, flow.D + off:flow.D + off + d])
    names = [k for k in _METRIC_ORDER if k in traj.metrics]
    names += sorted(set(traj.metrics) - set(names))
    for k in names:
        cols.append(k)
        pulls.append(np.asarray(traj.metrics[k])[:, None])
    table = np.hstack(pulls)

    lines = ["# zgsflow trajectory v1"]
    lines.append(f"# scenario = {sc.name}")
    lines.append(f"# family = {sc.protocol.family}")
    lines.append(f"# mode = {sc.mode}")
    lines.append(f"# seed = {sc.seed}")
    lines.append(f"# t_end = {_fmt(sc.t_end)}")
    lines.append(f"# dt = {_fmt(sc.settings.dt)}")
    lines.append(f"# sample_dt = {_fmt(sc.settings.sample_step)}")
    lines.append(f"# termination = {traj.termination}")
    lines.append(f"# steps = {traj.steps}")
    if traj.settle_time is not None:
        lines.append(f"# settle_time = {_fmt(traj.settle_time)}")
    for label, ref in (("reference", sc.reference),
                       ("reference_exact", sc.reference_exact)):
        if ref is None:
            continue
        lines.append(_vector_comment(f"{label}_x", ref.x))
        lines.append(_vector_comment(f"{label}_lambda", ref.lam))
        lines.append(f"# {label}_objective = {_fmt(ref.objective)}")
        lines.append(f"# {label}_kkt_residual = {_fmt(ref.kkt_residual)}")
        if ref.c is not None:
            lines.append(f"# {label}_c = {_fmt(ref.c)}")
    lines.append(",".join(cols))
    for row in table:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_report(out: Path, sc: Scenario, traj: Trajectory,
                 report: Report, elapsed: float) -> None:
    head = [
        f"scenario: {sc.name}",
        f"family: {sc.protocol.family}",
        f"mode: {sc.mode}",
        f"seed: {sc.seed}",
        f"t_end: {sc.t_end:g}  dt: {sc.settings.dt:g}",
        f"termination: {traj.termination} after {traj.steps} steps"
        + (f" (settled at t = {traj.settle_time:.6g})"
           if traj.settle_time is not None else ""),
        f"wall_time_s: {elapsed:.2f}",
    ]
    if sc.reference is not None:
        head.append("reference x* = ["
                    + ", ".join(f"{v:.6f}" for v in sc.reference.x) + "]")
        head.append("reference lambda* = ["
                    + ", ".join(f"{v:.6f}" for v in sc.reference.lam) + "]")
        head.append(f"reference objective = {sc.reference.objective:.9g}")
    (out / "report.txt").write_text(
        "\n".join(head) + "\n\n" + report.to_text() + "\n")
    kv = report.to_kv()
    kv["wall_time_s"] = f"{elapsed:.3f}"
    kv["termination"] = traj.termination
    kv["steps"] = str(traj.steps)
    (out / "report.kv").write_text(
        "".join(f"{k}={v}\n" for k, v in kv.items()))


def run(rc: RunConfig) -> int:
    """Execute one configured run; returns the process exit code."""
    diags = validate_config(rc)
    if diags:
        for d in diags:
            print(f"invalid: {d}", file=sys.stderr)
        return 2
    sc = build_scenario(rc)
    for w in sc.warnings():
        print(f"note: {w}", file=sys.stderr)
    t0 = time.perf_counter()
    attach_references(sc)
    traj = integrate(sc, sc.settings, sc.t_end)
    attach_spectral_metric(traj, sc)
    report = check_theorem_suite(traj, sc)
    elapsed = time.perf_counter() - t0

    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", sc, traj)
    if rc.emit_reference:
        blob = {"reference": sc.reference.as_dict()}
        if sc.reference_exact is not None:
            blob["reference_exact"] = sc.reference_exact.as_dict()
        (out / "reference.json").write_text(json.dumps(blob, indent=2) + "\n")
    write_report(out, sc, traj, report, elapsed)
    dump_effective_config(rc, sc, out / "config.yaml")
    print(report.to_text())
    return 0 if report.passed else 2


def _resolve_config(args) -> RunConfig:
    data = load_config(args.config) if args.config else {}
    if not args.config and args.preset is None and "scenario" not in data:
        data.setdefault("preset", "case1_equality")
    return config_from_dict(
        data,
        preset=args.preset,
        protocol=args.protocol,
        t_end=args.t_end,
        dt=args.dt,
        seed=args.seed,
        out=args.out,
    )


def _batch_child(payload) -> int:
    rc_kw, family = payload
    rc_kw = dict(rc_kw)
    rc_kw["protocol"] = family
    rc_kw["out"] = str(Path(rc_kw["out"]) / family)
    return run(RunConfig(**rc_kw))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="zgsflow",
        description="Constrained consensus-optimization flow simulator")
    ap.add_argument("--preset", choices=sorted(
        ("case1_equality", "case2_inequality")), default=None)
    ap.add_argument("--config", type=str, default=None,
                    help="YAML config file")
    ap.add_argument("--protocol", choices=FAMILIES, default=None)
    ap.add_argument("--t-end", dest="t_end", type=float, default=None)
    ap.add_argument("--dt", type=float, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=str, default=None)
    ap.add_argument("--batch", action="store_true",
                    help="run all four protocol families in parallel")
    ap.add_argument("--validate-only", action="store_true",
                    help="static checks only; no integration")
    args = ap.parse_args(argv)

    try:
        rc = _resolve_config(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    try:
        if args.validate_only:
            worst = 0
            for fam in (FAMILIES if args.batch else (rc.protocol,)):
                rc_f = RunConfig(**{**rc.__dict__, "protocol": fam})
                diags = validate_config(rc_f)
                for d in diags:
                    print(f"invalid [{fam}]: {d}")
                worst = max(worst, 2 if diags else 0)
            if worst == 0:
                print("configuration valid")
            return worst
        if args.batch:
            payloads = [(rc.__dict__, fam) for fam in FAMILIES]
            with ProcessPoolExecutor(max_workers=len(FAMILIES)) as pool:
                codes = list(pool.map(_batch_child, payloads))
            return max(codes)
        return run(rc)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ZgsflowError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
