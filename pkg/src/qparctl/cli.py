"""Command-line entry points.

Usage::

    qparctl <command> SCENARIO.yaml [--out DIR] [--format csv,summary]
    qparctl sweep SCENARIO.yaml --axis time_optimal.sigma=0.5,1,2,4 [--command time-optimal] [--workers N]

Each run writes one artifact directory ``<out>/<scenario name>-<command>``.
The output root defaults to ``$QPARCTL_OUT`` and then ``./qparctl_runs``.
Exit codes: 0 success, 1 invalid scenario or arguments, 2 solver or search
failure (a partial artifact is still written).
"""

from __future__ import annotations

import argparse
import itertools
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import scenario as scn
from .carleman import observability_probe
from .errors import ParseError, QparctlError, ValidationError
from .estimates import (
    energy_profile,
    h1_decay_report,
    linf_decay_report,
    max_modulus_bound,
    regularity_ratio,
    smallness_times,
    sup_profile,
)
from .mult_control import TimeOptimalParams, theorem1_pipeline, time_optimal_search
from .null_control import fixed_point_null_control
from .pde_core import l2_norm, solve_forward, trapezoid_x
from .reports import RunArtifact, Table, emit_report, write_table

COMMANDS = ("simulate", "decay-report", "null-control", "mult-control", "time-optimal",
            "observability-probe", "sweep", "validate")
ENV_OUT = "QPARCTL_OUT"
DEFAULT_OUT = "qparctl_runs"

SERIES_COLUMNS = ["t", "M", "E", "l2", "linf_bound"]
SLAB_COLUMNS = ["x", "t", "y", "u"]


def _series_table(traj, spec):
    grid = traj.grid
    y0_l2 = l2_norm(traj.initial, grid.dx)
    bound = np.full(grid.n_t + 1, math.inf)
    bound[1:] = y0_l2 / np.sqrt(2.0 * spec.rho * grid.t[1:])
    l2 = np.sqrt(trapezoid_x(traj.values ** 2, grid.dx))
    return Table.from_columns(t=grid.t, M=sup_profile(traj), E=energy_profile(traj), l2=l2, linf_bound=bound)


def _slab_table(traj, u_values, stride):
    grid = traj.grid
    ks = np.arange(0, grid.n_t + 1, stride)
    iis = np.arange(0, grid.n_x + 2, stride)
    K, I = np.meshgrid(ks, iis, indexing="ij")
    u = np.zeros(grid.shape) if u_values is None else u_values
    return Table.from_columns(x=grid.x[I], t=grid.t[K], y=traj.values[K, I], u=u[K, I])


def _empty_tables():
    return {"time_series": Table(list(SERIES_COLUMNS)), "slab": Table(list(SLAB_COLUMNS))}


def _cmd_simulate(sc, art):
    grid, spec = scn.make_grid(sc), scn.make_spec(sc)
    y0 = scn.make_initial(sc, grid)
    traj = solve_forward(y0, None, grid, spec)
    art.tables["time_series"] = _series_table(traj, spec)
    art.tables["slab"] = _slab_table(traj, None, sc.output.stride)
    art.summary.update(
        rho=spec.rho, kappa=spec.kappa, M=spec.M,
        y0_l2=l2_norm(y0, grid.dx),
        max_abs_y=float(np.max(np.abs(traj.values))),
        terminal_norm=l2_norm(traj.final, grid.dx),
    )
    return traj, spec


def _cmd_decay_report(sc, art):
    traj, spec = _cmd_simulate(sc, art)
    grid = traj.grid
    C0 = scn.make_C0(sc)
    lin = linf_decay_report(traj, spec)
    art.summary["linf"] = {
        "monotone_violation": lin.monotone_violation,
        "bound_violation": lin.bound_violation,
        "slack": lin.slack,
        "monotone_ok": lin.monotone_ok,
        "bound_ok": lin.bound_ok,
    }
    art.summary["max_modulus_bound"] = max_modulus_bound(traj.initial, None, spec)
    try:
        h1 = h1_decay_report(traj, spec, C0)
        art.summary["h1"] = {
            "rate_estimate": h1.h1_rate_estimate,
            "rate_threshold": h1.rate_threshold,
            "gate_index": h1.gate_index,
            "degenerate": h1.degenerate,
            "rate_ok": h1.rate_ok,
        }
    except QparctlError as exc:
        art.record_error(exc, "h1_decay_report")
    try:
        st = smallness_times(traj, spec, C0, sc.estimates.eta)
        art.summary["smallness_times"] = st._asdict()
    except QparctlError as exc:
        art.record_error(exc, "smallness_times")
    t0 = sc.estimates.t0 if sc.estimates.t0 is not None else grid.t[grid.n_t // 2]
    rr = regularity_ratio(traj, spec, t0)
    art.summary["regularity_ratio"] = {"t0": float(t0), "ratio": rr.ratio, "degenerate": rr.degenerate}
    if art.errors:
        art.status = "partial"


def _cmd_null_control(sc, art):
    grid, spec = scn.make_grid(sc), scn.make_spec(sc)
    y0 = scn.make_initial(sc, grid)
    w = scn.make_weights(sc, grid, spec, y0)
    art.summary.update(s=w.s, lam=w.lam, y0_l2=l2_norm(y0, grid.dx))
    res = fixed_point_null_control(y0, spec, w, sc.omega, scn.make_penalty(sc), scn.make_fixed_point(sc))
    rep = res.report
    art.summary.update(rep.as_dict())
    y0_l2 = l2_norm(y0, grid.dx)
    art.summary["terminal_ratio"] = rep.terminal_norm / y0_l2 if y0_l2 > 0 else 0.0
    art.tables["time_series"] = _series_table(res.y, spec)
    art.tables["slab"] = _slab_table(res.y, res.u.values, sc.output.stride)
    eps = scn.make_penalty(sc).eps_schedule
    art.tables["continuation"] = Table.from_columns(
        eps=np.array(eps[:len(rep.continuation_terminal_norms)]),
        terminal_norm=np.array(rep.continuation_terminal_norms),
    )


def _cmd_mult_control(sc, art):
    grid, spec = scn.make_grid(sc), scn.make_spec(sc)
    y0 = scn.make_initial(sc, grid)
    w = scn.make_weights(sc, grid, spec, y0)
    res = theorem1_pipeline(y0, spec, scn.make_reaction(sc), w, sc.omega, scn.make_C0(sc),
                            scn.make_penalty(sc), scn.make_fixed_point(sc), sc.pipeline.t3,
                            scn.make_pipeline(sc))
    art.summary.update(res.summary())
    art.summary["horizon_is_output"] = True
    art.tables["time_series"] = _series_table(res.y, spec)
    art.tables["slab"] = _slab_table(res.y, res.u.values, sc.output.stride)


def _cmd_time_optimal(sc, art):
    if sc.time_optimal is None:
        raise ValidationError("time-optimal needs a time_optimal section", field="time_optimal")
    grid, spec = scn.make_grid(sc), scn.make_spec(sc)
    y0 = scn.make_initial(sc, grid)
    w = scn.make_weights(sc, grid, spec, y0)
    to = sc.time_optimal
    tol = to.terminal_tol if to.terminal_tol is not None else sc.pipeline.terminal_rel_tol * l2_norm(y0, grid.dx)
    top = TimeOptimalParams(to.sigma, to.T_hi, to.bisect_tol, tol)
    res = time_optimal_search(y0, spec, scn.make_reaction(sc), w, sc.omega, scn.make_C0(sc),
                              scn.make_penalty(sc), scn.make_fixed_point(sc), top, sc.pipeline.t3)
    art.summary.update(res.summary())
    art.summary["estimate_kind"] = "upper bound within the staged control class"
    if res.feasible is not None:
        art.tables["time_series"] = _series_table(res.feasible.y, spec)
        art.tables["slab"] = _slab_table(res.feasible.y, res.feasible.u.values, sc.output.stride)
    ev = res.evaluations
    art.tables["search"] = Table.from_columns(T=np.array([e[0] for e in ev], dtype=float),
                                              feasible=np.array([e[1] for e in ev], dtype=bool))


def _cmd_probe(sc, art):
    grid, spec = scn.make_grid(sc), scn.make_spec(sc)
    y0 = scn.make_initial(sc, grid)
    w = scn.make_weights(sc, grid, spec, y0)
    traj = solve_forward(y0, None, grid, spec)
    b = spec.a(traj.values)
    res = observability_probe(b, w, sc.omega, sc.probe.n_samples, grid, seed=sc.seed)
    art.summary.update(res.as_dict())
    art.summary.update(s=w.s, lam=w.lam)
    art.tables["probe"] = Table.from_columns(sample=np.arange(res.log_ratios.size),
                                             log10_ratio=res.log_ratios / math.log(10))


def _cmd_validate(sc, art):
    art.summary["valid"] = True


HANDLERS = {
    "simulate": _cmd_simulate,
    "decay-report": _cmd_decay_report,
    "null-control": _cmd_null_control,
    "mult-control": _cmd_mult_control,
    "time-optimal": _cmd_time_optimal,
    "observability-probe": _cmd_probe,
    "validate": _cmd_validate,
}


def _out_root(arg):
    return Path(arg or os.environ.get(ENV_OUT) or DEFAULT_OUT)


def execute(sc, command, out_dir, formats=("csv", "summary")):
    """Run one command on a loaded scenario and write its artifact."""
    art = RunArtifact(command, sc.to_dict(), sc.content_hash(command))
    if command not in ("validate",):
        art.tables.update(_empty_tables())
    start = time.perf_counter()
    code = 0
    try:
        HANDLERS[command](sc, art)
    except (ValidationError, ParseError) as exc:
        art.status, code = "invalid", 1
        art.record_error(exc, command)
    except (QparctlError, ValueError, ArithmeticError) as exc:
        art.status, code = "failed", 2
        art.record_error(exc, command)
    if code == 0 and art.status == "partial":
        code = 2
    art.wall_clock = time.perf_counter() - start
    emit_report(art, out_dir, formats)
    return code, art


def _cell_worker(job):
    raw, command, out_dir, formats = job
    sc = scn.scenario_from_dict(raw)
    code, art = execute(sc, command, out_dir, formats)
    return code, art.summary_document()


AGGREGATE_KEYS = ("T_star", "terminal_norm", "terminal_ratio", "c1_ratio", "c2_ratio", "linf_u", "linf_cost",
                  "min_denominator", "anomaly", "feasible_linf_u")


def _parse_value(text):
    return yaml.safe_load(text)


def sweep(sc, axes, command, out_root, workers=1, formats=("csv", "summary")):
    """Run ``command`` on the cross product of ``axes``.

    ``axes`` is a list of ``(dotted_path, values)``.  Cells write to
    ``<out_root>/cell-NNN``; the aggregate table goes to
    ``<out_root>/aggregate.csv``.  Failed cells are recorded, not raised.
    """
    out_root = Path(out_root)
    cells = []
    for combo in itertools.product(*[vals for _, vals in axes]):
        cell = sc
        for (path, _), value in zip(axes, combo):
            cell = scn.with_override(cell, path, value)
        cells.append((combo, cell))
    jobs = [(cell.to_dict(), command, str(out_root / f"cell-{i:03d}"), formats)
            for i, (_, cell) in enumerate(cells)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_worker, jobs))
    else:
        outcomes = [_cell_worker(job) for job in jobs]
    columns = ["cell"] + [path for path, _ in axes] + ["status", "exit_code"] + list(AGGREGATE_KEYS)
    table = Table(columns)
    for i, ((combo, _), (code, doc)) in enumerate(zip(cells, outcomes)):
        results = doc["results"]
        row = [i] + [v for v in combo] + [doc["status"], code] + [results.get(k) for k in AGGREGATE_KEYS]
        table.rows.append(row)

    out_root.mkdir(parents=True, exist_ok=True)
    write_table(table, out_root / "aggregate.csv")
    return (0 if all(code == 0 for code, _ in outcomes) else 2), table


def _parse_axis(text):
    if "=" not in text:
        raise ValueError(f"axis must look like path=v1,v2: {text!r}")
    path, vals = text.split("=", 1)
    return path.strip(), [_parse_value(v) for v in vals.split(",") if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="qparctl", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("scenario", help="YAML scenario file")
    parser.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    parser.add_argument("--format", default="csv,summary", help="comma list of csv, summary")
    parser.add_argument("--axis", action="append", default=[], help="sweep axis path=v1,v2,...")
    parser.add_argument("--command", dest="sweep_command", default="time-optimal",
                        choices=[c for c in COMMANDS if c not in ("sweep",)], help="command run by sweep")
    return parser


def run_command(argv):
    """Parse ``argv``, run, and return ``(exit_code, artifact_or_table)``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (0 if exc.code == 0 else 1), None
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    if not set(formats) <= {"csv", "summary"}:
        print(f"unknown format in {args.format!r}", file=sys.stderr)
        return 1, None
    root = _out_root(args.out)
    try:
        sc = scn.load_scenario(args.scenario)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        art = RunArtifact(args.command, {}, "", status="invalid")
        art.record_error(exc, "load")
        emit_report(art, root / f"{Path(args.scenario).stem}-{args.command}", ("summary",))
        return 1, art
    if args.command == "sweep":
        try:
            axes = [_parse_axis(a) for a in args.axis]
            code, table = sweep(sc, axes, args.sweep_command, root / f"{sc.name}-sweep", args.workers, formats)
        except (ValueError, ValidationError, ParseError) as exc:
            print(f"invalid sweep: {exc}", file=sys.stderr)
            return 1, None
        return code, table
    code, art = execute(sc, args.command, root / f"{sc.name}-{args.command}", formats)
    if code:
        print(f"{args.command}: {art.status}: {art.errors[-1]['message'] if art.errors else ''}", file=sys.stderr)
    return code, art


def main(argv=None):
    code, _ = run_command(sys.argv[1:] if argv is None else argv)
    sys.exit(code)


if __name__ == "__main__":
    main()
