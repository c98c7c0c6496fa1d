"""Batch command-line surface wiring the pipeline end to end.

Four subcommands cover the workflow: ``project`` turns a stochastic model
into its deterministic conic program and reports dimensions, ``solve`` also
runs the solver and writes the first-stage schedule plus the recourse
coefficient table, ``validate`` replays a solved policy through Monte-Carlo
checks, and ``benchmark`` races the projection against extensive-form
scenario programs over a scenario grid.

Every command writes a ``manifest.json`` (inputs, settings, seeds, package
versions, timestamp) next to its outputs, and all CSV/JSON data files are
byte-stable: rerunning a command with the same arguments reproduces them
exactly.  Wall-clock measurements — which cannot be byte-stable — live in a
separate ``timings.json``.

Exit codes: 0 success, 1 bad input or arguments, 2 solver finished without
an optimal solution, 3 unexpected internal failure.  Errors are reported as
one JSON record on stderr.

The model argument is either a path to a model JSON file (see
:func:`stochproj.sprog.dump_model`) or the literal ``desk`` for the built-in
virtual-power-plant instance.  ``STOCHPROJ_SOLVER_THREADS`` caps solver
threads.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from ._compile import compile_model
from .conic import assemble, dump, solve
from .galerkin import (
    ProjectionSettings,
    RecoursePolicy,
    project_model,
    recover_policy,
)
from .mcvalidate import estimate_cost, estimate_violations, max_equality_residual
from .multibasis import build_basis
from .sa_benchmark import compare, solve_sa
from .sprog import ModelError, StochModel, load_model
from .vpp_example import build_instance

DESK_MODEL = "desk"

_FIRST_STAGE_CSV = "first_stage.csv"
_COEFFICIENTS_CSV = "coefficients.csv"


# ── run manifests ──────────────────────────────────────────────────────────────


@dataclasses.dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce one command invocation."""

    command: str
    model: str
    degree: int
    epsilon: float
    lam: float
    rule: str
    solver: dict
    out_dir: str
    created_utc: str
    versions: dict
    seed: int | None = None
    mc_samples: int | None = None
    scenarios: tuple[int, ...] | None = None
    repetitions: int | None = None
    seeds: tuple[int, ...] | None = None

    def write(self, out_dir: Path) -> None:
        _write_json(out_dir / "manifest.json", dataclasses.asdict(self))


def _versions() -> dict[str, str]:
    out = {"python": platform.python_version(), "stochproj": __version__}
    for pkg in ("numpy", "scipy", "clarabel"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def _solver_settings() -> dict:
    env = os.environ.get("STOCHPROJ_SOLVER_THREADS")
    return {"threads": int(env) if env else None}


def _manifest(args, command: str, settings: ProjectionSettings, degree: int, **extra) -> RunManifest:
    return RunManifest(
        command=command,
        model=args.model,
        degree=degree,
        epsilon=settings.epsilon,
        lam=settings.lam,
        rule=settings.rule,
        solver=_solver_settings(),
        out_dir=str(args.out),
        created_utc=datetime.now(timezone.utc).isoformat(),
        versions=_versions(),
        **extra,
    )


# ── shared plumbing ────────────────────────────────────────────────────────────


class _UsageError(ValueError):
    pass


def _load_input_model(spec: str) -> StochModel:
    if spec == DESK_MODEL:
        return build_instance()
    path = Path(spec)
    if not path.exists():
        raise _UsageError(f"model file not found: {spec}")
    return load_model(path)


def _projection_settings(args) -> ProjectionSettings:
    rule = "cantelli" if args.cantelli else "gaussian"
    # degree 0 keeps only each germ's mean: the deterministic collapse
    truncate = args.degree == 0
    if args.lam is not None:
        return ProjectionSettings(
            lam=args.lam, epsilon=args.epsilon, rule=rule, allow_truncation=truncate
        )
    return ProjectionSettings.for_epsilon(args.epsilon, rule=rule, allow_truncation=truncate)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _csv_buffer() -> tuple[io.StringIO, "csv.writer"]:
    buf = io.StringIO()
    return buf, csv.writer(buf, lineterminator="\n")


def _project(model: StochModel, args):
    settings = _projection_settings(args)
    basis = build_basis(list(model.germs.values()), args.degree)
    program = project_model(model, basis, settings)
    return settings, basis, program


# ── solution files ─────────────────────────────────────────────────────────────


def _write_first_stage(path: Path, policy: RecoursePolicy) -> None:
    buf, rows = _csv_buffer()
    rows.writerow(["variable", "element", "value"])
    for name, values in policy.first_stage.items():
        for k, value in enumerate(np.asarray(values).reshape(-1)):
            rows.writerow([name, k, repr(float(value))])
    path.write_text(buf.getvalue())


def _write_coefficients(path: Path, policy: RecoursePolicy) -> None:
    buf, rows = _csv_buffer()
    rows.writerow(["variable", "element", "term", "alpha", "value"])
    for name, table in policy.coefficients.items():
        for elem in range(table.shape[0]):
            for term in range(table.shape[1]):
                alpha = "|".join(str(d) for d in policy.basis.indices[term])
                rows.writerow([name, elem, term, alpha, repr(float(table[elem, term]))])
    path.write_text(buf.getvalue())


def _read_policy(solution_dir: Path, model: StochModel, basis) -> RecoursePolicy:
    first_path = solution_dir / _FIRST_STAGE_CSV
    coeff_path = solution_dir / _COEFFICIENTS_CSV
    for path in (first_path, coeff_path):
        if not path.exists():
            raise _UsageError(f"solution file not found: {path}")
    first: dict[str, np.ndarray] = {}
    with first_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            name = row["variable"]
            var = model.variables.get(name)
            if var is None:
                raise _UsageError(f"solution names unknown variable {name!r}")
            first.setdefault(name, np.zeros(var.size))[int(row["element"])] = float(row["value"])
    coefficients: dict[str, np.ndarray] = {}
    with coeff_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            name = row["variable"]
            var = model.variables.get(name)
            if var is None:
                raise _UsageError(f"solution names unknown variable {name!r}")
            table = coefficients.setdefault(name, np.zeros((var.size, basis.cardinality)))
            term = int(row["term"])
            if term >= basis.cardinality:
                raise _UsageError(
                    f"coefficient term {term} outside the basis (|A| = {basis.cardinality}); "
                    "was the solution produced at a different degree?"
                )
            table[int(row["element"]), term] = float(row["value"])
    shapes = {name: var.shape for name, var in model.variables.items()}
    for name, values in first.items():
        first[name] = values.reshape(shapes[name] or ())
    return RecoursePolicy(basis, first, coefficients, shapes)


# ── subcommands ────────────────────────────────────────────────────────────────


def cmd_project(args) -> None:
    model = _load_input_model(args.model)
    settings, basis, program = _project(model, args)
    problem = assemble(program)
    out = _out_dir(args)
    dump(problem, out / "projected.socp")
    dims = program.dimensions()
    report = {
        "model": args.model,
        "germs": len(model.germs),
        "degree": args.degree,
        "basis_cardinality": basis.cardinality,
        "columns": dims.n_columns,
        "first_stage_columns": dims.n_first_stage,
        "recourse_coefficient_columns": dims.n_recourse_coefficients,
        "equality_rows": dims.n_equalities,
        "linear_inequality_rows": dims.n_linear_inequalities,
        "cones": dims.n_cones,
    }
    _write_json(out / "dimensions.json", report)
    _manifest(args, "project", settings, args.degree).write(out)
    print(f"basis cardinality |A| = {basis.cardinality} ({len(model.germs)} germs, degree {args.degree})")
    print(
        f"conic program: {dims.n_columns} columns, {dims.n_equalities} equality rows, "
        f"{dims.n_linear_inequalities} linear inequality rows, {dims.n_cones} cones"
    )


def cmd_solve(args) -> None:
    model = _load_input_model(args.model)
    settings, basis, program = _project(model, args)
    started = time.perf_counter()
    result = solve(assemble(program)).require_optimal()
    wall = time.perf_counter() - started
    policy = recover_policy(program, result.x)
    out = _out_dir(args)
    _write_first_stage(out / _FIRST_STAGE_CSV, policy)
    _write_coefficients(out / _COEFFICIENTS_CSV, policy)
    _write_json(
        out / "objective.json",
        {
            "objective": result.objective,
            "status": result.status,
            "solver": {k: v for k, v in result.diagnostics.items()},
            "degree": args.degree,
            "epsilon": settings.epsilon,
            "lambda": settings.lam,
            "rule": settings.rule,
        },
    )
    _write_json(out / "timings.json", {"solve_wall_s": wall})
    _manifest(args, "solve", settings, args.degree).write(out)
    print(f"objective {result.objective:.6f} ({result.status}, |A| = {basis.cardinality})")


def cmd_validate(args) -> None:
    solution_dir = Path(args.solution)
    manifest_path = solution_dir / "manifest.json"
    if not manifest_path.exists():
        raise _UsageError(f"no manifest.json in solution directory {solution_dir}")
    solved = json.loads(manifest_path.read_text())
    model = _load_input_model(args.model)
    basis = build_basis(list(model.germs.values()), int(solved["degree"]))
    policy = _read_policy(solution_dir, model, basis)
    report = estimate_violations(
        policy,
        model,
        n_mc=args.mc_samples,
        seed=args.seed,
        default_target=float(solved["epsilon"]),
    )
    residual = max_equality_residual(policy, model, n_mc=min(args.mc_samples, 1000), seed=args.seed)
    cost = estimate_cost(policy, model, n_mc=args.mc_samples, seed=args.seed)
    out = _out_dir(args)
    (out / "violations.csv").write_text(report.csv())
    _write_json(
        out / "cost.json",
        {
            "mc_cost_mean": cost.mean,
            "mc_cost_se": cost.se,
            "ci_low": cost.ci_low,
            "ci_high": cost.ci_high,
            "max_equality_residual": residual,
            "n_samples": args.mc_samples,
            "seed": args.seed,
        },
    )
    settings = ProjectionSettings(
        lam=float(solved["lam"]), epsilon=float(solved["epsilon"]), rule=solved["rule"]
    )
    _manifest(
        args, "validate", settings, int(solved["degree"]), seed=args.seed, mc_samples=args.mc_samples
    ).write(out)
    print(report.summary_line())
    print(f"expected cost {cost.mean:.6f} +- {cost.se:.6f}; max equality residual {residual:.3e}")


@dataclasses.dataclass(frozen=True)
class _ProjectedSolution:
    objective: float
    first_stage: dict[str, np.ndarray]


def _scenario_runs(compiled, n_s: int, repetitions: int, base_seed: int) -> list:
    seeds = list(range(base_seed, base_seed + repetitions))
    workers = min(repetitions, os.cpu_count() or 1)
    if workers <= 1:
        return [solve_sa(compiled, n_s, seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda seed: solve_sa(compiled, n_s, seed), seeds))


def cmd_benchmark(args) -> None:
    model = _load_input_model(args.model)
    settings, basis, program = _project(model, args)
    started = time.perf_counter()
    result = solve(assemble(program)).require_optimal()
    pce_wall = time.perf_counter() - started
    policy = recover_policy(program, result.x)
    pce = _ProjectedSolution(float(result.objective), policy.first_stage)

    compiled = compile_model(model)
    grid = list(args.scenarios)
    runs_by_ns = {n_s: _scenario_runs(compiled, n_s, args.repetitions, args.seed) for n_s in grid}
    reference_runs = runs_by_ns[max(grid)]
    reference = float(np.mean([run.objective for run in reference_runs]))
    report = compare(pce, reference_runs)

    out = _out_dir(args)
    buf, rows = _csv_buffer()
    rows.writerow(["n_s", "seed", "objective"])
    for n_s in grid:
        for run in runs_by_ns[n_s]:
            rows.writerow([n_s, run.seed, repr(run.objective)])
    (out / "sa_runs.csv").write_text(buf.getvalue())

    buf, rows = _csv_buffer()
    rows.writerow(
        ["method", "n_s", "repetitions", "mean_objective", "std_objective", "objective_cov", "gap_rel_vs_reference"]
    )
    rows.writerow(["pce", 0, 1, repr(pce.objective), repr(0.0), repr(0.0), repr((pce.objective - reference) / abs(reference))])
    for n_s in grid:
        objs = np.array([run.objective for run in runs_by_ns[n_s]])
        mean = float(objs.mean())
        std = float(objs.std(ddof=1)) if objs.size > 1 else 0.0
        rows.writerow(
            [
                "sa",
                n_s,
                objs.size,
                repr(mean),
                repr(std),
                repr(std / abs(mean)),
                repr((mean - reference) / abs(reference)),
            ]
        )
    (out / "accuracy_runtime.csv").write_text(buf.getvalue())

    (out / "bid_envelope.csv").write_text(report.hourly_csv())
    (out / "comparison.csv").write_text(report.summary_csv())
    _write_json(
        out / "timings.json",
        {
            "pce_wall_s": pce_wall,
            "sa_total_s": sum(run.wall_time for runs in runs_by_ns.values() for run in runs),
            "sa_runs": [
                {"n_s": n_s, "seed": run.seed, "wall_s": run.wall_time}
                for n_s in grid
                for run in runs_by_ns[n_s]
            ],
        },
    )
    seeds = tuple(range(args.seed, args.seed + args.repetitions))
    _manifest(
        args,
        "benchmark",
        settings,
        args.degree,
        seed=args.seed,
        scenarios=tuple(grid),
        repetitions=args.repetitions,
        seeds=seeds,
    ).write(out)

    print(
        f"pce objective {pce.objective:.6f}; reference sa({max(grid)}) mean {reference:.6f} "
        f"over {args.repetitions} runs; gap {100 * report.objective_gap_rel:+.2f}%"
    )
    for name in sorted(report.decisions):
        d = report.decisions[name]
        print(f"envelope coverage {name}: {100 * d.coverage:.0f}% of {d.values.size} periods")


# ── argument parsing ───────────────────────────────────────────────────────────


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage problems through exit code 1
        raise _UsageError(message)


def _scenario_grid(text: str) -> tuple[int, ...]:
    try:
        grid = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"scenario grid must be comma-separated integers, got {text!r}")
    if not grid or any(n <= 0 for n in grid):
        raise argparse.ArgumentTypeError(f"scenario counts must be positive, got {text!r}")
    return grid


def _add_projection_flags(sub) -> None:
    sub.add_argument("--degree", type=int, default=1, help="total polynomial degree of the basis (default 1)")
    sub.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        default=None,
        help="deviation safety factor; overrides the value derived from --epsilon",
    )
    sub.add_argument("--epsilon", type=float, default=0.05, help="target violation probability (default 0.05)")
    sub.add_argument(
        "--cantelli",
        action="store_true",
        help="derive the safety factor distribution-free instead of from the gaussian quantile",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="stochproj",
        description="Project two-stage stochastic LPs onto polynomial bases, solve, validate, benchmark.",
        epilog=(
            "MODEL is a model JSON path or the literal 'desk' for the built-in instance. "
            "Set STOCHPROJ_SOLVER_THREADS to cap solver threads."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    project = commands.add_parser("project", help="project a model and dump the conic program")
    project.add_argument("model")
    _add_projection_flags(project)
    project.add_argument("--out", default=".", help="output directory (default current)")
    project.set_defaults(func=cmd_project)

    solve_cmd = commands.add_parser("solve", help="project, solve, and write the policy")
    solve_cmd.add_argument("model")
    _add_projection_flags(solve_cmd)
    solve_cmd.add_argument("--out", default=".", help="output directory (default current)")
    solve_cmd.set_defaults(func=cmd_solve)

    validate = commands.add_parser("validate", help="Monte-Carlo checks of a solved policy")
    validate.add_argument("solution", help="directory written by 'solve'")
    validate.add_argument("model")
    validate.add_argument("--mc-samples", type=int, default=10_000, help="realizations (default 10000)")
    validate.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    validate.add_argument("--out", default=".", help="output directory (default current)")
    validate.set_defaults(func=cmd_validate)

    benchmark = commands.add_parser("benchmark", help="race the projection against scenario programs")
    benchmark.add_argument("model")
    _add_projection_flags(benchmark)
    benchmark.add_argument(
        "--scenarios",
        type=_scenario_grid,
        default=(50, 100, 200, 500, 1000),
        help="comma-separated scenario grid (default 50,100,200,500,1000)",
    )
    benchmark.add_argument("--repetitions", type=int, default=20, help="independent runs per grid point (default 20)")
    benchmark.add_argument("--seed", type=int, default=0, help="base seed; run k uses seed+k (default 0)")
    benchmark.add_argument("--out", default=".", help="output directory (default current)")
    benchmark.set_defaults(func=cmd_benchmark)

    return parser


def _emit_error(code: int, exc: BaseException) -> None:
    record = {"error": {"code": code, "type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _emit_error(1, exc)
        return 1
    try:
        args.func(args)
        return 0
    except (_UsageError, ModelError, json.JSONDecodeError, ValueError, OSError) as exc:
        _emit_error(1, exc)
        return 1
    except RuntimeError as exc:
        _emit_error(2, exc)
        return 2
    except Exception as exc:  # pragma: no cover - defensive: anything unplanned
        _emit_error(3, exc)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
