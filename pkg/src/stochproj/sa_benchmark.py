"""Scenario-approximation baseline and solution-comparison metrics.

The sampling side draws Latin hypercube scenario sets over a model's germs and
solves the extensive-form LP; the reporting side compares a spectral solution's
first-stage trajectories against repeated scenario runs (objective gap, hourly
RMSE against the run mean, min–max envelopes).
"""

from __future__ import annotations

import io
import time
from csv import writer as _csv_writer
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from ._compile import CompiledModel, compile_model
from .conic import assemble_extensive_form, solve
from .sprog import FIRST, Germ, StochModel

__all__ = [
    "ScenarioSet",
    "SARun",
    "ComparisonReport",
    "DecisionComparison",
    "lhs_sample",
    "solve_sa",
    "run_repetitions",
    "compare",
]

_PPF_CLIP = (1e-15, 1.0 - 1e-16)


@dataclass(frozen=True)
class ScenarioSet:
    """Equally weighted realization matrix plus the quantiles that produced it.

    ``realizations[r, i]`` is germ ``i``'s value in scenario ``r`` (natural
    units); ``quantiles`` holds the CDF levels fed to each inverse CDF, kept so
    the one-sample-per-stratum property can be checked exactly.
    """

    realizations: np.ndarray
    quantiles: np.ndarray
    seed: int
    method: str = "latin-hypercube"

    @property
    def n_scenarios(self) -> int:
        return self.realizations.shape[0]

    @property
    def probabilities(self) -> np.ndarray:
        n = self.n_scenarios
        return np.full(n, 1.0 / n)


def lhs_sample(germs: Sequence[Germ], n_s: int, seed: int) -> ScenarioSet:
    """Latin hypercube sample of ``n_s`` joint realizations.

    Each dimension is cut into ``n_s`` equiprobable strata; every stratum
    receives exactly one sample at a uniformly drawn within-stratum quantile.
    Stratum-to-scenario pairings are permuted independently per dimension.
    Streams are seeded per (dimension, purpose) from counter-based generators,
    so the draw for a given stratum never depends on evaluation order.
    """
    if n_s < 1:
        raise ValueError(f"need at least one scenario, got n_s={n_s}")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    quantiles = np.empty((n_s, len(germs)))
    realizations = np.empty((n_s, len(germs)))
    for i, germ in enumerate(germs):
        perm_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 2 * i))))
        frac_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 2 * i + 1))))
        perm = perm_rng.permutation(n_s)
        within = frac_rng.random(n_s)  # indexed by stratum, not by scenario
        q = np.clip((perm + within[perm]) / n_s, *_PPF_CLIP)
        quantiles[:, i] = q
        realizations[:, i] = germ.distribution.ppf(q)
    return ScenarioSet(realizations=realizations, quantiles=quantiles, seed=seed)


@dataclass(frozen=True)
class SARun:
    """One extensive-form solve: objective, first-stage values, wall time."""

    n_s: int
    seed: int
    objective: float
    first_stage: dict[str, np.ndarray]
    wall_time: float


def _first_stage_values(compiled: CompiledModel, x: np.ndarray) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, var in compiled.model.variables.items():
        if var.stage != FIRST:
            continue
        flat = np.array([x[compiled.x_index[(name, k)]] for k in range(var.size)])
        out[name] = flat.reshape(var.shape)
    return out


def solve_sa(model: StochModel | CompiledModel, n_s: int, seed: int) -> SARun:
    """Sample ``n_s`` LHS scenarios, solve the extensive form, keep stage one.

    Raises RuntimeError when the scenario program does not solve to optimality;
    for small infeasible programs the message names the scenarios that are
    already infeasible on their own.
    """
    compiled = model if isinstance(model, CompiledModel) else compile_model(model)
    start = time.perf_counter()
    scenarios = lhs_sample(list(compiled.model.germs.values()), n_s, seed)
    problem = assemble_extensive_form(compiled, scenarios.realizations, scenarios.probabilities)
    result = solve(problem)
    elapsed = time.perf_counter() - start
    if result.status != "optimal":
        detail = ""
        if result.status == "infeasible" and n_s <= 200:
            lone = np.array([1.0])
            bad = [
                s
                for s in range(n_s)
                if solve(
                    assemble_extensive_form(compiled, scenarios.realizations[s : s + 1], lone)
                ).status
                == "infeasible"
            ]
            if bad:
                detail = f"; scenarios infeasible on their own: {bad[:10]}"
        raise RuntimeError(
            f"scenario program ({n_s} scenarios, seed {seed}) ended {result.status}{detail}"
        )
    return SARun(
        n_s=n_s,
        seed=seed,
        objective=float(result.objective),
        first_stage=_first_stage_values(compiled, result.x),
        wall_time=elapsed,
    )


def run_repetitions(
    model: StochModel | CompiledModel, n_s: int, repetitions: int, base_seed: int
) -> list[SARun]:
    """Independent repetitions with seeds ``base_seed .. base_seed+reps-1``."""
    compiled = model if isinstance(model, CompiledModel) else compile_model(model)
    return [solve_sa(compiled, n_s, base_seed + rep) for rep in range(repetitions)]


class _Solution(Protocol):
    objective: float
    first_stage: Mapping[str, np.ndarray]


@dataclass(frozen=True)
class DecisionComparison:
    """One first-stage trajectory against the run ensemble, hour by hour."""

    values: np.ndarray
    run_mean: np.ndarray
    run_min: np.ndarray
    run_max: np.ndarray
    deviation: np.ndarray  # values - run_mean, per hour
    rmse: float
    coverage: float  # fraction of hours inside [run_min, run_max]


@dataclass(frozen=True)
class ComparisonReport:
    objective: float
    reference_objective: float
    objective_gap_abs: float
    objective_gap_rel: float
    n_runs: int
    n_s: int
    decisions: dict[str, DecisionComparison]

    def hourly_csv(self) -> str:
        buf = io.StringIO()
        rows = _csv_writer(buf, lineterminator="\n")
        rows.writerow(["decision", "hour", "value", "run_mean", "run_min", "run_max", "deviation"])
        for name in sorted(self.decisions):
            d = self.decisions[name]
            for t in range(d.values.size):
                rows.writerow(
                    [name, t]
                    + [repr(float(v)) for v in (d.values[t], d.run_mean[t], d.run_min[t], d.run_max[t], d.deviation[t])]
                )
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        rows = _csv_writer(buf, lineterminator="\n")
        rows.writerow(["metric", "value"])
        rows.writerow(["objective", repr(self.objective)])
        rows.writerow(["reference_objective", repr(self.reference_objective)])
        rows.writerow(["objective_gap_abs", repr(self.objective_gap_abs)])
        rows.writerow(["objective_gap_rel", repr(self.objective_gap_rel)])
        rows.writerow(["runs", str(self.n_runs)])
        rows.writerow(["scenarios_per_run", str(self.n_s)])
        for name in sorted(self.decisions):
            d = self.decisions[name]
            rows.writerow([f"rmse[{name}]", repr(d.rmse)])
            rows.writerow([f"envelope_coverage[{name}]", repr(d.coverage)])
        return buf.getvalue()


_ENVELOPE_TOL = 1e-6


def compare(solution: _Solution, sa_runs: Sequence[SARun]) -> ComparisonReport:
    """Gap and trajectory metrics of a solution against repeated scenario runs.

    The reference objective/trajectory is the mean over the runs; RMSE is taken
    per hour against that mean and averaged over the horizon; the envelope is
    the per-hour min–max across runs (coverage tolerance 1e-6).
    """
    if not sa_runs:
        raise ValueError("need at least one scenario run to compare against")
    names = sorted(solution.first_stage)
    for run in sa_runs:
        if sorted(run.first_stage) != names:
            raise ValueError(
                f"first-stage decisions differ: {names} vs {sorted(run.first_stage)}"
            )
    reference_objective = float(np.mean([run.objective for run in sa_runs]))
    gap_abs = float(solution.objective) - reference_objective
    decisions: dict[str, DecisionComparison] = {}
    for name in names:
        values = np.asarray(solution.first_stage[name], dtype=float).reshape(-1)
        stacked = []
        for run in sa_runs:
            traj = np.asarray(run.first_stage[name], dtype=float).reshape(-1)
            if traj.shape != values.shape:
                raise ValueError(
                    f"horizon mismatch for {name!r}: {values.size} hours vs {traj.size}"
                )
            stacked.append(traj)
        ensemble = np.vstack(stacked)
        run_mean = ensemble.mean(axis=0)
        run_min = ensemble.min(axis=0)
        run_max = ensemble.max(axis=0)
        deviation = values - run_mean
        inside = (values >= run_min - _ENVELOPE_TOL) & (values <= run_max + _ENVELOPE_TOL)
        decisions[name] = DecisionComparison(
            values=values,
            run_mean=run_mean,
            run_min=run_min,
            run_max=run_max,
            deviation=deviation,
            rmse=float(np.sqrt(np.mean(deviation**2))),
            coverage=float(np.mean(inside)),
        )
    return ComparisonReport(
        objective=float(solution.objective),
        reference_objective=reference_objective,
        objective_gap_abs=gap_abs,
        objective_gap_rel=gap_abs / abs(reference_objective),
        n_runs=len(sa_runs),
        n_s=sa_runs[0].n_s,
        decisions=decisions,
    )
