"""Out-of-sample validation of a solved recourse policy.

Draws independent germ realizations, pushes them through the polynomial
policy, and reports empirical chance-constraint violations (with binomial
intervals) and cost statistics against the original model's rows.
"""

from __future__ import annotations

import io
from csv import writer as _csv_writer
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._compile import CompiledModel, compile_model
from .galerkin import RecoursePolicy, standardize_realizations
from .multibasis import eval_all
from .sprog import Germ, StochModel

__all__ = [
    "ConstraintCheck",
    "CostEstimate",
    "ViolationReport",
    "estimate_cost",
    "estimate_violations",
    "max_equality_residual",
    "sample_germs",
]

#: residual above this counts as a violation; below is solver round-off
VIOLATION_TOL = 1e-9

_Z95 = 1.959963984540054  # two-sided 95% normal quantile


def sample_germs(germs: Sequence[Germ], n_mc: int, seed: int) -> np.ndarray:
    """(n_mc, n_germs) independent realizations in natural units.

    Each dimension draws from its own counter-based stream keyed by
    (seed, dimension), so draws for sample j never depend on how many samples
    any other worker has consumed, and the first k rows of a larger run equal
    the k-row run exactly.
    """
    if n_mc < 1:
        raise ValueError(f"need at least one sample, got n_mc={n_mc}")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    out = np.empty((n_mc, len(germs)))
    for i, germ in enumerate(germs):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, i, 1))))
        q = np.clip(rng.random(n_mc), 1e-15, 1.0 - 1e-16)
        out[:, i] = germ.distribution.ppf(q)
    return out


def _wilson(count: int, n: int) -> tuple[float, float]:
    p = count / n
    z2 = _Z95 * _Z95
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = _Z95 * np.sqrt(p * (1.0 - p) / n + z2 / (4 * n * n)) / denom
    # round-off can push the bounds a hair past the point estimate
    return float(min(max(0.0, center - half), p)), float(max(min(1.0, center + half), p))


def _compiled(model: StochModel | CompiledModel) -> CompiledModel:
    return model if isinstance(model, CompiledModel) else compile_model(model)


def _check_policy(compiled: CompiledModel, policy: RecoursePolicy) -> None:
    basis_names = [g.name for g in policy.basis.germs]
    if basis_names != list(compiled.germ_names):
        raise ValueError(
            f"policy basis germs {basis_names} differ from model germs {compiled.germ_names}"
        )


def _first_stage_vector(compiled: CompiledModel, policy: RecoursePolicy) -> np.ndarray:
    x = np.zeros(compiled.n_first_stage)
    for name, values in policy.first_stage.items():
        flat = np.asarray(values, dtype=float).reshape(-1)
        for k, v in enumerate(flat):
            x[compiled.x_index[(name, k)]] = v
    return x


def _recourse_matrix(
    compiled: CompiledModel, policy: RecoursePolicy, omega: np.ndarray
) -> np.ndarray:
    table = eval_all(policy.basis, standardize_realizations(policy.basis, omega))
    z = np.empty((omega.shape[0], compiled.n_recourse))
    for name, coeffs in policy.coefficients.items():
        cols = [compiled.z_index[(name, k)] for k in range(coeffs.shape[0])]
        z[:, cols] = table @ coeffs.T
    return z


@dataclass(frozen=True)
class ConstraintCheck:
    """Empirical violation tally for one inequality."""

    name: str
    n_samples: int
    violations: int
    probability: float
    ci_low: float
    ci_high: float
    target: float

    @property
    def exceeds_target(self) -> bool:
        return self.probability > self.target


@dataclass(frozen=True)
class ViolationReport:
    checks: list[ConstraintCheck]
    n_samples: int

    @property
    def max_probability(self) -> float:
        return max((c.probability for c in self.checks), default=0.0)

    @property
    def n_above_target(self) -> int:
        return sum(1 for c in self.checks if c.exceeds_target)

    def csv(self) -> str:
        buf = io.StringIO()
        rows = _csv_writer(buf, lineterminator="\n")
        rows.writerow(
            ["constraint", "violation_probability", "ci_low", "ci_high", "target", "above_target"]
        )
        for c in self.checks:
            rows.writerow(
                [
                    c.name,
                    repr(c.probability),
                    repr(c.ci_low),
                    repr(c.ci_high),
                    repr(c.target),
                    str(int(c.exceeds_target)),
                ]
            )
        return buf.getvalue()

    def summary_line(self) -> str:
        return (
            f"{self.n_above_target} of {len(self.checks)} inequalities above target; "
            f"max empirical violation {self.max_probability:.4f} at {self.n_samples} samples"
        )


def estimate_violations(
    policy: RecoursePolicy,
    model: StochModel | CompiledModel,
    n_mc: int = 10_000,
    seed: int = 0,
    default_target: float = 0.05,
) -> ViolationReport:
    """Empirical violation probability of every inequality under the policy.

    A sample violates a row when its residual exceeds ``VIOLATION_TOL``.
    Rows declared with an explicit epsilon are judged against it; the rest
    against ``default_target``.  Intervals are 95% Wilson.
    """
    compiled = _compiled(model)
    _check_policy(compiled, policy)
    omega = sample_germs(list(compiled.model.germs.values()), n_mc, seed)
    x = _first_stage_vector(compiled, policy)
    z = _recourse_matrix(compiled, policy, omega)
    checks = []
    for row in compiled.inequalities:
        residuals = row.evaluate(x, z, omega)
        count = int((residuals > VIOLATION_TOL).sum())
        lo, hi = _wilson(count, n_mc)
        checks.append(
            ConstraintCheck(
                name=row.name,
                n_samples=n_mc,
                violations=count,
                probability=count / n_mc,
                ci_low=lo,
                ci_high=hi,
                target=row.epsilon if row.epsilon is not None else default_target,
            )
        )
    return ViolationReport(checks=checks, n_samples=n_mc)


def max_equality_residual(
    policy: RecoursePolicy,
    model: StochModel | CompiledModel,
    n_mc: int = 1000,
    seed: int = 0,
) -> float:
    """Largest |residual| of any original equality over sampled realizations."""
    compiled = _compiled(model)
    _check_policy(compiled, policy)
    omega = sample_germs(list(compiled.model.germs.values()), n_mc, seed)
    x = _first_stage_vector(compiled, policy)
    z = _recourse_matrix(compiled, policy, omega)
    worst = 0.0
    for row in compiled.equalities:
        worst = max(worst, float(np.abs(row.evaluate(x, z, omega)).max()))
    return worst


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    se: float
    ci_low: float
    ci_high: float


def estimate_cost(
    policy: RecoursePolicy,
    model: StochModel | CompiledModel,
    n_mc: int = 10_000,
    seed: int = 0,
) -> CostEstimate:
    """Monte-Carlo mean of the objective through the policy, with normal CI."""
    compiled = _compiled(model)
    _check_policy(compiled, policy)
    omega = sample_germs(list(compiled.model.germs.values()), n_mc, seed)
    x = _first_stage_vector(compiled, policy)
    z = _recourse_matrix(compiled, policy, omega)
    values = compiled.objective.evaluate(x, z, omega)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
    return CostEstimate(mean=mean, se=se, ci_low=mean - _Z95 * se, ci_high=mean + _Z95 * se)
