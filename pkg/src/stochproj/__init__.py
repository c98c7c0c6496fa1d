"""Spectral projection of two-stage stochastic linear programs.

The pipeline: declare a stochastic LP over independent uncertain germs
(:mod:`stochproj.sprog`), expand every recourse variable in the orthonormal
polynomial basis matched to the germ distributions (:mod:`stochproj.polybasis`,
:mod:`stochproj.multibasis`), project constraints and objective onto the
truncated basis (:mod:`stochproj.galerkin`), assemble and solve the resulting
deterministic second-order cone program (:mod:`stochproj.conic`), then check
the recovered recourse policy by Monte Carlo (:mod:`stochproj.mcvalidate`) and
against extensive-form scenario approximation (:mod:`stochproj.sa_benchmark`).

:mod:`stochproj.vpp_example` ships a desk-scale virtual-power-plant scheduling
instance exercising the whole stack; :mod:`stochproj.cli` is the batch surface.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .polybasis import Distribution, PolynomialFamily, QuadratureRule, standardize
from .sprog import (
    FIRST,
    SECOND,
    ModelError,
    StochModel,
    dump_model,
    dumps_model,
    load_model,
    loads_model,
)
from .multibasis import MultiIndexBasis, build_basis, build_index_set, moments
from .galerkin import (
    ProjectedProgram,
    ProjectionError,
    ProjectionSettings,
    RecoursePolicy,
    evaluate_policy,
    project_model,
    recover_policy,
)
from .conic import ConicProblem, SolveResult, assemble, assemble_extensive_form, solve
from .sa_benchmark import (
    ComparisonReport,
    SARun,
    compare,
    lhs_sample,
    run_repetitions,
    solve_sa,
)
from .mcvalidate import (
    CostEstimate,
    ViolationReport,
    estimate_cost,
    estimate_violations,
    max_equality_residual,
    sample_germs,
)
from .vpp_example import (
    UncertainInput,
    VPPInstanceConfig,
    build_instance,
    default_config,
    default_uncertainty,
)

__all__ = [
    "__version__",
    "Distribution",
    "PolynomialFamily",
    "QuadratureRule",
    "standardize",
    "FIRST",
    "SECOND",
    "ModelError",
    "StochModel",
    "dump_model",
    "dumps_model",
    "load_model",
    "loads_model",
    "MultiIndexBasis",
    "build_basis",
    "build_index_set",
    "moments",
    "ProjectedProgram",
    "ProjectionError",
    "ProjectionSettings",
    "RecoursePolicy",
    "evaluate_policy",
    "project_model",
    "recover_policy",
    "ConicProblem",
    "SolveResult",
    "assemble",
    "assemble_extensive_form",
    "solve",
    "ComparisonReport",
    "SARun",
    "compare",
    "lhs_sample",
    "run_repetitions",
    "solve_sa",
    "CostEstimate",
    "ViolationReport",
    "estimate_cost",
    "estimate_violations",
    "max_equality_residual",
    "sample_germs",
    "UncertainInput",
    "VPPInstanceConfig",
    "build_instance",
    "default_config",
    "default_uncertainty",
]
