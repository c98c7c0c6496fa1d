"""Spectral projection of a stochastic LP onto its polynomial basis.

Every second-stage variable is expanded in the multivariate basis; first-stage
variables keep only the constant mode.  Enforcing orthogonality of each
equality residual to every basis function turns one stochastic equality into
|A| deterministic rows.  Each inequality is read as a chance constraint and
becomes a second-order cone: mean + lambda * ||deviation coefficients|| <= 0.
The objective keeps its zero mode, which is the expected cost.

Projection here is exact, not approximate: model expressions are affine in
the germs with optional germ-times-variable bilinear terms, so every product
lands inside the basis — except bilinear terms hitting a recourse expansion,
whose product exceeds the truncation degree.  Those raise by default and are
Galerkin-truncated only on explicit opt-in.  Objectives are exempt: the
expectation only ever reads basis modes that exist, so the zero-mode row is
exact at any degree.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.stats import norm

from .multibasis import MultiIndexBasis, build_basis, coupling_matrix, eval_all, triple_tensor
from .sprog import SECOND, Constraint, StochModel

__all__ = [
    "CoefficientLayout",
    "ProjectedProgram",
    "ProjectionError",
    "ProjectionSettings",
    "RecoursePolicy",
    "SocCone",
    "evaluate_policy",
    "expand_recourse",
    "project_equality",
    "project_inequality",
    "project_model",
    "project_objective",
    "recover_policy",
]


class ProjectionError(ValueError):
    """Raised when a model cannot be projected onto the requested basis."""


def _lambda_for(rule: str, epsilon: float) -> float:
    if not 0.0 < epsilon < 0.5:
        raise ProjectionError(f"epsilon must lie in (0, 0.5), got {epsilon!r}")
    if rule == "gaussian":
        return float(norm.ppf(1.0 - epsilon))
    if rule == "cantelli":
        return math.sqrt((1.0 - epsilon) / epsilon)
    raise ProjectionError(f"unknown safety-factor rule {rule!r}")


@dataclass(frozen=True)
class ProjectionSettings:
    """Chance-constraint safety factor and truncation policy.

    The default pairs lam=1.645 with epsilon=0.05 under a Gaussian reading of
    the residual; `for_epsilon` derives lam from a target violation
    probability instead ("cantelli" gives the distribution-free bound
    sqrt((1-eps)/eps)).  Per-constraint epsilons are converted with the same
    rule.
    """

    lam: float = 1.645
    epsilon: float = 0.05
    rule: str = "gaussian"
    allow_truncation: bool = False

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ProjectionError(f"lambda must be positive, got {self.lam!r}")
        if self.rule not in ("gaussian", "cantelli"):
            raise ProjectionError(f"unknown safety-factor rule {self.rule!r}")
        if not 0.0 < self.epsilon < 0.5:
            raise ProjectionError(f"epsilon must lie in (0, 0.5), got {self.epsilon!r}")

    @classmethod
    def for_epsilon(cls, epsilon: float, rule: str = "gaussian", allow_truncation: bool = False):
        return cls(_lambda_for(rule, epsilon), epsilon, rule, allow_truncation)

    def lambda_for(self, epsilon: float | None) -> float:
        if epsilon is None:
            return self.lam
        return _lambda_for(self.rule, epsilon)


class CoefficientLayout:
    """Column layout of the projected program.

    First-stage elements first, in declaration order; then each recourse
    element's |A| coefficients, contiguous, in basis index order.
    """

    def __init__(self, model: StochModel, basis: MultiIndexBasis):
        if len(basis.germs) != len(model.germs) or any(
            bg is not mg for bg, mg in zip(basis.germs, model.germs.values())
        ):
            raise ProjectionError("basis germs do not match the model's germs (same objects, same order)")
        self.model = model
        self.basis = basis
        self.cardinality = basis.cardinality
        self._offset: dict[str, int] = {}
        col = 0
        for var in model.variables.values():
            if var.stage != SECOND:
                self._offset[var.name] = col
                col += var.size
        self.n_first_stage = col
        for var in model.variables.values():
            if var.stage == SECOND:
                self._offset[var.name] = col
                col += var.size * self.cardinality
        self.n_columns = col

    def column(self, var_name: str, flat: int = 0, mode: int = 0) -> int:
        var = self.model.variables[var_name]
        if var.stage == SECOND:
            return self._offset[var_name] + flat * self.cardinality + mode
        if mode != 0:
            raise ProjectionError(f"first-stage variable {var_name!r} has only the constant mode")
        return self._offset[var_name] + flat

    def column_names(self) -> list[str]:
        names = [""] * self.n_columns
        for var in self.model.variables.values():
            base = self._offset[var.name]
            if var.stage != SECOND:
                for flat in range(var.size):
                    names[base + flat] = f"{var.name}[{flat}]" if var.shape else var.name
            else:
                for flat in range(var.size):
                    tag = f"{var.name}[{flat}]" if var.shape else var.name
                    for mode, alpha in enumerate(self.basis.indices):
                        names[base + flat * self.cardinality + mode] = f"{tag}@{','.join(map(str, alpha))}"
        return names

    def recourse_block(self, var_name: str) -> slice:
        var = self.model.variables[var_name]
        if var.stage != SECOND:
            raise ProjectionError(f"{var_name!r} is not a recourse variable")
        start = self._offset[var_name]
        return slice(start, start + var.size * self.cardinality)


def expand_recourse(model: StochModel, basis: MultiIndexBasis) -> CoefficientLayout:
    """Coefficient-variable map: recourse elements fan out to |A| columns."""
    if not model.finalized:
        raise ProjectionError("model must be finalized before projection")
    return CoefficientLayout(model, basis)


# ── expression expansion ───────────────────────────────────────────────────────


class _Rows:
    """Accumulates rows[mode] = (sparse column dict, constant)."""

    def __init__(self, cardinality: int):
        self.cols: dict[int, dict[int, float]] = {}
        self.const: dict[int, float] = {}
        self.cardinality = cardinality

    def add(self, mode: int, col: int, coeff: float) -> None:
        if coeff != 0.0:
            row = self.cols.setdefault(mode, {})
            row[col] = row.get(col, 0.0) + coeff

    def add_const(self, mode: int, value: float) -> None:
        if value != 0.0:
            self.const[mode] = self.const.get(mode, 0.0) + value

    def row(self, mode: int) -> tuple[dict[int, float], float]:
        return self.cols.get(mode, {}), self.const.get(mode, 0.0)

    def modes_touched(self) -> set[int]:
        return set(self.cols) | set(self.const)


class _Projector:
    """Shared machinery: expand expressions into per-mode rows."""

    def __init__(self, model: StochModel, basis: MultiIndexBasis, layout: CoefficientLayout):
        self.model = model
        self.basis = basis
        self.layout = layout
        self.germ_pos = {germ.name: i for i, germ in enumerate(basis.germs)}
        self._tensor = None
        self._couplings: dict[int, np.ndarray] = {}

    def coupling(self, germ_pos: int) -> np.ndarray:
        if germ_pos not in self._couplings:
            if self._tensor is None:
                self._tensor = triple_tensor(self.basis)
            self._couplings[germ_pos] = coupling_matrix(self.basis, self._tensor, germ_pos)
        return self._couplings[germ_pos]

    def expand(self, expr, context: str, zero_mode_only: bool = False, allow_truncation: bool = False) -> _Rows:
        basis, layout = self.basis, self.layout
        card = basis.cardinality
        rows = _Rows(card)
        degree = basis.max_degree
        for (g, v), coeff in expr.terms.items():
            if g is None and v is None:
                rows.add_const(0, coeff)
                continue
            if g is None:
                var = self.model.variables[v[0]]
                if var.stage == SECOND:
                    if zero_mode_only:
                        rows.add(0, layout.column(v[0], v[1], 0), coeff)
                    else:
                        for mode in range(card):
                            rows.add(mode, layout.column(v[0], v[1], mode), coeff)
                else:
                    rows.add(0, layout.column(v[0], v[1]), coeff)
                continue
            pos = self.germ_pos[g]
            germ = basis.germs[pos]
            mean, spread = germ.natural_mean, germ.natural_sd
            if v is None:
                rows.add_const(0, coeff * mean)
                if degree >= 1:
                    rows.add_const(basis.unit_index(pos), coeff * spread)
                elif not (zero_mode_only or allow_truncation):
                    raise ProjectionError(
                        f"{context}: term {coeff!r}*{g} needs basis degree 1, have {degree}; "
                        "raise the degree or opt into truncation"
                    )
                continue
            var = self.model.variables[v[0]]
            if var.stage != SECOND:
                col = layout.column(v[0], v[1])
                rows.add(0, col, coeff * mean)
                if degree >= 1:
                    rows.add(basis.unit_index(pos), col, coeff * spread)
                elif not (zero_mode_only or allow_truncation):
                    raise ProjectionError(
                        f"{context}: term {coeff!r}*{g}*{v[0]}[{v[1]}] needs basis degree 1, "
                        f"have {degree}; raise the degree or opt into truncation"
                    )
                continue
            # germ * recourse: the product psi_1 * Psi_eta leaves the basis at
            # the top grade, so constraint rows demand explicit opt-in
            if zero_mode_only:
                rows.add(0, layout.column(v[0], v[1], 0), coeff * mean)
                if degree >= 1:
                    rows.add(0, layout.column(v[0], v[1], basis.unit_index(pos)), coeff * spread)
                continue
            if not allow_truncation:
                raise ProjectionError(
                    f"{context}: term {coeff!r}*{g}*{v[0]}[{v[1]}] multiplies a germ into a "
                    f"recourse expansion; its exact projection needs degree {degree + 1}, have "
                    f"{degree} — opt into truncation to project anyway"
                )
            coupling = self.coupling(pos)
            for mode in range(card):
                rows.add(mode, layout.column(v[0], v[1], mode), coeff * mean)
                for eta in range(card):
                    weight = coupling[eta, mode]
                    if weight != 0.0:
                        rows.add(mode, layout.column(v[0], v[1], eta), coeff * spread * weight)
        return rows


def _project_equality(
    projector: _Projector, constraint: Constraint, allow_truncation: bool = False
) -> list[tuple[tuple[str, int], dict[int, float], float]]:
    if constraint.sense != "eq":
        raise ProjectionError(f"{constraint.name!r} is not an equality")
    rows = projector.expand(constraint.expression, f"equality {constraint.name!r}", allow_truncation=allow_truncation)
    out = []
    for mode in range(projector.basis.cardinality):
        cols, const = rows.row(mode)
        out.append(((constraint.name, mode), cols, const))
    return out


def project_equality(
    model: StochModel,
    basis: MultiIndexBasis,
    constraint: Constraint,
    allow_truncation: bool = False,
) -> list[tuple[tuple[str, int], dict[int, float], float]]:
    """One linear row per basis mode: (label, column dict, constant).

    Row semantics: sum(columns) + constant = 0 over the canonical
    CoefficientLayout(model, basis) columns.
    """
    return _project_equality(_Projector(model, basis, CoefficientLayout(model, basis)), constraint, allow_truncation)


@dataclass(frozen=True)
class SocCone:
    """mean + lam * ||dev rows|| <= 0 over the layout's columns."""

    name: str
    lam: float
    mean_cols: dict[int, float]
    mean_const: float
    dev_modes: tuple[int, ...]
    dev_cols: tuple[dict[int, float], ...]
    dev_consts: tuple[float, ...]


def _project_inequality(projector: _Projector, constraint: Constraint, lam: float, allow_truncation: bool = False):
    if constraint.sense != "le":
        raise ProjectionError(f"{constraint.name!r} is not an inequality")
    if lam <= 0.0:
        raise ProjectionError(f"lambda must be positive, got {lam!r}")
    rows = projector.expand(
        constraint.expression, f"inequality {constraint.name!r}", allow_truncation=allow_truncation
    )
    mean_cols, mean_const = rows.row(0)
    dev_modes, dev_cols, dev_consts = [], [], []
    for mode in sorted(rows.modes_touched() - {0}):
        cols, const = rows.row(mode)
        if cols or const != 0.0:
            dev_modes.append(mode)
            dev_cols.append(cols)
            dev_consts.append(const)
    if not any(dev_cols):
        # no variable content in the norm: constant radius tightens the rhs
        radius = math.hypot(*dev_consts) if dev_consts else 0.0
        return "linear", ((constraint.name, 0), mean_cols, mean_const + lam * radius)
    return "soc", SocCone(
        constraint.name, lam, mean_cols, mean_const, tuple(dev_modes), tuple(dev_cols), tuple(dev_consts)
    )


def project_inequality(
    model: StochModel,
    basis: MultiIndexBasis,
    constraint: Constraint,
    lam: float,
    allow_truncation: bool = False,
):
    """('soc', SocCone) or, when no deviation mode survives, ('linear', row).

    The cone reads mean + lam * ||deviation rows|| <= 0.  Deviation rows that
    are structurally zero are dropped; if none with variable content remain,
    the result degenerates to a linear row (a constant-only norm is folded
    into the right-hand side, keeping the tightening exact).
    """
    return _project_inequality(
        _Projector(model, basis, CoefficientLayout(model, basis)), constraint, lam, allow_truncation
    )


def _project_objective(projector: _Projector) -> tuple[dict[int, float], float]:
    rows = projector.expand(projector.model.objective, "objective", zero_mode_only=True)
    return rows.row(0)


def project_objective(model: StochModel, basis: MultiIndexBasis) -> tuple[dict[int, float], float]:
    """Zero-mode (expected-value) row of the cost expansion: exact always."""
    return _project_objective(_Projector(model, basis, CoefficientLayout(model, basis)))


@dataclass
class ProgramDimensions:
    n_columns: int
    n_first_stage: int
    n_recourse_coefficients: int
    n_equalities: int
    n_cones: int
    n_linear_inequalities: int


@dataclass
class ProjectedProgram:
    """Deterministic coefficient-space program produced by projection."""

    model: StochModel
    basis: MultiIndexBasis
    layout: CoefficientLayout
    settings: ProjectionSettings
    objective_cols: dict[int, float]
    objective_const: float
    eq_labels: list[tuple[str, int]]
    eq_matrix: sparse.csr_matrix
    eq_rhs: np.ndarray
    lin_labels: list[tuple[str, int]]
    lin_matrix: sparse.csr_matrix
    lin_rhs: np.ndarray
    cones: list[SocCone]

    def dimensions(self) -> ProgramDimensions:
        return ProgramDimensions(
            n_columns=self.layout.n_columns,
            n_first_stage=self.layout.n_first_stage,
            n_recourse_coefficients=self.layout.n_columns - self.layout.n_first_stage,
            n_equalities=self.eq_matrix.shape[0],
            n_cones=len(self.cones),
            n_linear_inequalities=self.lin_matrix.shape[0],
        )

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.layout.n_columns)
        for col, coeff in self.objective_cols.items():
            c[col] = coeff
        return c


def _rows_to_csr(rows: list[dict[int, float]], n_cols: int) -> sparse.csr_matrix:
    data, ri, ci = [], [], []
    for i, cols in enumerate(rows):
        for c, v in cols.items():
            ri.append(i)
            ci.append(c)
            data.append(v)
    return sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n_cols))


def project_model(
    model: StochModel, basis: MultiIndexBasis | None = None, settings: ProjectionSettings | None = None
) -> ProjectedProgram:
    """Project a finalized model; with no basis given, degree-1 over its germs."""
    settings = settings or ProjectionSettings()
    if basis is None:
        basis = build_basis(list(model.germs.values()), 1)
    layout = expand_recourse(model, basis)
    projector = _Projector(model, basis, layout)

    eq_labels: list[tuple[str, int]] = []
    eq_rows: list[dict[int, float]] = []
    eq_consts: list[float] = []
    lin_labels: list[tuple[str, int]] = []
    lin_rows: list[dict[int, float]] = []
    lin_consts: list[float] = []
    cones: list[SocCone] = []

    for con in model.constraints:
        if con.sense == "eq":
            for label, cols, const in _project_equality(projector, con, settings.allow_truncation):
                eq_labels.append(label)
                eq_rows.append(cols)
                eq_consts.append(const)
        else:
            kind, payload = _project_inequality(
                projector, con, settings.lambda_for(con.epsilon), settings.allow_truncation
            )
            if kind == "linear":
                label, cols, const = payload
                lin_labels.append(label)
                lin_rows.append(cols)
                lin_consts.append(const)
            else:
                cones.append(payload)

    objective_cols, objective_const = _project_objective(projector)
    return ProjectedProgram(
        model=model,
        basis=basis,
        layout=layout,
        settings=settings,
        objective_cols=objective_cols,
        objective_const=objective_const,
        eq_labels=eq_labels,
        eq_matrix=_rows_to_csr(eq_rows, layout.n_columns),
        eq_rhs=-np.array(eq_consts) if eq_consts else np.zeros(0),
        lin_labels=lin_labels,
        lin_matrix=_rows_to_csr(lin_rows, layout.n_columns),
        lin_rhs=-np.array(lin_consts) if lin_consts else np.zeros(0),
        cones=cones,
    )


# ── solved policies ────────────────────────────────────────────────────────────


@dataclass
class RecoursePolicy:
    """Solved polynomial recourse map plus the first-stage decision."""

    basis: MultiIndexBasis
    first_stage: dict[str, np.ndarray]
    coefficients: dict[str, np.ndarray]  # (n_elements, |A|) per recourse variable
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def zero_modes(self) -> dict[str, np.ndarray]:
        return {name: table[:, 0].copy() for name, table in self.coefficients.items()}


def recover_policy(program: ProjectedProgram, primal: np.ndarray) -> RecoursePolicy:
    layout, model, basis = program.layout, program.model, program.basis
    primal = np.asarray(primal, dtype=float)
    if primal.shape != (layout.n_columns,):
        raise ProjectionError(f"primal vector has shape {primal.shape}, expected ({layout.n_columns},)")
    first, coeffs, shapes = {}, {}, {}
    for var in model.variables.values():
        shapes[var.name] = var.shape
        if var.stage == SECOND:
            block = primal[layout.recourse_block(var.name)]
            coeffs[var.name] = block.reshape(var.size, basis.cardinality).copy()
        else:
            start = layout.column(var.name, 0)
            first[var.name] = primal[start : start + var.size].reshape(var.shape or ()).copy()
    return RecoursePolicy(basis, first, coeffs, shapes)


def standardize_realizations(basis: MultiIndexBasis, omega: np.ndarray) -> np.ndarray:
    """Map natural-unit germ realizations to standardized coordinates."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if omega.shape[1] != basis.n_germs:
        raise ProjectionError(f"realizations have {omega.shape[1]} columns for {basis.n_germs} germs")
    out = np.empty_like(omega)
    for i, germ in enumerate(basis.germs):
        out[:, i] = (omega[:, i] - germ.transform.offset) / germ.transform.scale
    return out


def evaluate_policy(policy: RecoursePolicy, omega) -> dict[str, np.ndarray]:
    """Recourse values at natural-unit realizations omega.

    Accepts one realization (1-D, one value per germ) or a batch (2-D, one
    row per realization); returns arrays shaped like the variable (with a
    leading batch axis in the batch case).  Realizations outside a germ's
    support are evaluated anyway — the polynomials are global — but warned
    about.
    """
    omega_arr = np.asarray(omega, dtype=float)
    single = omega_arr.ndim == 1
    std = standardize_realizations(policy.basis, omega_arr)
    natural = np.atleast_2d(omega_arr)
    for i, germ in enumerate(policy.basis.germs):
        lo, hi = germ.distribution.support
        col = natural[:, i]
        if ((col < lo) | (col > hi)).any():
            warnings.warn(
                f"realization outside the support of germ {germ.name!r}; evaluating anyway",
                stacklevel=2,
            )
    table = eval_all(policy.basis, std)  # (n, |A|)
    out = {}
    for name, coeffs in policy.coefficients.items():
        vals = table @ coeffs.T  # (n, n_elements)
        shape = policy.shapes.get(name, (coeffs.shape[0],))
        if single:
            out[name] = vals[0].reshape(shape or ())
        else:
            out[name] = vals.reshape((vals.shape[0],) + (shape or ()))
    return out
