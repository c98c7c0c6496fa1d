"""Canonical conic form, solver adapters, and extensive-form assembly.

A ConicProblem is the solver-agnostic target: minimize q.v subject to linear
equalities, linear inequalities, variable bounds, and second-order cones
written ||A v + b|| <= c.v + d.  Pure LPs route to HiGHS (scipy); anything
with cones routes to Clarabel.  Both adapters translate honestly: a solver
failure comes back as a status with residual diagnostics, never as numbers.

The extensive-form assembler turns a stochastic model plus a scenario matrix
into one large LP with per-scenario recourse copies — the classical
sample-average benchmark.  Single-variable inequality rows are folded into
variable bounds (cheaper for the simplex presolve), which matters at a few
thousand scenarios.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from ._compile import CompiledModel, compile_model
from .galerkin import ProjectedProgram
from .sprog import StochModel

__all__ = [
    "ConeBlock",
    "ConicProblem",
    "SolveResult",
    "assemble",
    "assemble_extensive_form",
    "dump",
    "dumps",
    "load",
    "loads",
    "solve",
]

_FORMAT = "stochproj-conic"
_VERSION = 1


@dataclass
class ConeBlock:
    """||A v + b|| <= c.v + d with c stored sparsely as (c_cols, c_vals)."""

    name: str
    A: sparse.csr_matrix
    b: np.ndarray
    c_cols: np.ndarray
    c_vals: np.ndarray
    d: float

    @property
    def order(self) -> int:
        return self.A.shape[0] + 1


@dataclass
class ConicProblem:
    n_vars: int
    objective: np.ndarray
    objective_const: float
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    A_ub: sparse.csr_matrix
    b_ub: np.ndarray
    cones: list[ConeBlock] = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        n = self.n_vars
        if self.lb is None:
            self.lb = np.full(n, -np.inf)
        if self.ub is None:
            self.ub = np.full(n, np.inf)
        for label, mat, rhs in (("eq", self.A_eq, self.b_eq), ("ub", self.A_ub, self.b_ub)):
            if mat.shape[1] != n:
                raise ValueError(f"{label} matrix has {mat.shape[1]} columns for {n} variables")
            if mat.shape[0] != len(rhs):
                raise ValueError(f"{label} matrix/rhs row mismatch: {mat.shape[0]} vs {len(rhs)}")
            if mat.nnz and not np.isfinite(mat.data).all():
                raise ValueError(f"{label} matrix contains non-finite entries")
        if self.objective.shape != (n,):
            raise ValueError(f"objective has shape {self.objective.shape}, expected ({n},)")
        for cone in self.cones:
            if cone.A.shape[1] != n:
                raise ValueError(f"cone {cone.name!r} has {cone.A.shape[1]} columns for {n} variables")
            if (cone.c_cols >= n).any() or (cone.c_cols < 0).any():
                raise ValueError(f"cone {cone.name!r} references columns out of range")

    @property
    def is_linear(self) -> bool:
        return not self.cones


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | numerical-failure
    objective: float | None
    x: np.ndarray | None
    diagnostics: dict

    def require_optimal(self) -> "SolveResult":
        if self.status != "optimal":
            raise RuntimeError(f"solve ended with status {self.status!r}: {self.diagnostics}")
        return self


# ── assembly from a projected program ──────────────────────────────────────────


def _dicts_to_csr(rows: list[dict[int, float]], n: int) -> sparse.csr_matrix:
    data, ri, ci = [], [], []
    for i, cols in enumerate(rows):
        for c, v in sorted(cols.items()):
            ri.append(i)
            ci.append(c)
            data.append(v)
    mat = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
    mat.sort_indices()
    return mat


def assemble(projected: ProjectedProgram) -> ConicProblem:
    """Rewrite mean + lam*||dev|| <= 0 as ||A v + b|| <= c.v + d.

    Convention (kept by the dump format): the norm side carries the raw
    deviation coefficients; the scalar side is the negated mean row divided
    by lam, i.e. c = -mean/lam, d = -mean_const/lam.
    """
    n = projected.layout.n_columns
    cones = []
    for src in projected.cones:
        A = _dicts_to_csr(list(src.dev_cols), n)
        c_cols = np.array(sorted(src.mean_cols), dtype=int)
        c_vals = np.array([-src.mean_cols[c] / src.lam for c in c_cols])
        cones.append(
            ConeBlock(
                name=src.name,
                A=A,
                b=np.array(src.dev_consts, dtype=float),
                c_cols=c_cols,
                c_vals=c_vals,
                d=-src.mean_const / src.lam,
            )
        )
    eq = projected.eq_matrix.copy()
    eq.sort_indices()
    ub = projected.lin_matrix.copy()
    ub.sort_indices()
    return ConicProblem(
        n_vars=n,
        objective=projected.objective_vector(),
        objective_const=projected.objective_const,
        A_eq=eq,
        b_eq=projected.eq_rhs.copy(),
        A_ub=ub,
        b_ub=projected.lin_rhs.copy(),
        cones=cones,
    )


# ── solving ────────────────────────────────────────────────────────────────────


def _thread_budget(threads: int | None) -> int | None:
    if threads is not None:
        return threads
    env = os.environ.get("STOCHPROJ_SOLVER_THREADS")
    return int(env) if env else None


def solve(
    problem: ConicProblem,
    tol: float = 1e-8,
    max_iter: int = 200,
    verbose: bool = False,
    threads: int | None = None,
) -> SolveResult:
    """Route to HiGHS for pure LPs, Clarabel when cones are present."""
    if problem.is_linear:
        return _solve_linear(problem, verbose)
    return _solve_conic(problem, tol, max_iter, verbose, _thread_budget(threads))


#: above this size, interior point beats dual simplex on the wide, repetitive
#: scenario blocks of extensive forms; below it, simplex is faster and lands
#: exactly on a vertex
_IPM_VARIABLE_THRESHOLD = 20_000


def _solve_linear(problem: ConicProblem, verbose: bool) -> SolveResult:
    bounds = np.column_stack([problem.lb, problem.ub])
    method = "highs-ipm" if problem.n_vars >= _IPM_VARIABLE_THRESHOLD else "highs"
    res = linprog(
        problem.objective,
        A_ub=problem.A_ub if problem.A_ub.shape[0] else None,
        b_ub=problem.b_ub if problem.A_ub.shape[0] else None,
        A_eq=problem.A_eq if problem.A_eq.shape[0] else None,
        b_eq=problem.b_eq if problem.A_eq.shape[0] else None,
        bounds=bounds,
        method=method,
        options={"disp": verbose},
    )
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "numerical-failure")
    diagnostics = {"solver": method, "iterations": int(getattr(res, "nit", 0)), "message": res.message}
    if status != "optimal":
        return SolveResult(status, None, None, diagnostics)
    return SolveResult(status, float(res.fun) + problem.objective_const, np.asarray(res.x), diagnostics)


def _solve_conic(
    problem: ConicProblem, tol: float, max_iter: int, verbose: bool, threads: int | None
) -> SolveResult:
    import clarabel

    n = problem.n_vars
    blocks: list[sparse.spmatrix] = []
    rhs: list[np.ndarray] = []
    cones_spec = []

    if problem.A_eq.shape[0]:
        blocks.append(problem.A_eq)
        rhs.append(problem.b_eq)
        cones_spec.append(clarabel.ZeroConeT(problem.A_eq.shape[0]))

    nonneg_rows: list[sparse.spmatrix] = []
    nonneg_rhs: list[np.ndarray] = []
    if problem.A_ub.shape[0]:
        nonneg_rows.append(problem.A_ub)
        nonneg_rhs.append(problem.b_ub)
    finite_ub = np.flatnonzero(np.isfinite(problem.ub))
    if finite_ub.size:
        eye = sparse.csr_matrix(
            (np.ones(finite_ub.size), (np.arange(finite_ub.size), finite_ub)), shape=(finite_ub.size, n)
        )
        nonneg_rows.append(eye)
        nonneg_rhs.append(problem.ub[finite_ub])
    finite_lb = np.flatnonzero(np.isfinite(problem.lb))
    if finite_lb.size:
        eye = sparse.csr_matrix(
            (-np.ones(finite_lb.size), (np.arange(finite_lb.size), finite_lb)), shape=(finite_lb.size, n)
        )
        nonneg_rows.append(eye)
        nonneg_rhs.append(-problem.lb[finite_lb])
    if nonneg_rows:
        stacked = sparse.vstack(nonneg_rows)
        blocks.append(stacked)
        rhs.append(np.concatenate(nonneg_rhs))
        cones_spec.append(clarabel.NonnegativeConeT(stacked.shape[0]))

    for cone in problem.cones:
        # s = b - A v in SOC(k+1): first row is the scalar side, rest the norm
        scalar = sparse.csr_matrix((-cone.c_vals, (np.zeros(cone.c_cols.size, dtype=int), cone.c_cols)), shape=(1, n))
        blocks.append(sparse.vstack([scalar, -cone.A]))
        rhs.append(np.concatenate([[cone.d], cone.b]))
        cones_spec.append(clarabel.SecondOrderConeT(cone.order))

    A = sparse.vstack(blocks).tocsc() if blocks else sparse.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    P = sparse.csc_matrix((n, n))

    def run(target: float):
        settings = clarabel.DefaultSettings()
        settings.verbose = verbose
        settings.max_iter = max_iter
        for attr in ("tol_gap_abs", "tol_gap_rel", "tol_feas"):
            if hasattr(settings, attr):
                setattr(settings, attr, target)
        if threads is not None and hasattr(settings, "max_threads"):
            settings.max_threads = threads
        solver = clarabel.DefaultSolver(P, problem.objective, A, b, cones_spec, settings)
        return solver.solve()

    solution = run(tol)
    # on data whose coefficients span several orders of magnitude the solver
    # can stall just short of a very tight target even though a run at a
    # looser target converges far below it; one relaxed retry covers that
    if str(solution.status) in ("AlmostSolved", "InsufficientProgress"):
        solution = run(10.0 * tol)
    status_map = {
        "Solved": "optimal",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostDualInfeasible": "unbounded",
    }
    raw = str(solution.status)
    status = status_map.get(raw, "numerical-failure")
    diagnostics = {
        "solver": "clarabel",
        "status": raw,
        "iterations": int(solution.iterations),
        "r_prim": float(solution.r_prim),
        "r_dual": float(solution.r_dual),
        "solve_time": float(solution.solve_time),
    }
    if status != "optimal":
        return SolveResult(status, None, None, diagnostics)
    return SolveResult(
        status, float(solution.obj_val) + problem.objective_const, np.asarray(solution.x), diagnostics
    )


# ── extensive form ─────────────────────────────────────────────────────────────


class _CooBuilder:
    def __init__(self):
        self.data: list[np.ndarray] = []
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []
        self.n_rows = 0

    def add_single(self, cols: np.ndarray, coeffs: np.ndarray, rhs: float) -> None:
        self.data.append(np.asarray(coeffs, dtype=float))
        self.cols.append(np.asarray(cols, dtype=int))
        self.rows.append(np.full(len(cols), self.n_rows))
        self.rhs.append(np.array([rhs]))
        self.n_rows += 1

    def add_block(self, colmat: np.ndarray, coefmat: np.ndarray, rhs: np.ndarray) -> None:
        n_s, k = colmat.shape
        self.data.append(coefmat.ravel())
        self.cols.append(colmat.ravel())
        self.rows.append(np.repeat(np.arange(self.n_rows, self.n_rows + n_s), k))
        self.rhs.append(np.asarray(rhs, dtype=float))
        self.n_rows += n_s

    def build(self, n_cols: int) -> tuple[sparse.csr_matrix, np.ndarray]:
        if not self.data:
            return sparse.csr_matrix((0, n_cols)), np.zeros(0)
        mat = sparse.coo_matrix(
            (np.concatenate(self.data), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.n_rows, n_cols),
        ).tocsr()
        mat.sort_indices()
        return mat, np.concatenate(self.rhs)


def assemble_extensive_form(
    model: StochModel | CompiledModel, scenarios: np.ndarray, probabilities: np.ndarray
) -> ConicProblem:
    """Scenario LP: shared first stage, one recourse copy per scenario.

    Columns: first-stage elements, then scenario-major recourse blocks.
    """
    compiled = model if isinstance(model, CompiledModel) else compile_model(model)
    omega = np.atleast_2d(np.asarray(scenarios, dtype=float))
    probs = np.asarray(probabilities, dtype=float)
    n_s = omega.shape[0]
    if omega.shape[1] != compiled.n_germs:
        raise ValueError(f"scenarios have {omega.shape[1]} columns for {compiled.n_germs} germs")
    if probs.shape != (n_s,):
        raise ValueError(f"got {probs.shape[0] if probs.ndim else 0} probabilities for {n_s} scenarios")
    if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("probabilities must be non-negative and sum to 1")

    n_x, n_z = compiled.n_first_stage, compiled.n_recourse
    n_vars = n_x + n_s * n_z
    lb = np.full(n_vars, -np.inf)
    ub = np.full(n_vars, np.inf)
    eq = _CooBuilder()
    ineq = _CooBuilder()

    def scenario_cols(row) -> np.ndarray:
        # (n_s, kx+kz) column matrix: shared x cols then per-scenario z cols
        zc = n_x + (np.arange(n_s) * n_z)[:, None] + row.z_cols[None, :]
        if row.x_cols.size:
            xc = np.broadcast_to(row.x_cols, (n_s, row.x_cols.size))
            return np.concatenate([xc, zc], axis=1)
        return zc

    def scenario_coeffs(row) -> np.ndarray:
        zco = np.broadcast_to(row.z_base, (n_s, row.z_cols.size)).copy()
        if row.z_germ.any():
            zco += omega @ row.z_germ.T
        if row.x_cols.size:
            xco = np.broadcast_to(row.x_base, (n_s, row.x_cols.size)).copy()
            if row.x_germ.any():
                xco += omega @ row.x_germ.T
            return np.concatenate([xco, zco], axis=1)
        return zco

    for row in compiled.equalities:
        if not row.has_recourse:
            # finalize() guarantees germ-free: one shared row
            if row.x_cols.size == 0:
                if abs(row.const) > 1e-9:
                    raise ValueError(f"equality {row.name!r} has no variables but constant {row.const}")
                continue
            eq.add_single(row.x_cols, row.x_base, -row.const)
        else:
            eq.add_block(scenario_cols(row), scenario_coeffs(row), -row.constants(omega))

    for row in compiled.inequalities:
        rhs_all = -row.constants(omega)
        kx, kz = row.x_cols.size, row.z_cols.size
        if kz == 0:
            rhs = float(rhs_all.min()) if row.const_germ.any() else float(-row.const)
            if kx == 0:
                if rhs < -1e-9:
                    raise ValueError(f"inequality {row.name!r} has no variables and is violated")
                continue
            if row.x_germ.any():
                ineq.add_block(scenario_cols(row), scenario_coeffs(row), rhs_all)
            elif kx == 1:
                c = row.x_base[0]
                col = row.x_cols[0]
                if c > 0:
                    ub[col] = min(ub[col], rhs / c)
                elif c < 0:
                    lb[col] = max(lb[col], rhs / c)
            else:
                ineq.add_single(row.x_cols, row.x_base, rhs)
        elif kz == 1 and kx == 0 and not row.z_germ.any() and not row.x_germ.any():
            c = row.z_base[0]
            cols = n_x + np.arange(n_s) * n_z + row.z_cols[0]
            if c > 0:
                np.minimum.at(ub, cols, rhs_all / c)
            elif c < 0:
                np.maximum.at(lb, cols, rhs_all / c)
        else:
            ineq.add_block(scenario_cols(row), scenario_coeffs(row), rhs_all)

    obj_row = compiled.objective
    mean_omega = probs @ omega if n_s else np.zeros(compiled.n_germs)
    q = np.zeros(n_vars)
    if obj_row.x_cols.size:
        q[obj_row.x_cols] += obj_row.x_base + obj_row.x_germ @ mean_omega
    if obj_row.z_cols.size:
        weights = probs[:, None] * (obj_row.z_base + omega @ obj_row.z_germ.T)
        qz = q[n_x:].reshape(n_s, n_z)
        qz[:, obj_row.z_cols] += weights
    const = obj_row.const + float(obj_row.const_germ @ mean_omega)

    A_eq, b_eq = eq.build(n_vars)
    A_ub, b_ub = ineq.build(n_vars)
    return ConicProblem(
        n_vars=n_vars,
        objective=q,
        objective_const=const,
        A_eq=A_eq,
        b_eq=b_eq,
        A_ub=A_ub,
        b_ub=b_ub,
        cones=[],
        lb=lb,
        ub=ub,
    )


# ── dump / load ────────────────────────────────────────────────────────────────


def _fmt(value: float) -> str:
    return repr(float(value))


def _matrix_lines(mat: sparse.csr_matrix, out: list[str]) -> None:
    coo = mat.tocoo()
    for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
        out.append(f"{r} {c} {_fmt(v)}")


def dumps(problem: ConicProblem) -> str:
    """Versioned line-oriented text; floats via shortest round-trip repr."""
    out = [f"{_FORMAT} {_VERSION}", f"vars {problem.n_vars}", f"obj_const {_fmt(problem.objective_const)}"]
    nz = np.flatnonzero(problem.objective)
    out.append(f"obj {nz.size}")
    for c in nz.tolist():
        out.append(f"{c} {_fmt(problem.objective[c])}")
    for label, arr, default in (("lb", problem.lb, -np.inf), ("ub", problem.ub, np.inf)):
        idx = np.flatnonzero(arr != default)
        out.append(f"{label} {idx.size}")
        for c in idx.tolist():
            out.append(f"{c} {_fmt(arr[c])}")
    for label, mat, rhs in (("eq", problem.A_eq, problem.b_eq), ("ineq", problem.A_ub, problem.b_ub)):
        out.append(f"{label} {mat.shape[0]} {mat.nnz}")
        _matrix_lines(mat, out)
        for v in rhs.tolist():
            out.append(_fmt(v))
    out.append(f"cones {len(problem.cones)}")
    for cone in problem.cones:
        if any(ch.isspace() for ch in cone.name):
            raise ValueError(f"cone name {cone.name!r} contains whitespace; not representable")
        out.append(f"cone {cone.name} {cone.A.shape[0]} {cone.A.nnz} {cone.c_cols.size} {_fmt(cone.d)}")
        _matrix_lines(cone.A, out)
        for v in cone.b.tolist():
            out.append(_fmt(v))
        for c, v in zip(cone.c_cols.tolist(), cone.c_vals.tolist()):
            out.append(f"{c} {_fmt(v)}")
    return "\n".join(out) + "\n"


def dump(problem: ConicProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(problem))


class _Reader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise ValueError("truncated problem file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, keyword: str) -> list[str]:
        parts = self.next().split()
        if not parts or parts[0] != keyword:
            raise ValueError(f"expected {keyword!r} section at line {self.pos}")
        return parts[1:]


def _read_matrix(reader: _Reader, nrows: int, nnz: int, n_vars: int) -> tuple[sparse.csr_matrix, np.ndarray]:
    ri, ci, data = [], [], []
    for _ in range(nnz):
        r, c, v = reader.next().split()
        ri.append(int(r))
        ci.append(int(c))
        data.append(float(v))
    rhs = np.array([float(reader.next()) for _ in range(nrows)])
    mat = sparse.csr_matrix((data, (ri, ci)), shape=(nrows, n_vars))
    mat.sort_indices()
    return mat, rhs


def loads(text: str) -> ConicProblem:
    reader = _Reader(text)
    header = reader.next().split()
    if header[:1] != [_FORMAT]:
        raise ValueError(f"not a conic problem file (header {header[:1]})")
    if header[1:] != [str(_VERSION)]:
        raise ValueError(f"unsupported problem format version {header[1:]}")
    n = int(reader.expect("vars")[0])
    obj_const = float(reader.expect("obj_const")[0])
    objective = np.zeros(n)
    for _ in range(int(reader.expect("obj")[0])):
        c, v = reader.next().split()
        objective[int(c)] = float(v)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    for label, arr in (("lb", lb), ("ub", ub)):
        for _ in range(int(reader.expect(label)[0])):
            c, v = reader.next().split()
            arr[int(c)] = float(v)
    eq_rows, eq_nnz = (int(t) for t in reader.expect("eq"))
    A_eq, b_eq = _read_matrix(reader, eq_rows, eq_nnz, n)
    ub_rows, ub_nnz = (int(t) for t in reader.expect("ineq"))
    A_ub, b_ub = _read_matrix(reader, ub_rows, ub_nnz, n)
    cones = []
    for _ in range(int(reader.expect("cones")[0])):
        head = reader.expect("cone")
        name, krows, annz, cnnz, d = head[0], int(head[1]), int(head[2]), int(head[3]), float(head[4])
        ri, ci, data = [], [], []
        for _ in range(annz):
            r, c, v = reader.next().split()
            ri.append(int(r))
            ci.append(int(c))
            data.append(float(v))
        A = sparse.csr_matrix((data, (ri, ci)), shape=(krows, n))
        A.sort_indices()
        b = np.array([float(reader.next()) for _ in range(krows)])
        c_cols, c_vals = [], []
        for _ in range(cnnz):
            c, v = reader.next().split()
            c_cols.append(int(c))
            c_vals.append(float(v))
        cones.append(ConeBlock(name, A, b, np.array(c_cols, dtype=int), np.array(c_vals), d))
    return ConicProblem(
        n_vars=n,
        objective=objective,
        objective_const=obj_const,
        A_eq=A_eq,
        b_eq=b_eq,
        A_ub=A_ub,
        b_ub=b_ub,
        cones=cones,
        lb=lb,
        ub=ub,
    )


def load(path) -> ConicProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())
