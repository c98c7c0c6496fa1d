"""Declarative modeling layer for two-stage stochastic LPs.

A model couples decision variables (first stage decided before uncertainty,
second stage recourse) with independent uncertain *germs*.  Expressions are
sums of terms ``constant [* germ] [* variable]``: affine in the decision
variables for every realization, at most degree one in the germs, with
germ-times-variable bilinear terms allowed (uncertain coefficients).  Anything
beyond that (germ*germ, variable*variable) is rejected at construction, so a
model that builds is a model the projection layer can handle.

Models serialize to a versioned JSON schema with shortest-repr floats; a
dump -> load -> dump round trip is byte-identical.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .polybasis import AffineMap, Distribution, PolynomialFamily, standardize

__all__ = [
    "Constraint",
    "DecisionVariable",
    "Expression",
    "FIRST",
    "Germ",
    "ModelError",
    "ModelSummary",
    "SECOND",
    "StochModel",
    "dump_model",
    "dumps_model",
    "load_model",
    "loads_model",
]

FIRST = "first"
SECOND = "second"

_MODEL_FORMAT = "stochproj-model"
_MODEL_VERSION = 1

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ModelError(ValueError):
    """Raised for structurally invalid models or expressions."""


class _Operand:
    """Arithmetic mixin: everything coerces to Expression and delegates."""

    def __add__(self, other):
        return _as_expression(self) + other

    def __radd__(self, other):
        return _as_expression(other) + self

    def __sub__(self, other):
        return _as_expression(self) - other

    def __rsub__(self, other):
        return _as_expression(other) - self

    def __mul__(self, other):
        return _as_expression(self) * other

    def __rmul__(self, other):
        return _as_expression(other) * self

    def __truediv__(self, other):
        return _as_expression(self) / other

    def __neg__(self):
        return _as_expression(self) * -1.0

    def __pos__(self):
        return _as_expression(self)


@dataclass(frozen=True)
class Germ(_Operand):
    """One independent uncertain parameter, in natural units.

    Carries the standardizing transform and the polynomial family orthonormal
    under the standardized distribution.  In expressions a germ stands for its
    natural-unit random value.
    """

    name: str
    distribution: Distribution
    transform: AffineMap
    family: PolynomialFamily = field(repr=False)
    unit: str = ""
    allow_unused: bool = False

    @property
    def natural_mean(self) -> float:
        return self.transform.offset + self.transform.scale * self.family.measure_mean

    @property
    def natural_sd(self) -> float:
        return self.transform.scale * self.family.measure_sd


@dataclass(frozen=True, eq=False)
class DecisionVariable(_Operand):
    """Handle for one named block of scalar decision variables."""

    name: str
    stage: str
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def __getitem__(self, index) -> "VarElement":
        if self.shape == ():
            raise ModelError(f"variable {self.name!r} is scalar; use it directly")
        if isinstance(index, int):
            if len(self.shape) != 1:
                raise ModelError(f"variable {self.name!r} has shape {self.shape}; index with a tuple")
            index = (index,)
        if len(index) != len(self.shape):
            raise ModelError(f"variable {self.name!r} has shape {self.shape}; got index {index}")
        flat = 0
        for axis, (i, n) in enumerate(zip(index, self.shape)):
            if i < 0:
                i += n
            if not 0 <= i < n:
                raise ModelError(f"index {index} out of bounds for {self.name!r} with shape {self.shape}")
            flat = flat * n + i
        return VarElement(self, flat)

    def elements(self) -> Iterator["VarElement"]:
        for flat in range(self.size):
            yield VarElement(self, flat)

    def __repr__(self) -> str:
        return f"DecisionVariable({self.name!r}, {self.stage}, shape={self.shape})"


@dataclass(frozen=True)
class VarElement(_Operand):
    """One scalar component of a decision variable."""

    var: DecisionVariable
    flat: int

    @property
    def key(self) -> tuple[str, int]:
        return (self.var.name, self.flat)

    def __repr__(self) -> str:
        if self.var.shape == ():
            return self.var.name
        return f"{self.var.name}[{self.flat}]"


# Expression term key: (germ name or None, (variable name, flat index) or None).
# The (None, None) key holds the constant.
_TermKey = tuple[str | None, tuple[str, int] | None]


class Expression(_Operand):
    """Sum of ``constant [* germ] [* variable]`` terms."""

    __slots__ = ("terms",)

    def __init__(self, terms: dict[_TermKey, float] | None = None):
        self.terms = {} if terms is None else terms

    @property
    def constant(self) -> float:
        return self.terms.get((None, None), 0.0)

    def __add__(self, other):
        other = _as_expression(other)
        out = dict(self.terms)
        for key, coeff in other.terms.items():
            _accumulate(out, key, coeff)
        return Expression(out)

    def __sub__(self, other):
        return self + (_as_expression(other) * -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            scale = float(other)
            if not math.isfinite(scale):
                raise ModelError(f"non-finite coefficient {other!r}")
            if scale == 0.0:
                return Expression()
            return Expression({k: c * scale for k, c in self.terms.items()})
        other = _as_expression(other)
        out: dict[_TermKey, float] = {}
        for (g1, v1), c1 in self.terms.items():
            for (g2, v2), c2 in other.terms.items():
                if g1 is not None and g2 is not None:
                    raise ModelError(f"product has germ degree 2 via {g1!r} * {g2!r}")
                if v1 is not None and v2 is not None:
                    raise ModelError(
                        f"product of decision variables {_fmt_var(v1)} * {_fmt_var(v2)} is not linear"
                    )
                _accumulate(out, (g1 if g1 is not None else g2, v1 if v1 is not None else v2), c1 * c2)
        return Expression(out)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("can only divide an expression by a scalar")
        return self * (1.0 / float(other))

    def __repr__(self) -> str:
        if not self.terms:
            return "Expression(0)"
        parts = []
        for (g, v), c in sorted(self.terms.items(), key=_term_sort_key):
            bits = [repr(c)]
            if g is not None:
                bits.append(g)
            if v is not None:
                bits.append(_fmt_var(v))
            parts.append("*".join(bits))
        return "Expression(" + " + ".join(parts) + ")"


def _fmt_var(key: tuple[str, int]) -> str:
    return f"{key[0]}[{key[1]}]"


def _term_sort_key(item):
    (g, v), _ = item
    return (g or "", v[0] if v else "", v[1] if v else -1)


def _accumulate(terms: dict[_TermKey, float], key: _TermKey, coeff: float) -> None:
    if not math.isfinite(coeff):
        raise ModelError(f"non-finite coefficient for term {key}")
    new = terms.get(key, 0.0) + coeff
    if new == 0.0:
        terms.pop(key, None)
    else:
        terms[key] = new


def _as_expression(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        val = float(value)
        if not math.isfinite(val):
            raise ModelError(f"non-finite constant {value!r}")
        return Expression({(None, None): val} if val != 0.0 else {})
    if isinstance(value, Germ):
        return Expression({(value.name, None): 1.0})
    if isinstance(value, VarElement):
        return Expression({(None, value.key): 1.0})
    if isinstance(value, DecisionVariable):
        if value.shape != ():
            raise ModelError(f"variable {value.name!r} has shape {value.shape}; index it first")
        return Expression({(None, (value.name, 0)): 1.0})
    raise TypeError(f"cannot use {value!r} in an expression")


@dataclass(frozen=True)
class Constraint:
    """``expression = 0`` or ``expression <= 0``, optionally with its own ε."""

    name: str
    expression: Expression
    sense: str  # "eq" | "le"
    epsilon: float | None = None


@dataclass(frozen=True)
class ModelSummary:
    n_germs: int
    n_first_stage: int
    n_recourse: int
    n_equalities: int
    n_inequalities: int


class StochModel:
    """Two-stage stochastic LP under construction.

    Mutating operations raise once :meth:`finalize` has validated the model.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.germs: dict[str, Germ] = {}
        self.variables: dict[str, DecisionVariable] = {}
        self.constraints: list[Constraint] = []
        self.objective: Expression | None = None
        self._constraint_names: set[str] = set()
        self._finalized = False

    # ── construction ──────────────────────────────────────────────────────────

    def add_germ(
        self,
        name: str,
        distribution: Distribution,
        unit: str = "",
        allow_unused: bool = False,
        correlated_with: str | None = None,
    ) -> Germ:
        self._mutable()
        if correlated_with is not None:
            raise ModelError(
                "correlated germs are not supported; decorrelate upstream "
                "(e.g. a copula transform) and declare independent germs"
            )
        _check_name(name)
        if name in self.germs:
            raise ModelError(f"duplicate germ name {name!r}")
        family, transform = standardize(distribution)
        germ = Germ(name, distribution, transform, family, unit=unit, allow_unused=allow_unused)
        self.germs[name] = germ
        return germ

    def add_variable(self, name: str, stage: str, shape=(), lb=None, ub=None) -> DecisionVariable:
        self._mutable()
        _check_name(name)
        if name in self.variables:
            raise ModelError(f"duplicate variable name {name!r}")
        if stage not in (FIRST, SECOND):
            raise ModelError(f"stage must be {FIRST!r} or {SECOND!r}, got {stage!r}")
        if isinstance(shape, int):
            shape = (shape,)
        shape = tuple(int(n) for n in shape)
        if any(n <= 0 for n in shape):
            raise ModelError(f"shape must have positive extents, got {shape}")
        var = DecisionVariable(name, stage, shape)
        self.variables[name] = var
        # bounds become ordinary inequality constraints so they receive the
        # same chance-constraint treatment as any other inequality
        if lb is not None:
            for elem, bound in _broadcast_bound(var, lb):
                self.add_le(bound - elem, name=_bound_name(var, elem, "lb"))
        if ub is not None:
            for elem, bound in _broadcast_bound(var, ub):
                self.add_le(elem - bound, name=_bound_name(var, elem, "ub"))
        return var

    def add_constraint(self, expression, sense: str, name: str | None = None, epsilon: float | None = None) -> Constraint:
        self._mutable()
        if sense not in ("eq", "le"):
            raise ModelError(f"sense must be 'eq' or 'le', got {sense!r}")
        if epsilon is not None:
            if sense == "eq":
                raise ModelError("equality constraints carry no violation probability")
            if not 0.0 < epsilon < 0.5:
                raise ModelError(f"epsilon must lie in (0, 0.5), got {epsilon!r}")
        expr = _as_expression(expression)
        self._check_expression(expr)
        if name is None:
            name = f"c{len(self.constraints)}"
        if name in self._constraint_names:
            raise ModelError(f"duplicate constraint name {name!r}")
        con = Constraint(name, expr, sense, epsilon)
        self.constraints.append(con)
        self._constraint_names.add(name)
        return con

    def add_eq(self, lhs, rhs=0.0, name: str | None = None) -> Constraint:
        return self.add_constraint(_as_expression(lhs) - rhs, "eq", name=name)

    def add_le(self, lhs, rhs=0.0, name: str | None = None, epsilon: float | None = None) -> Constraint:
        return self.add_constraint(_as_expression(lhs) - rhs, "le", name=name, epsilon=epsilon)

    def add_ge(self, lhs, rhs=0.0, name: str | None = None, epsilon: float | None = None) -> Constraint:
        return self.add_constraint(_as_expression(rhs) - lhs, "le", name=name, epsilon=epsilon)

    def set_objective(self, expression) -> None:
        """Cost to minimize in expectation."""
        self._mutable()
        expr = _as_expression(expression)
        self._check_expression(expr)
        self.objective = expr

    # ── validation ────────────────────────────────────────────────────────────

    def finalize(self) -> "StochModel":
        """Validate and freeze the model; raises ModelError on violations."""
        if self._finalized:
            return self
        if self.objective is None:
            raise ModelError("objective not set")
        referenced: set[str] = set()
        for expr in self._expressions():
            for g, _ in expr.terms:
                if g is not None:
                    referenced.add(g)
        for germ in self.germs.values():
            if germ.name not in referenced and not germ.allow_unused:
                raise ModelError(
                    f"germ {germ.name!r} is never referenced; declare allow_unused if intentional"
                )
        for con in self.constraints:
            if con.sense != "eq":
                continue
            has_germ = any(g is not None for g, _ in con.expression.terms)
            has_recourse = any(
                v is not None and self.variables[v[0]].stage == SECOND for _, v in con.expression.terms
            )
            if has_germ and not has_recourse:
                raise ModelError(
                    f"equality {con.name!r} depends on germs but contains no recourse "
                    "variable, so it cannot hold for every realization"
                )
        self._finalized = True
        return self

    @property
    def finalized(self) -> bool:
        return self._finalized

    def summary(self) -> ModelSummary:
        n_first = sum(v.size for v in self.variables.values() if v.stage == FIRST)
        n_second = sum(v.size for v in self.variables.values() if v.stage == SECOND)
        n_eq = sum(1 for c in self.constraints if c.sense == "eq")
        return ModelSummary(len(self.germs), n_first, n_second, n_eq, len(self.constraints) - n_eq)

    # ── helpers ───────────────────────────────────────────────────────────────

    def _expressions(self) -> Iterator[Expression]:
        for con in self.constraints:
            yield con.expression
        if self.objective is not None:
            yield self.objective

    def _check_expression(self, expr: Expression) -> None:
        for g, v in expr.terms:
            if g is not None and g not in self.germs:
                raise ModelError(f"expression references unknown germ {g!r}")
            if v is not None:
                var = self.variables.get(v[0])
                if var is None:
                    raise ModelError(f"expression references unknown variable {v[0]!r}")
                if not 0 <= v[1] < var.size:
                    raise ModelError(f"index {v[1]} out of bounds for variable {v[0]!r}")

    def _mutable(self) -> None:
        if self._finalized:
            raise ModelError("model is finalized and immutable")

    def __repr__(self) -> str:
        s = self.summary()
        return (
            f"StochModel({self.name!r}, germs={s.n_germs}, first={s.n_first_stage}, "
            f"recourse={s.n_recourse}, eq={s.n_equalities}, ineq={s.n_inequalities})"
        )


def _bound_name(var: DecisionVariable, elem: VarElement, side: str) -> str:
    if var.shape == ():
        return f"{var.name}_{side}"
    return f"{var.name}_{side}[{elem.flat}]"


def _broadcast_bound(var: DecisionVariable, bound) -> Iterable[tuple[VarElement, float]]:
    if isinstance(bound, (int, float)):
        values = [float(bound)] * var.size
    else:
        values = [float(b) for b in _flatten(bound)]
        if len(values) != var.size:
            raise ModelError(f"bound for {var.name!r} has {len(values)} entries, expected {var.size}")
    return zip(var.elements(), values)


def _flatten(nested) -> Iterator[float]:
    for item in nested:
        if isinstance(item, (list, tuple)):
            yield from _flatten(item)
        else:
            yield item


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise ModelError(f"name must be a plain identifier, got {name!r}")


# ── serialization ──────────────────────────────────────────────────────────────


def dumps_model(model: StochModel) -> str:
    """Versioned JSON text; floats use shortest round-trip repr."""
    doc = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "name": model.name,
        "germs": [
            {
                "name": g.name,
                "kind": g.distribution.kind,
                "params": list(g.distribution.params),
                "unit": g.unit,
                "allow_unused": g.allow_unused,
            }
            for g in model.germs.values()
        ],
        "variables": [
            {"name": v.name, "stage": v.stage, "shape": list(v.shape)} for v in model.variables.values()
        ],
        "constraints": [
            {
                "name": c.name,
                "sense": c.sense,
                "epsilon": c.epsilon,
                **_expression_doc(c.expression),
            }
            for c in model.constraints
        ],
        "objective": _expression_doc(model.objective) if model.objective is not None else None,
    }
    return json.dumps(doc, indent=1)


def dump_model(model: StochModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))
        fh.write("\n")


def _expression_doc(expr: Expression) -> dict:
    terms = []
    for (g, v), coeff in sorted(expr.terms.items(), key=_term_sort_key):
        if g is None and v is None:
            continue
        terms.append(
            {
                "coeff": coeff,
                "germ": g,
                "var": v[0] if v else None,
                "index": v[1] if v else None,
            }
        )
    return {"constant": expr.constant, "terms": terms}


def loads_model(text: str) -> StochModel:
    doc = json.loads(text)
    if doc.get("format") != _MODEL_FORMAT:
        raise ModelError(f"not a model file (format {doc.get('format')!r})")
    if doc.get("version") != _MODEL_VERSION:
        raise ModelError(f"unsupported model schema version {doc.get('version')!r}")
    model = StochModel(doc.get("name", "model"))
    for g in doc["germs"]:
        dist = Distribution(g["kind"], tuple(float(p) for p in g["params"]))
        if dist.kind not in ("normal", "uniform", "gamma", "beta"):
            raise ModelError(f"unknown distribution kind {dist.kind!r}")
        model.add_germ(g["name"], dist, unit=g.get("unit", ""), allow_unused=g.get("allow_unused", False))
    for v in doc["variables"]:
        model.add_variable(v["name"], v["stage"], tuple(v["shape"]))
    for c in doc["constraints"]:
        model.add_constraint(
            _expression_from_doc(model, c), c["sense"], name=c["name"], epsilon=c["epsilon"]
        )
    if doc.get("objective") is not None:
        model.set_objective(_expression_from_doc(model, doc["objective"]))
    return model


def load_model(path) -> StochModel:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_model(fh.read())


def _expression_from_doc(model: StochModel, doc: dict) -> Expression:
    terms: dict[_TermKey, float] = {}
    const = float(doc.get("constant", 0.0))
    if const != 0.0:
        terms[(None, None)] = const
    for t in doc["terms"]:
        var = (t["var"], int(t["index"])) if t.get("var") is not None else None
        _accumulate(terms, (t.get("germ"), var), float(t["coeff"]))
    return Expression(terms)
