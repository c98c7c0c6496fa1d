"""Orthonormal polynomial families matched to standard probability measures.

Each supported marginal distribution maps to the classical family that is
orthogonal under it (normal -> probabilists' Hermite, uniform -> Legendre,
gamma -> generalized Laguerre, beta -> Jacobi).  Families are represented by
the monic three-term recurrence coefficients (a_k, b_k) of the *standardized*
measure, with b_0 = 1 because every measure here is a probability measure:

    p_{k+1}(x) = (x - a_k) p_k(x) - b_k p_{k-1}(x)

Orthonormal values follow from the equivalent normalized recurrence, and
Gauss rules come from the Golub-Welsch eigen-decomposition of the symmetric
tridiagonal recurrence matrix, so an n-node rule integrates polynomials up to
degree 2n-1 exactly and its weights sum to one (the density is part of the
measure, never a separate factor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "AffineMap",
    "Distribution",
    "PolynomialFamily",
    "QuadratureRule",
    "eval",
    "gauss_rule",
    "inner_product",
    "standardize",
]

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Distribution:
    """Marginal distribution of one germ, in natural units.

    ``kind`` is one of ``normal | uniform | gamma | beta``; ``params`` is the
    canonical parameter tuple for that kind (see the constructors).  Use the
    constructors, not the raw dataclass, so validation runs.
    """

    kind: str
    params: tuple[float, ...]

    @staticmethod
    def normal(mean: float, sd: float) -> "Distribution":
        _require(sd > 0.0, f"normal sd must be positive, got {sd!r}")
        return Distribution("normal", (float(mean), float(sd)))

    @staticmethod
    def uniform(lower: float, upper: float) -> "Distribution":
        _require(upper > lower, f"uniform needs upper > lower, got [{lower!r}, {upper!r}]")
        return Distribution("uniform", (float(lower), float(upper)))

    @staticmethod
    def uniform_mean_sd(mean: float, sd: float) -> "Distribution":
        """Uniform given mean and standard deviation (half-width sd*sqrt(3))."""
        _require(sd > 0.0, f"uniform sd must be positive, got {sd!r}")
        half = sd * _SQRT3
        return Distribution.uniform(mean - half, mean + half)

    @staticmethod
    def gamma(shape: float, scale: float = 1.0) -> "Distribution":
        _require(shape > 0.0, f"gamma shape must be positive, got {shape!r}")
        _require(scale > 0.0, f"gamma scale must be positive, got {scale!r}")
        return Distribution("gamma", (float(shape), float(scale)))

    @staticmethod
    def beta(alpha: float, beta: float, lower: float = 0.0, upper: float = 1.0) -> "Distribution":
        _require(alpha > 0.0 and beta > 0.0, f"beta shapes must be positive, got {alpha!r}, {beta!r}")
        _require(upper > lower, f"beta needs upper > lower, got [{lower!r}, {upper!r}]")
        return Distribution("beta", (float(alpha), float(beta), float(lower), float(upper)))

    @property
    def mean(self) -> float:
        if self.kind == "normal":
            return self.params[0]
        if self.kind == "uniform":
            lo, hi = self.params
            return 0.5 * (lo + hi)
        if self.kind == "gamma":
            k, scale = self.params
            return k * scale
        a, b, lo, hi = self.params
        return lo + (hi - lo) * a / (a + b)

    @property
    def sd(self) -> float:
        if self.kind == "normal":
            return self.params[1]
        if self.kind == "uniform":
            lo, hi = self.params
            return (hi - lo) / (2.0 * _SQRT3)
        if self.kind == "gamma":
            k, scale = self.params
            return math.sqrt(k) * scale
        a, b, lo, hi = self.params
        return (hi - lo) * math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0)))

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "normal":
            return (-math.inf, math.inf)
        if self.kind == "uniform":
            return (self.params[0], self.params[1])
        if self.kind == "gamma":
            return (0.0, math.inf)
        return (self.params[2], self.params[3])

    def _frozen(self):
        """Matching scipy.stats frozen distribution (natural units)."""
        if self.kind == "normal":
            mean, sd = self.params
            return stats.norm(loc=mean, scale=sd)
        if self.kind == "uniform":
            lo, hi = self.params
            return stats.uniform(loc=lo, scale=hi - lo)
        if self.kind == "gamma":
            k, scale = self.params
            return stats.gamma(k, scale=scale)
        a, b, lo, hi = self.params
        return stats.beta(a, b, loc=lo, scale=hi - lo)

    def ppf(self, q: np.ndarray) -> np.ndarray:
        """Inverse CDF in natural units; quantiles clipped away from {0, 1}."""
        q = np.clip(np.asarray(q, dtype=float), 1e-15, 1.0 - 1e-16)
        return self._frozen().ppf(q)

    def __repr__(self) -> str:  # stable, short
        inner = ", ".join(repr(p) for p in self.params)
        return f"Distribution.{self.kind}({inner})"


@dataclass(frozen=True)
class AffineMap:
    """Affine map from the standardized germ to natural units: x = offset + scale*y."""

    offset: float
    scale: float

    def __post_init__(self) -> None:
        _require(self.scale > 0.0, f"affine scale must be positive, got {self.scale!r}")

    def to_natural(self, y):
        return self.offset + self.scale * np.asarray(y, dtype=float)

    def to_standard(self, x):
        return (np.asarray(x, dtype=float) - self.offset) / self.scale


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss rule for a probability measure: weights are positive and sum to 1."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return self.nodes.size

    def integrate(self, values: np.ndarray) -> float:
        """Expectation of a function given its values at the nodes."""
        return float(np.dot(self.weights, values))


class PolynomialFamily:
    """One orthonormal family, its recurrence, and cached Gauss rules.

    ``max_degree`` bounds both evaluation degree and rule size (an n-node rule
    needs recurrence rows up to n-1); requests beyond it raise ValueError
    rather than silently extending the recurrence.
    """

    def __init__(self, name: str, alphas: np.ndarray, betas: np.ndarray):
        # betas[0] is the measure's total mass, 1 by construction here.
        self.name = name
        self._a = np.asarray(alphas, dtype=float)
        self._b = np.asarray(betas, dtype=float)
        self._a.setflags(write=False)
        self._b.setflags(write=False)
        if self._b[0] != 1.0:
            raise ValueError(f"{name}: probability measure must have unit mass, got b0={self._b[0]!r}")
        if np.any(self._b[1:] <= 0.0):
            raise ValueError(f"{name}: recurrence betas must be positive")
        self._rules: dict[int, QuadratureRule] = {}

    @property
    def max_degree(self) -> int:
        return self._a.size - 1

    @property
    def measure_mean(self) -> float:
        """Mean of the standardized measure (equals a_0)."""
        return float(self._a[0])

    @property
    def measure_sd(self) -> float:
        """Standard deviation of the standardized measure (equals sqrt(b_1))."""
        return float(math.sqrt(self._b[1]))

    def eval_table(self, max_degree: int, points: np.ndarray) -> np.ndarray:
        """Orthonormal values, shape (max_degree+1,) + points.shape."""
        if max_degree < 0:
            raise ValueError(f"degree must be non-negative, got {max_degree}")
        if max_degree > self.max_degree:
            raise ValueError(
                f"{self.name}: degree {max_degree} beyond constructed range {self.max_degree}"
            )
        x = np.asarray(points, dtype=float)
        table = np.empty((max_degree + 1,) + x.shape, dtype=float)
        table[0] = 1.0
        if max_degree == 0:
            return table
        c = np.sqrt(self._b)  # c[k] = sqrt(b_k)
        table[1] = (x - self._a[0]) / c[1]
        for k in range(1, max_degree):
            table[k + 1] = ((x - self._a[k]) * table[k] - c[k] * table[k - 1]) / c[k + 1]
        return table

    def gauss_rule(self, n: int) -> QuadratureRule:
        """n-node Gauss rule (cached); exact for polynomial degree <= 2n-1."""
        if n < 1:
            raise ValueError(f"rule size must be positive, got {n}")
        if n - 1 > self.max_degree:
            raise ValueError(f"{self.name}: {n}-node rule beyond constructed range {self.max_degree}")
        rule = self._rules.get(n)
        if rule is None:
            if n == 1:
                nodes = np.array([self._a[0]])
                weights = np.array([1.0])
            else:
                nodes, vectors = eigh_tridiagonal(self._a[:n], np.sqrt(self._b[1:n]))
                weights = vectors[0] ** 2  # times unit mass b0
            rule = QuadratureRule(nodes, weights)
            self._rules[n] = rule
        return rule

    def __repr__(self) -> str:
        return f"PolynomialFamily({self.name!r}, max_degree={self.max_degree})"


# ── family constructors (monic recurrences of the standardized measures) ──────

_DEFAULT_DEPTH = 40


def hermite_family(max_degree: int = _DEFAULT_DEPTH) -> PolynomialFamily:
    """Probabilists' Hermite: orthonormal under N(0, 1)."""
    k = np.arange(max_degree + 1, dtype=float)
    betas = k.copy()
    betas[0] = 1.0
    return PolynomialFamily("hermite", np.zeros(max_degree + 1), betas)


def legendre_family(max_degree: int = _DEFAULT_DEPTH) -> PolynomialFamily:
    """Legendre: orthonormal under uniform on [-1, 1]."""
    k = np.arange(max_degree + 1, dtype=float)
    betas = np.empty(max_degree + 1)
    betas[0] = 1.0
    betas[1:] = k[1:] ** 2 / (4.0 * k[1:] ** 2 - 1.0)
    return PolynomialFamily("legendre", np.zeros(max_degree + 1), betas)


def laguerre_family(shape: float, max_degree: int = _DEFAULT_DEPTH) -> PolynomialFamily:
    """Generalized Laguerre: orthonormal under gamma(shape, 1) on [0, inf)."""
    _require(shape > 0.0, f"gamma shape must be positive, got {shape!r}")
    n = np.arange(max_degree + 1, dtype=float)
    alphas = 2.0 * n + shape
    betas = n * (n + shape - 1.0)
    betas[0] = 1.0
    return PolynomialFamily(f"laguerre({shape!r})", alphas, betas)


def jacobi_family(alpha_shape: float, beta_shape: float, max_degree: int = _DEFAULT_DEPTH) -> PolynomialFamily:
    """Jacobi: orthonormal under beta(alpha_shape, beta_shape) on [0, 1].

    Classical Jacobi weight exponents on [-1, 1] are A = beta_shape - 1 (at +1
    ... the (1-u) side) and B = alpha_shape - 1; the recurrence is then mapped
    to [0, 1] via u = 2x - 1 (monic transform: a -> (a+1)/2, b -> b/4).
    """
    _require(alpha_shape > 0.0 and beta_shape > 0.0, "beta shapes must be positive")
    A = beta_shape - 1.0
    B = alpha_shape - 1.0
    n = np.arange(max_degree + 1, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        alphas = (B**2 - A**2) / ((2.0 * n + A + B) * (2.0 * n + A + B + 2.0))
        betas = (
            4.0 * n * (n + A) * (n + B) * (n + A + B)
            / ((2.0 * n + A + B) ** 2 * (2.0 * n + A + B + 1.0) * (2.0 * n + A + B - 1.0))
        )
    alphas[0] = (B - A) / (A + B + 2.0)  # mean of the measure; general formula can hit 0/0
    if max_degree >= 1:
        # n=1 after cancelling the (1+A+B) factor, which is 0 when A+B = -1
        betas[1] = 4.0 * (1.0 + A) * (1.0 + B) / ((2.0 + A + B) ** 2 * (3.0 + A + B))
    betas[0] = 1.0
    return PolynomialFamily(
        f"jacobi({alpha_shape!r},{beta_shape!r})",
        (alphas + 1.0) / 2.0,
        np.concatenate(([1.0], betas[1:] / 4.0)),
    )


# ── module-level ops ───────────────────────────────────────────────────────────


def standardize(dist: Distribution) -> tuple[PolynomialFamily, AffineMap]:
    """Family orthonormal under the standardized version of ``dist`` plus the
    affine map taking standardized values to natural units."""
    if dist.kind == "normal":
        mean, sd = dist.params
        return hermite_family(), AffineMap(mean, sd)
    if dist.kind == "uniform":
        lo, hi = dist.params
        return legendre_family(), AffineMap(0.5 * (lo + hi), 0.5 * (hi - lo))
    if dist.kind == "gamma":
        k, scale = dist.params
        return laguerre_family(k), AffineMap(0.0, scale)
    if dist.kind == "beta":
        a, b, lo, hi = dist.params
        return jacobi_family(a, b), AffineMap(lo, hi - lo)
    raise ValueError(f"unknown distribution kind {dist.kind!r}")


def eval(family: PolynomialFamily, degree: int, point) -> float | np.ndarray:
    """Orthonormal polynomial of ``degree`` at ``point`` (vectorized)."""
    table = family.eval_table(degree, np.asarray(point, dtype=float))
    out = table[degree]
    return float(out) if out.ndim == 0 else out


def gauss_rule(family: PolynomialFamily, n: int) -> QuadratureRule:
    return family.gauss_rule(n)


def inner_product(family: PolynomialFamily, deg_a: int, deg_b: int) -> float:
    """<psi_a, psi_b> under the family's measure, by a minimal exact rule."""
    if deg_a < 0 or deg_b < 0:
        raise ValueError("degrees must be non-negative")
    n = _rule_size_for_degree(deg_a + deg_b)
    rule = family.gauss_rule(n)
    table = family.eval_table(max(deg_a, deg_b), rule.nodes)
    return rule.integrate(table[deg_a] * table[deg_b])


def _rule_size_for_degree(degree: int) -> int:
    """Nodes needed for exactness on polynomials of the given degree."""
    return max(1, math.ceil((degree + 1) / 2))


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)
