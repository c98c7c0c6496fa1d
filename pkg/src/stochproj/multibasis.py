"""Multivariate orthonormal bases over independent germs.

The basis is the tensor product of each germ's univariate family, truncated
to total degree: A = {alpha : sum(alpha) <= max_degree}.  Index sets use
graded lexicographic order (grade ascending, descending-lex within a grade),
so the constant multi-index is always position 0, the degree-one index of
germ g is position 1+g, and coefficient vectors read mean/variance directly.

The triple-product tensor M[z, h, a] = <Psi_z Psi_h, Psi_a> factorizes over
germs, so it is assembled from univariate Gauss rules — no multivariate grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .sprog import Germ

__all__ = [
    "MultiIndexBasis",
    "build_basis",
    "build_index_set",
    "cardinality",
    "coupling_matrix",
    "eval_all",
    "eval_basis",
    "moments",
    "triple_tensor",
]


def cardinality(n_germs: int, max_degree: int) -> int:
    return math.comb(n_germs + max_degree, max_degree)


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def build_index_set(n_germs: int, max_degree: int) -> list[tuple[int, ...]]:
    """All multi-indices with total degree <= max_degree, graded-lex order."""
    if n_germs < 0:
        raise ValueError(f"germ count must be non-negative, got {n_germs}")
    if max_degree < 0:
        raise ValueError(f"degree must be non-negative, got {max_degree}")
    if n_germs == 0:
        # degenerate deterministic basis: only the constant mode
        return [()]
    indices: list[tuple[int, ...]] = []
    for grade in range(max_degree + 1):
        indices.extend(_compositions(grade, n_germs))
    return indices


@dataclass(frozen=True)
class MultiIndexBasis:
    """Total-degree tensor basis bound to an ordered germ list."""

    germs: tuple[Germ, ...]
    max_degree: int
    indices: tuple[tuple[int, ...], ...]
    _positions: dict = field(repr=False, compare=False)

    @property
    def cardinality(self) -> int:
        return len(self.indices)

    @property
    def n_germs(self) -> int:
        return len(self.germs)

    def index_of(self, alpha: Sequence[int]) -> int:
        try:
            return self._positions[tuple(alpha)]
        except KeyError:
            raise ValueError(f"multi-index {tuple(alpha)} not in basis") from None

    def unit_index(self, germ_pos: int) -> int:
        """Position of the degree-one multi-index of germ `germ_pos`."""
        alpha = [0] * self.n_germs
        alpha[germ_pos] = 1
        return self.index_of(alpha)


def build_basis(germs: Sequence[Germ], max_degree: int) -> MultiIndexBasis:
    germs = tuple(germs)
    indices = tuple(build_index_set(len(germs), max_degree))
    positions = {alpha: k for k, alpha in enumerate(indices)}
    return MultiIndexBasis(germs, max_degree, indices, positions)


def eval_basis(basis: MultiIndexBasis, alpha: Sequence[int], y: Sequence[float]) -> float:
    """Psi_alpha(y) for one standardized realization y (one value per germ)."""
    alpha = tuple(alpha)
    if len(alpha) != basis.n_germs:
        raise ValueError(f"multi-index has {len(alpha)} entries for {basis.n_germs} germs")
    if len(y) != basis.n_germs:
        raise ValueError(f"realization has {len(y)} entries for {basis.n_germs} germs")
    if alpha not in basis._positions:
        raise ValueError(f"multi-index {alpha} not in basis")
    out = 1.0
    for germ, deg, yi in zip(basis.germs, alpha, y):
        if deg:
            out *= float(germ.family.eval_table(deg, np.asarray(yi))[deg])
    return out


def eval_all(basis: MultiIndexBasis, points: np.ndarray) -> np.ndarray:
    """Matrix of basis values, shape (n_points, |A|).

    `points` holds standardized germ realizations, shape (n_points, n_germs).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != basis.n_germs:
        raise ValueError(f"points have {pts.shape[1]} columns for {basis.n_germs} germs")
    degrees = np.array(basis.indices)  # (|A|, n_germs)
    out = np.ones((pts.shape[0], basis.cardinality))
    for i, germ in enumerate(basis.germs):
        top = int(degrees[:, i].max())
        if top == 0:
            continue
        table = germ.family.eval_table(top, pts[:, i])  # (top+1, n_points)
        out *= table[degrees[:, i]].T
    return out


_SPARSE_EPS = 1e-12


def triple_tensor(basis: MultiIndexBasis, n_nodes: int | None = None) -> dict[tuple[int, int, int], float]:
    """Sparse {(z, h, a): <Psi_z Psi_h, Psi_a>}, symmetric in all three slots.

    Entries with |M| <= 1e-12 are quadrature round-off of exact zeros and are
    dropped.  The integrand has degree up to 3*max_degree per germ, so the
    univariate rules need ceil((3*max_degree+1)/2) nodes; passing fewer via
    `n_nodes` is rejected.
    """
    need = max(1, math.ceil((3 * basis.max_degree + 1) / 2))
    if n_nodes is None:
        n_nodes = need
    elif n_nodes < need:
        raise ValueError(f"{n_nodes}-node rules are exact only to degree {2 * n_nodes - 1}; need {need} nodes")

    degrees = np.array(basis.indices)
    k = basis.cardinality
    # univariate triple products per germ: m[p, q, r] over its Gauss rule
    unis = []
    for germ in basis.germs:
        rule = germ.family.gauss_rule(n_nodes)
        table = germ.family.eval_table(basis.max_degree, rule.nodes)  # (d+1, n)
        weighted = table * rule.weights
        unis.append(np.einsum("pn,qn,rn->pqr", weighted, table, table))

    tensor: dict[tuple[int, int, int], float] = {}
    for z in range(k):
        slab = np.ones((k, k))
        for i, uni in enumerate(unis):
            d = degrees[:, i]
            slab *= uni[degrees[z, i]][np.ix_(d, d)]
        rows, cols = np.nonzero(np.abs(slab) > _SPARSE_EPS)
        for h, a in zip(rows.tolist(), cols.tolist()):
            tensor[(z, h, a)] = slab[h, a]
    return tensor


def coupling_matrix(basis: MultiIndexBasis, tensor: dict, germ_pos: int) -> np.ndarray:
    """Dense T[h, a] = <psi_1 of germ `germ_pos` * Psi_h, Psi_a>."""
    unit = basis.unit_index(germ_pos)
    k = basis.cardinality
    out = np.zeros((k, k))
    for (z, h, a), value in tensor.items():
        if z == unit:
            out[h, a] = value
    return out


def moments(coeffs: np.ndarray) -> tuple[float, float]:
    """(mean, variance) of the expansion with the given coefficient vector."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("expected a non-empty coefficient vector")
    return float(c[0]), float(np.dot(c[1:], c[1:]))
