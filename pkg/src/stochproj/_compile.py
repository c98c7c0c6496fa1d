"""Compile model expressions into realization-affine coefficient arrays.

Every expression in the modeling layer is affine in the decisions with
coefficients affine in the germs:

    expr(x, z, omega) = (x_base + x_germ @ omega) . x[x_cols]
                      + (z_base + z_germ @ omega) . z[z_cols]
                      + const + const_germ . omega

This module flattens expressions into exactly that form once, so scenario
assembly and Monte-Carlo policy checks are plain vectorized array work.
Columns index flattened first-stage (x) and recourse (z) element spaces in
declaration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sprog import SECOND, Expression, StochModel

__all__ = ["AffineRow", "CompiledModel", "compile_model"]


@dataclass(frozen=True)
class AffineRow:
    name: str | None
    sense: str | None  # "eq", "le", or None for the objective
    epsilon: float | None
    x_cols: np.ndarray
    x_base: np.ndarray
    x_germ: np.ndarray  # (len(x_cols), n_germs)
    z_cols: np.ndarray
    z_base: np.ndarray
    z_germ: np.ndarray  # (len(z_cols), n_germs)
    const: float
    const_germ: np.ndarray  # (n_germs,)

    @property
    def has_recourse(self) -> bool:
        return self.z_cols.size > 0

    @property
    def depends_on_germs(self) -> bool:
        return bool(self.const_germ.any() or self.x_germ.any() or self.z_germ.any())

    def x_coefficients(self, omega: np.ndarray) -> np.ndarray:
        """Realized first-stage coefficients, shape omega.shape[:-1] + (kx,)."""
        return self.x_base + np.asarray(omega) @ self.x_germ.T

    def z_coefficients(self, omega: np.ndarray) -> np.ndarray:
        return self.z_base + np.asarray(omega) @ self.z_germ.T

    def constants(self, omega: np.ndarray) -> np.ndarray:
        return self.const + np.asarray(omega) @ self.const_germ

    def evaluate(self, x: np.ndarray, z: np.ndarray, omega: np.ndarray) -> np.ndarray:
        """Row values for a batch: x (n_x,), z (n, n_z), omega (n, n_germs)."""
        omega = np.asarray(omega, dtype=float)
        out = self.constants(omega)
        if self.x_cols.size:
            out = out + self.x_coefficients(omega) @ np.asarray(x)[self.x_cols]
        if self.z_cols.size:
            zsel = np.asarray(z)[:, self.z_cols]
            out = out + np.einsum("nk,nk->n", self.z_coefficients(omega), zsel)
        return out


@dataclass(frozen=True)
class CompiledModel:
    model: StochModel
    germ_names: tuple[str, ...]
    x_index: dict[tuple[str, int], int]
    z_index: dict[tuple[str, int], int]
    equalities: tuple[AffineRow, ...]
    inequalities: tuple[AffineRow, ...]
    objective: AffineRow

    @property
    def n_germs(self) -> int:
        return len(self.germ_names)

    @property
    def n_first_stage(self) -> int:
        return len(self.x_index)

    @property
    def n_recourse(self) -> int:
        return len(self.z_index)

    def germ_means(self) -> np.ndarray:
        return np.array([g.natural_mean for g in self.model.germs.values()])


def _compile_expression(
    expr: Expression,
    model: StochModel,
    germ_pos: dict[str, int],
    x_index: dict,
    z_index: dict,
    name: str | None,
    sense: str | None,
    epsilon: float | None,
) -> AffineRow:
    n_germs = len(germ_pos)
    x_acc: dict[int, np.ndarray] = {}
    z_acc: dict[int, np.ndarray] = {}
    const = 0.0
    const_germ = np.zeros(n_germs)

    def slot(acc, col):
        if col not in acc:
            acc[col] = np.zeros(1 + n_germs)  # [base, per-germ]
        return acc[col]

    for (g, v), coeff in expr.terms.items():
        if v is None:
            if g is None:
                const += coeff
            else:
                const_germ[germ_pos[g]] += coeff
            continue
        var = model.variables[v[0]]
        acc = z_acc if var.stage == SECOND else x_acc
        index = z_index if var.stage == SECOND else x_index
        entry = slot(acc, index[v])
        if g is None:
            entry[0] += coeff
        else:
            entry[1 + germ_pos[g]] += coeff

    def pack(acc):
        cols = np.array(sorted(acc), dtype=int)
        table = np.array([acc[c] for c in cols]) if len(cols) else np.zeros((0, 1 + n_germs))
        return cols, table[:, 0].copy(), table[:, 1:].copy()

    x_cols, x_base, x_germ = pack(x_acc)
    z_cols, z_base, z_germ = pack(z_acc)
    return AffineRow(name, sense, epsilon, x_cols, x_base, x_germ, z_cols, z_base, z_germ, const, const_germ)


def compile_model(model: StochModel) -> CompiledModel:
    """Flatten a finalized model into realization-affine rows."""
    if not model.finalized:
        raise ValueError("model must be finalized before compilation")
    germ_pos = {name: i for i, name in enumerate(model.germs)}
    x_index: dict[tuple[str, int], int] = {}
    z_index: dict[tuple[str, int], int] = {}
    for var in model.variables.values():
        index = z_index if var.stage == SECOND else x_index
        for flat in range(var.size):
            index[(var.name, flat)] = len(index)

    equalities, inequalities = [], []
    for con in model.constraints:
        row = _compile_expression(
            con.expression, model, germ_pos, x_index, z_index, con.name, con.sense, con.epsilon
        )
        (equalities if con.sense == "eq" else inequalities).append(row)
    objective = _compile_expression(model.objective, model, germ_pos, x_index, z_index, None, None, None)
    return CompiledModel(
        model, tuple(model.germs), x_index, z_index, tuple(equalities), tuple(inequalities), objective
    )
