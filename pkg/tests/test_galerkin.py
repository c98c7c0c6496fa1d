"""Projection layer: recourse expansion, Galerkin rows, cones, policies."""

import itertools
import math

import numpy as np
import pytest

from stochproj.polybasis import Distribution
from stochproj.sprog import FIRST, SECOND, StochModel
from stochproj.multibasis import build_basis, eval_basis
from stochproj.galerkin import (
    CoefficientLayout,
    ProjectionError,
    ProjectionSettings,
    RecoursePolicy,
    evaluate_policy,
    expand_recourse,
    project_equality,
    project_inequality,
    project_model,
    project_objective,
    recover_policy,
)


def _basis_for(model, degree):
    return build_basis(list(model.germs.values()), degree)


def _quadrature_rows(model, basis, expr, column_values, n_nodes=8):
    """Oracle: <expr(x, z(y), y), Psi_alpha> by tensor-grid Gauss quadrature.

    column_values assigns a number to every layout column; recourse variables
    are read as their expansions z(y) = sum_eta ztilde_eta Psi_eta(y).
    """
    layout = CoefficientLayout(model, basis)
    germs = basis.germs
    rules = [g.family.gauss_rule(n_nodes) for g in germs]
    grids = list(itertools.product(*[range(n_nodes)] * len(germs))) or [()]
    out = np.zeros(basis.cardinality)
    for combo in grids:
        std = [rules[i].nodes[j] for i, j in enumerate(combo)]
        weight = math.prod(rules[i].weights[j] for i, j in enumerate(combo))
        natural = {
            g.name: g.transform.offset + g.transform.scale * std[i] for i, g in enumerate(germs)
        }
        psis = [eval_basis(basis, alpha, std) for alpha in basis.indices]
        value = 0.0
        for (g, v), coeff in expr.terms.items():
            factor = coeff * (natural[g] if g else 1.0)
            if v is None:
                value += factor
                continue
            var = model.variables[v[0]]
            if var.stage == SECOND:
                zval = sum(
                    column_values[layout.column(v[0], v[1], mode)] * psis[mode]
                    for mode in range(basis.cardinality)
                )
                value += factor * zval
            else:
                value += factor * column_values[layout.column(v[0], v[1])]
        for k in range(basis.cardinality):
            out[k] += weight * value * psis[k]
    return out


def _apply_rows(rows, column_values):
    return np.array([sum(c * column_values[col] for col, c in cols.items()) + const for _, cols, const in rows])


# ── settings ───────────────────────────────────────────────────────────────────


class TestSettings:
    def test_default_lambda_is_pinned(self):
        s = ProjectionSettings()
        assert s.lam == 1.645
        assert s.epsilon == 0.05
        assert s.rule == "gaussian"
        assert not s.allow_truncation

    def test_gaussian_epsilon_to_lambda(self):
        s = ProjectionSettings.for_epsilon(0.05)
        assert s.lam == pytest.approx(1.6448536269514722, abs=1e-12)

    def test_cantelli_epsilon_to_lambda(self):
        s = ProjectionSettings.for_epsilon(0.05, rule="cantelli")
        assert s.lam == pytest.approx(math.sqrt(19.0), abs=1e-12)

    def test_per_constraint_override(self):
        s = ProjectionSettings()
        assert s.lambda_for(None) == 1.645
        assert s.lambda_for(0.01) == pytest.approx(2.3263478740408408, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ProjectionError):
            ProjectionSettings(lam=0.0)
        with pytest.raises(ProjectionError):
            ProjectionSettings(rule="bonferroni")
        with pytest.raises(ProjectionError):
            ProjectionSettings(epsilon=0.6)
        with pytest.raises(ProjectionError):
            ProjectionSettings.for_epsilon(0.0)


# ── recourse expansion / layout ────────────────────────────────────────────────


class TestExpandRecourse:
    def _model(self, n_germs=8, recourse_shape=()):
        m = StochModel()
        for i in range(n_germs):
            m.add_germ(f"xi{i}", Distribution.normal(0.0, 1.0))
        x = m.add_variable("x", FIRST)
        z = m.add_variable("z", SECOND, recourse_shape)
        germs = list(m.germs.values())
        elems = list(z.elements()) if recourse_shape else [z]
        expr = x
        for i, e in enumerate(elems):
            m.add_eq(e - germs[i % n_germs], 0.0, name=f"pin{i}")
            expr = expr + e
        for g in germs:  # keep every germ referenced
            expr = expr + 0.001 * g
        m.set_objective(expr)
        return m.finalize()

    def test_scalar_recourse_nine_modes(self):
        m = self._model()
        layout = expand_recourse(m, _basis_for(m, 1))
        assert layout.cardinality == 9
        assert layout.n_columns == 1 + 9
        assert layout.n_first_stage == 1

    def test_first_stage_single_column(self):
        m = self._model()
        layout = expand_recourse(m, _basis_for(m, 1))
        assert layout.column("x") == 0
        with pytest.raises(ProjectionError, match="constant mode"):
            layout.column("x", 0, 1)

    def test_profile_recourse_216_columns(self):
        m = self._model(recourse_shape=(24,))
        layout = expand_recourse(m, _basis_for(m, 1))
        assert layout.n_columns - layout.n_first_stage == 216

    def test_unfinalized_rejected(self):
        m = StochModel()
        m.add_germ("xi", Distribution.normal(0.0, 1.0))
        with pytest.raises(ProjectionError, match="finalized"):
            expand_recourse(m, build_basis(list(m.germs.values()), 1))

    def test_germ_mismatch_rejected(self):
        m = self._model(n_germs=2)
        other = StochModel()
        other.add_germ("xi0", Distribution.normal(0.0, 1.0))
        other.add_germ("xi1", Distribution.normal(0.0, 1.0))
        foreign = build_basis(list(other.germs.values()), 1)
        with pytest.raises(ProjectionError, match="germs"):
            expand_recourse(m, foreign)

    def test_column_names_stable(self):
        m = self._model(n_germs=2)
        layout = expand_recourse(m, _basis_for(m, 1))
        names = layout.column_names()
        assert names[0] == "x"
        assert names[1] == "z@0,0"
        assert names[2] == "z@1,0"


# ── equality projection ────────────────────────────────────────────────────────


class TestProjectEquality:
    def test_two_recourse_identity(self):
        m = StochModel()
        m.add_germ("xi", Distribution.normal(0.0, 1.0))
        u = m.add_variable("u", SECOND)
        v = m.add_variable("v", SECOND)
        con = m.add_eq(u + v, 0.0, name="pair")
        m.add_eq(u - m.germs["xi"], 0.0, name="pin")
        m.set_objective(u + v)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        rows = project_equality(m, basis, con)
        assert len(rows) == basis.cardinality
        for mode, (label, cols, const) in enumerate(rows):
            assert label == ("pair", mode)
            assert const == 0.0
            assert cols == {layout.column("u", 0, mode): 1.0, layout.column("v", 0, mode): 1.0}

    def test_deterministic_pin(self):
        m = StochModel()
        m.add_germ("xi", Distribution.normal(0.0, 1.0), allow_unused=True)
        u = m.add_variable("u", SECOND)
        con = m.add_eq(u, 7.0, name="pin")
        m.set_objective(u * 1.0)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        rows = project_equality(m, basis, con)
        assert rows[0][1] == {layout.column("u", 0, 0): 1.0}
        assert rows[0][2] == -7.0
        assert rows[1][1] == {layout.column("u", 0, 1): 1.0}
        assert rows[1][2] == 0.0

    def test_bilinear_first_stage_rows(self):
        # germ ~ N(0, sigma) times first-stage w, plus recourse u
        sigma = 0.4
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(0.0, sigma))
        w = m.add_variable("w", FIRST)
        u = m.add_variable("u", SECOND)
        con = m.add_eq(xi * w + u, 0.0, name="couple")
        m.set_objective(w + u)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        rows = project_equality(m, basis, con)
        # mode 0: u_0 = 0 (germ mean is zero)
        assert rows[0][1] == {layout.column("u", 0, 0): 1.0}
        # mode (1): sigma * w + u_(1) = 0
        assert rows[1][1] == {
            layout.column("w"): pytest.approx(sigma),
            layout.column("u", 0, 1): 1.0,
        }

    def test_nonzero_mean_germ_splits(self):
        m = StochModel()
        xi = m.add_germ("xi", Distribution.uniform(4.0, 10.0))  # mean 7, sd 6/sqrt(12)
        z = m.add_variable("z", SECOND)
        con = m.add_eq(z - xi, 0.0, name="track")
        m.set_objective(z * 1.0)
        m.finalize()
        basis = _basis_for(m, 1)
        rows = project_equality(m, basis, con)
        assert rows[0][2] == pytest.approx(-7.0)
        assert rows[1][2] == pytest.approx(-6.0 / math.sqrt(12.0), abs=1e-12)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_rows_match_quadrature_oracle(self, degree):
        m = StochModel()
        xi = m.add_germ("xi", Distribution.gamma(3.0, 0.5))
        th = m.add_germ("th", Distribution.uniform(-1.0, 3.0))
        w = m.add_variable("w", FIRST)
        z = m.add_variable("z", SECOND, (2,))
        con = m.add_eq(2.0 * z[0] - z[1] + 0.7 * xi - 1.3 * th * w + 4.0, 0.0, name="mix")
        m.add_eq(z[1] - xi - th, 0.0, name="pin")
        m.set_objective(w + z[0])
        m.finalize()
        basis = _basis_for(m, degree)
        layout = CoefficientLayout(m, basis)
        rng = np.random.default_rng(degree)
        values = rng.uniform(-2.0, 2.0, layout.n_columns)
        rows = project_equality(m, basis, con)
        got = _apply_rows(rows, values)
        want = _quadrature_rows(m, basis, con.expression, values)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_bilinear_recourse_requires_opt_in(self):
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(0.0, 1.0))
        z = m.add_variable("z", SECOND)
        con = m.add_eq(xi * z + z, 0.0, name="feedback")
        m.set_objective(z * 1.0)
        m.finalize()
        basis = _basis_for(m, 1)
        with pytest.raises(ProjectionError, match="needs degree 2"):
            project_equality(m, basis, con)

    def test_bilinear_recourse_truncated_matches_quadrature(self):
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(0.0, 1.0))
        th = m.add_germ("th", Distribution.normal(0.0, 1.0))
        z = m.add_variable("z", SECOND)
        con = m.add_eq(xi * z + 2.0 * z - th, 0.0, name="feedback")
        m.set_objective(z * 1.0)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        rng = np.random.default_rng(42)
        values = rng.uniform(-1.0, 1.0, layout.n_columns)
        rows = project_equality(m, basis, con, allow_truncation=True)
        got = _apply_rows(rows, values)
        want = _quadrature_rows(m, basis, con.expression, values)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_hand_coupling_two_germ(self):
        # xi * z with standard-normal xi over a 2-germ degree-1 basis:
        # row 0 reads z_(e_xi), row e_xi reads z_0, row e_th reads nothing
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(0.0, 1.0))
        th = m.add_germ("th", Distribution.normal(0.0, 1.0))
        z = m.add_variable("z", SECOND)
        con = m.add_eq(xi * z, 0.0, name="pure")
        m.add_eq(z - th, 0.0, name="pin")
        m.set_objective(z * 1.0)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        rows = project_equality(m, basis, con, allow_truncation=True)
        col = lambda mode: layout.column("z", 0, mode)
        assert rows[0][1] == {col(1): pytest.approx(1.0)}
        assert rows[1][1] == {col(0): pytest.approx(1.0)}
        assert rows[2][1] == {}

    def test_wrong_sense_rejected(self):
        m = StochModel()
        m.add_germ("xi", Distribution.normal(0.0, 1.0), allow_unused=True)
        x = m.add_variable("x", FIRST)
        con = m.add_le(x, 1.0, name="cap")
        m.set_objective(x * 1.0)
        m.finalize()
        with pytest.raises(ProjectionError, match="not an equality"):
            project_equality(m, _basis_for(m, 1), con)


# ── inequality projection ──────────────────────────────────────────────────────


def _ineq_model():
    m = StochModel()
    xi = m.add_germ("xi", Distribution.normal(0.0, 2.0))
    x = m.add_variable("x", FIRST)
    z = m.add_variable("z", SECOND)
    m.add_eq(z - xi, 0.0, name="pin")
    m.set_objective(x + z)
    return m


class TestProjectInequality:
    def test_recourse_cap_becomes_cone(self):
        m = _ineq_model()
        z = m.variables["z"]
        con = m.add_le(z, 5.0, name="cap")
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        kind, cone = project_inequality(m, basis, con, lam=1.645)
        assert kind == "soc"
        assert cone.lam == 1.645
        assert cone.mean_cols == {layout.column("z", 0, 0): 1.0}
        assert cone.mean_const == -5.0
        assert cone.dev_modes == (1,)
        assert cone.dev_cols == ({layout.column("z", 0, 1): 1.0},)
        assert cone.dev_consts == (0.0,)

    def test_first_stage_row_stays_linear(self):
        m = _ineq_model()
        x = m.variables["x"]
        con = m.add_le(x, 3.0, name="xcap")
        m.finalize()
        kind, row = project_inequality(m, _basis_for(m, 1), con, lam=1.645)
        assert kind == "linear"
        label, cols, const = row
        assert label == ("xcap", 0)
        assert const == -3.0

    def test_constant_radius_tightens_linear_row(self):
        # x + xi <= 10 has deterministic norm |sd|: stays linear, rhs tightened
        m = _ineq_model()
        x, xi = m.variables["x"], m.germs["xi"]
        con = m.add_le(x + xi, 10.0, name="tight")
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        kind, row = project_inequality(m, basis, con, lam=1.645)
        assert kind == "linear"
        _, cols, const = row
        assert cols == {layout.column("x"): 1.0}
        assert const == pytest.approx(-10.0 + 1.645 * 2.0)

    def test_bilinear_first_stage_in_norm(self):
        m = _ineq_model()
        x, xi = m.variables["x"], m.germs["xi"]
        con = m.add_le(xi * x, 1.0, name="scaled")
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        kind, cone = project_inequality(m, basis, con, lam=2.0)
        assert kind == "soc"
        assert cone.dev_cols == ({layout.column("x"): pytest.approx(2.0)},)

    def test_lambda_must_be_positive(self):
        m = _ineq_model()
        con = m.add_le(m.variables["z"], 5.0, name="cap")
        m.finalize()
        with pytest.raises(ProjectionError, match="lambda"):
            project_inequality(m, _basis_for(m, 1), con, lam=0.0)

    def test_wrong_sense_rejected(self):
        m = _ineq_model()
        con = m.constraints[0]  # the equality pin
        m.finalize()
        with pytest.raises(ProjectionError, match="not an inequality"):
            project_inequality(m, _basis_for(m, 1), con, lam=1.0)


# ── objective projection ───────────────────────────────────────────────────────


class TestProjectObjective:
    def test_deterministic_cost(self):
        m = StochModel()
        m.add_germ("xi", Distribution.normal(0.0, 1.0), allow_unused=True)
        x = m.add_variable("x", FIRST)
        m.set_objective(3.0 * x + 1.5)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        cols, const = project_objective(m, basis)
        assert cols == {layout.column("x"): 3.0}
        assert const == 1.5

    def test_recourse_expected_value_reads_zero_mode(self):
        m = _ineq_model()
        m.set_objective(m.variables["z"] * 1.0)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        cols, _ = project_objective(m, basis)
        assert cols == {layout.column("z", 0, 0): 1.0}

    def test_bilinear_reads_covariance_mode(self):
        # E[(sigma*y) * z] = sigma * z_(1) for a zero-mean germ
        m = _ineq_model()
        xi, z = m.germs["xi"], m.variables["z"]
        m.set_objective(xi * z)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        cols, const = project_objective(m, basis)
        assert cols == {layout.column("z", 0, 1): pytest.approx(2.0)}
        assert const == 0.0

    def test_bilinear_with_nonzero_mean_germ(self):
        m = StochModel()
        price = m.add_germ("price", Distribution.normal(60.0, 10.0))
        z = m.add_variable("z", SECOND)
        m.add_eq(z - price * 0.01, 0.0, name="pin")
        m.set_objective(price * z)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        cols, _ = project_objective(m, basis)
        assert cols == {
            layout.column("z", 0, 0): pytest.approx(60.0),
            layout.column("z", 0, 1): pytest.approx(10.0),
        }

    def test_objective_never_overflows_at_degree_zero(self):
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(3.0, 1.0))
        z = m.add_variable("z", SECOND)
        m.add_eq(z - xi * 0.0 - 1.0, 0.0, name="fix")
        m.set_objective(xi * z + xi)
        m.finalize()
        basis = _basis_for(m, 0)
        layout = CoefficientLayout(m, basis)
        cols, const = project_objective(m, basis)
        # E[xi * z] with z constant-mode only: mean * z_0; E[xi] joins constant
        assert cols == {layout.column("z", 0, 0): pytest.approx(3.0)}
        assert const == pytest.approx(3.0)

    def test_expected_cost_against_monte_carlo(self):
        m = StochModel()
        price = m.add_germ("price", Distribution.uniform(40.0, 80.0))
        load = m.add_germ("load", Distribution.normal(10.0, 2.0))
        z = m.add_variable("z", SECOND, (2,))
        m.add_eq(z[0] + z[1] - load, 0.0, name="bal")
        m.set_objective(price * z[0] + 5.0 * z[1] - 0.3 * price + 2.0)
        m.finalize()
        basis = _basis_for(m, 1)
        layout = CoefficientLayout(m, basis)
        cols, const = project_objective(m, basis)

        rng = np.random.default_rng(11)
        coeffs = rng.uniform(-1.0, 1.0, layout.n_columns)
        projected = sum(c * coeffs[col] for col, c in cols.items()) + const

        n = 200_000
        prices = rng.uniform(40.0, 80.0, n)
        loads = rng.normal(10.0, 2.0, n)
        policy = recover_policy(project_model(m, basis), coeffs)
        zvals = evaluate_policy(policy, np.column_stack([prices, loads]))["z"]
        costs = prices * zvals[:, 0] + 5.0 * zvals[:, 1] - 0.3 * prices + 2.0
        se = costs.std(ddof=1) / math.sqrt(n)
        assert abs(projected - costs.mean()) < 3 * se


# ── whole-model projection ─────────────────────────────────────────────────────


class TestProjectModel:
    def test_dimension_bookkeeping(self):
        m = StochModel()
        for i in range(3):
            m.add_germ(f"xi{i}", Distribution.normal(0.0, 1.0))
        x = m.add_variable("x", FIRST, (2,), lb=0.0)
        z = m.add_variable("z", SECOND, (2,))
        germs = list(m.germs.values())
        m.add_eq(z[0] - germs[0], 0.0, name="p0")
        m.add_eq(z[1] - germs[1] - germs[2], 0.0, name="p1")
        m.add_le(z[0] - x[0], 0.0, name="cap0")
        m.add_le(x[1], 9.0, name="detcap")
        m.set_objective(x[0] + x[1] + z[0] + z[1])
        m.finalize()
        basis = _basis_for(m, 1)
        prog = project_model(m, basis)
        dims = prog.dimensions()
        assert dims.n_columns == 2 + 2 * 4
        assert dims.n_first_stage == 2
        assert dims.n_equalities == 2 * 4
        assert dims.n_cones == 1  # cap0; bounds and detcap are deterministic
        assert dims.n_linear_inequalities == 2 + 1
        labels = [lab for lab in prog.eq_labels if lab[0] == "p0"]
        assert labels == [("p0", k) for k in range(4)]

    def test_zero_germ_model_collapses_to_lp(self):
        m = StochModel()
        x = m.add_variable("x", FIRST, lb=0.0)
        z = m.add_variable("z", SECOND)
        m.add_eq(x + z, 4.0, name="bal")
        m.set_objective(x + 2.0 * z)
        m.finalize()
        basis = build_basis([], 1)
        assert basis.cardinality == 1
        prog = project_model(m, basis)
        dims = prog.dimensions()
        assert dims.n_columns == 2
        assert dims.n_cones == 0
        assert dims.n_equalities == 1

    def test_default_basis_is_degree_one(self):
        m = _ineq_model()
        m.finalize()
        prog = project_model(m)
        assert prog.basis.max_degree == 1
        assert prog.basis.cardinality == 2

    def test_settings_epsilon_applied_per_constraint(self):
        m = _ineq_model()
        z = m.variables["z"]
        m.add_le(z, 5.0, name="loose")
        m.add_le(z, 6.0, name="strict", epsilon=0.01)
        m.finalize()
        prog = project_model(m, _basis_for(m, 1), ProjectionSettings())
        lams = {c.name: c.lam for c in prog.cones}
        assert lams["loose"] == 1.645
        assert lams["strict"] == pytest.approx(2.3263478740408408, abs=1e-12)

    def test_objective_vector_roundtrip(self):
        m = _ineq_model()
        m.finalize()
        prog = project_model(m)
        c = prog.objective_vector()
        assert c.shape == (prog.layout.n_columns,)
        assert c[prog.layout.column("x")] == 1.0


# ── policies ───────────────────────────────────────────────────────────────────


def _policy_one_normal(coeffs=(2.0, 3.0)):
    m = StochModel()
    m.add_germ("xi", Distribution.normal(0.0, 1.0))
    z = m.add_variable("z", SECOND)
    m.add_eq(z - m.germs["xi"], 0.0, name="pin")
    m.set_objective(z * 1.0)
    m.finalize()
    basis = _basis_for(m, 1)
    return RecoursePolicy(
        basis,
        first_stage={},
        coefficients={"z": np.array([list(coeffs)])},
        shapes={"z": ()},
    )


class TestPolicies:
    def test_two_three_at_one_gives_five(self):
        policy = _policy_one_normal((2.0, 3.0))
        out = evaluate_policy(policy, np.array([1.0]))
        assert out["z"] == pytest.approx(5.0, abs=1e-14)

    def test_mean_realization_returns_zero_modes(self):
        m = StochModel()
        m.add_germ("a", Distribution.normal(5.0, 2.0))
        m.add_germ("b", Distribution.uniform(-3.0, 3.0))
        z = m.add_variable("z", SECOND, (2,))
        m.add_eq(z[0] - m.germs["a"], 0.0, name="p0")
        m.add_eq(z[1] - m.germs["b"], 0.0, name="p1")
        m.set_objective(z[0] + z[1])
        m.finalize()
        basis = _basis_for(m, 1)
        rng = np.random.default_rng(3)
        table = rng.normal(size=(2, basis.cardinality))
        policy = RecoursePolicy(basis, {}, {"z": table}, {"z": (2,)})
        means = [g.natural_mean for g in basis.germs]
        out = evaluate_policy(policy, np.array(means))
        np.testing.assert_allclose(out["z"], table[:, 0], atol=1e-12)

    def test_affine_in_realization_at_degree_one(self):
        policy = _policy_one_normal((1.0, -2.0))
        pts = np.array([[0.0], [1.0], [2.0]])
        vals = evaluate_policy(policy, pts)["z"]
        assert vals[1] - vals[0] == pytest.approx(vals[2] - vals[1], abs=1e-12)

    def test_outside_support_warns_but_evaluates(self):
        m = StochModel()
        m.add_germ("u", Distribution.uniform(0.0, 1.0))
        z = m.add_variable("z", SECOND)
        m.add_eq(z - m.germs["u"], 0.0, name="pin")
        m.set_objective(z * 1.0)
        m.finalize()
        basis = _basis_for(m, 1)
        policy = RecoursePolicy(basis, {}, {"z": np.array([[0.5, 1.0]])}, {"z": ()})
        with pytest.warns(UserWarning, match="outside the support"):
            out = evaluate_policy(policy, np.array([2.0]))
        assert np.isfinite(out["z"])

    def test_recover_policy_splits_layout(self):
        m = StochModel()
        m.add_germ("xi", Distribution.normal(0.0, 1.0))
        x = m.add_variable("x", FIRST, (2,))
        z = m.add_variable("z", SECOND, (2,))
        m.add_eq(z[0] - m.germs["xi"], 0.0, name="p0")
        m.add_eq(z[1] + z[0], 0.0, name="p1")
        m.set_objective(x[0] + x[1] + z[0])
        m.finalize()
        basis = _basis_for(m, 1)
        prog = project_model(m, basis)
        layout = prog.layout
        primal = np.zeros(layout.n_columns)
        primal[layout.column("x", 0)] = 10.0
        primal[layout.column("x", 1)] = 20.0
        primal[layout.column("z", 0, 0)] = 1.0
        primal[layout.column("z", 0, 1)] = 2.0
        primal[layout.column("z", 1, 0)] = 3.0
        primal[layout.column("z", 1, 1)] = 4.0
        policy = recover_policy(prog, primal)
        np.testing.assert_allclose(policy.first_stage["x"], [10.0, 20.0])
        np.testing.assert_allclose(policy.coefficients["z"], [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(policy.zero_modes()["z"], [1.0, 3.0])

    def test_recover_policy_shape_check(self):
        m = _ineq_model()
        m.finalize()
        prog = project_model(m)
        assert prog.layout.n_columns == 3
        with pytest.raises(ProjectionError, match="shape"):
            recover_policy(prog, np.zeros(4))
