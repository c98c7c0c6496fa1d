"""Multivariate basis: index sets, evaluation, triple products, moments."""

import math

import numpy as np
import pytest
from scipy import integrate

from stochproj.polybasis import Distribution, standardize
from stochproj.sprog import Germ
from stochproj.multibasis import (
    build_basis,
    build_index_set,
    cardinality,
    coupling_matrix,
    eval_all,
    eval_basis,
    moments,
    triple_tensor,
)


def _germ(name, dist):
    family, transform = standardize(dist)
    return Germ(name, dist, transform, family)


HERMITE = _germ("n", Distribution.normal(0.0, 1.0))
LEGENDRE = _germ("u", Distribution.uniform(-1.0, 1.0))
LAGUERRE = _germ("g", Distribution.gamma(2.5, 1.0))
JACOBI = _germ("b", Distribution.beta(2.0, 3.0))


def _standardized_density(germ):
    """Explicit density of the standardized measure, for quadrature oracles."""
    kind = germ.distribution.kind
    if kind == "normal":
        return (lambda x: math.exp(-x * x / 2) / math.sqrt(2 * math.pi)), (-np.inf, np.inf)
    if kind == "uniform":
        return (lambda x: 0.5), (-1.0, 1.0)
    if kind == "gamma":
        k = germ.distribution.params[0]
        return (lambda x: x ** (k - 1) * math.exp(-x) / math.gamma(k)), (0.0, np.inf)
    a, b = germ.distribution.params[:2]
    const = math.gamma(a + b) / (math.gamma(a) * math.gamma(b))
    return (lambda x: const * x ** (a - 1) * (1 - x) ** (b - 1)), (0.0, 1.0)


def _quad_triple(germ, p, q, r):
    """Independent oracle: <psi_p psi_q, psi_r> by adaptive quadrature."""
    density, (lo, hi) = _standardized_density(germ)
    fam = germ.family
    top = max(p, q, r)

    def integrand(x):
        col = fam.eval_table(top, np.asarray(x))
        return float(col[p] * col[q] * col[r]) * density(x)

    value, _ = integrate.quad(integrand, lo, hi, limit=200)
    return value


# ── index sets ─────────────────────────────────────────────────────────────────


class TestIndexSet:
    def test_eight_germs_degree_one(self):
        idx = build_index_set(8, 1)
        assert len(idx) == 9
        assert idx[0] == (0,) * 8
        for g in range(8):
            assert idx[1 + g][g] == 1 and sum(idx[1 + g]) == 1

    def test_two_germs_degree_two_exact_order(self):
        assert build_index_set(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_one_germ_degree_three(self):
        assert build_index_set(1, 3) == [(0,), (1,), (2,), (3,)]

    @pytest.mark.parametrize("n", range(1, 11))
    @pytest.mark.parametrize("d", range(0, 5))
    def test_cardinality_by_enumeration(self, n, d):
        idx = build_index_set(n, d)
        assert len(idx) == cardinality(n, d) == math.comb(n + d, d)
        assert len(set(idx)) == len(idx)
        assert all(sum(a) <= d for a in idx)

    def test_graded_order(self):
        idx = build_index_set(3, 3)
        grades = [sum(a) for a in idx]
        assert grades == sorted(grades)
        # descending-lex within each grade
        for g in set(grades):
            block = [a for a in idx if sum(a) == g]
            assert block == sorted(block, reverse=True)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_index_set(-1, 2)
        with pytest.raises(ValueError):
            build_index_set(2, -1)

    def test_zero_germs_constant_only(self):
        assert build_index_set(0, 3) == [()]

    def test_unit_index_positions(self):
        basis = build_basis([HERMITE, LEGENDRE, LAGUERRE], 2)
        for g in range(3):
            assert basis.unit_index(g) == 1 + g

    def test_index_of_unknown(self):
        basis = build_basis([HERMITE], 1)
        with pytest.raises(ValueError, match="not in basis"):
            basis.index_of((2,))


# ── evaluation ─────────────────────────────────────────────────────────────────


class TestEvaluation:
    def test_constant_mode_is_one(self):
        basis = build_basis([HERMITE, LEGENDRE, JACOBI], 2)
        assert eval_basis(basis, (0, 0, 0), (0.3, -0.7, 0.2)) == 1.0

    def test_two_hermite_degree_one_product(self):
        basis = build_basis([HERMITE, _germ("n2", Distribution.normal(0.0, 1.0))], 2)
        assert eval_basis(basis, (1, 1), (1.0, 2.0)) == pytest.approx(2.0, abs=1e-14)

    def test_legendre_factor_only(self):
        basis = build_basis([HERMITE, LEGENDRE], 1)
        got = eval_basis(basis, (0, 1), (5.0, 1.0))
        assert got == pytest.approx(math.sqrt(3.0), abs=1e-14)

    def test_dimension_mismatch(self):
        basis = build_basis([HERMITE, LEGENDRE], 1)
        with pytest.raises(ValueError, match="entries for 2 germs"):
            eval_basis(basis, (1,), (0.0, 0.0))
        with pytest.raises(ValueError, match="entries for 2 germs"):
            eval_basis(basis, (1, 0), (0.0,))
        with pytest.raises(ValueError, match="not in basis"):
            eval_basis(basis, (1, 1), (0.0, 0.0))

    def test_eval_all_matches_eval_basis(self):
        basis = build_basis([HERMITE, LEGENDRE, LAGUERRE], 2)
        rng = np.random.default_rng(7)
        pts = np.column_stack(
            [rng.standard_normal(5), rng.uniform(-1, 1, 5), rng.gamma(2.5, 1.0, 5)]
        )
        table = eval_all(basis, pts)
        assert table.shape == (5, basis.cardinality)
        for r in range(5):
            for k, alpha in enumerate(basis.indices):
                assert table[r, k] == pytest.approx(eval_basis(basis, alpha, pts[r]), rel=1e-12, abs=1e-12)

    def test_degree_one_basis_is_affine(self):
        basis = build_basis([HERMITE, LEGENDRE], 1)
        pts = np.array([[0.2, -0.5], [1.5, 0.9]])
        table = eval_all(basis, pts)
        np.testing.assert_allclose(table[:, 0], 1.0)
        # each non-constant mode is a linear map of exactly one germ
        for g, germ in enumerate(basis.germs):
            fam = germ.family
            expect = (pts[:, g] - fam.measure_mean) / fam.measure_sd
            np.testing.assert_allclose(table[:, 1 + g], expect, atol=1e-14)

    def test_eval_all_wrong_width(self):
        basis = build_basis([HERMITE, LEGENDRE], 1)
        with pytest.raises(ValueError, match="columns"):
            eval_all(basis, np.zeros((4, 3)))


# ── triple-product tensor ──────────────────────────────────────────────────────


class TestTripleTensor:
    def test_constant_entry(self):
        basis = build_basis([HERMITE, LEGENDRE], 2)
        tensor = triple_tensor(basis)
        assert tensor[(0, 0, 0)] == pytest.approx(1.0, abs=1e-13)

    def test_zero_slice_is_identity(self):
        basis = build_basis([HERMITE, LAGUERRE], 2)
        tensor = triple_tensor(basis)
        k = basis.cardinality
        got = np.zeros((k, k))
        for (z, h, a), val in tensor.items():
            if z == 0:
                got[h, a] = val
        np.testing.assert_allclose(got, np.eye(k), atol=1e-12)

    def test_hermite_one_one_two(self):
        basis = build_basis([HERMITE], 2)
        tensor = triple_tensor(basis)
        assert tensor[(1, 1, 2)] == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_full_permutation_symmetry(self):
        basis = build_basis([HERMITE, LEGENDRE], 3)
        tensor = triple_tensor(basis)
        for (z, h, a), val in tensor.items():
            for perm in ((h, z, a), (a, h, z), (z, a, h), (h, a, z), (a, z, h)):
                assert tensor[perm] == pytest.approx(val, rel=1e-10, abs=1e-12)

    def test_no_entries_below_threshold(self):
        basis = build_basis([HERMITE, LEGENDRE], 2)
        assert all(abs(v) > 1e-12 for v in triple_tensor(basis).values())

    def test_insufficient_quadrature_rejected(self):
        basis = build_basis([HERMITE], 2)
        with pytest.raises(ValueError, match="exact only"):
            triple_tensor(basis, n_nodes=3)  # needs ceil(7/2) = 4

    @pytest.mark.parametrize("germ", [HERMITE, LEGENDRE, LAGUERRE, JACOBI], ids=lambda g: g.name)
    def test_univariate_entries_against_quadrature(self, germ):
        basis = build_basis([germ], 2)
        tensor = triple_tensor(basis)
        for p in range(3):
            for q in range(3):
                for r in range(3):
                    want = _quad_triple(germ, p, q, r)
                    got = tensor.get((p, q, r), 0.0)
                    assert got == pytest.approx(want, abs=5e-9)

    def test_separability_across_germs(self):
        basis = build_basis([HERMITE, LEGENDRE], 2)
        tensor = triple_tensor(basis)
        z = basis.index_of((1, 1))
        h = basis.index_of((1, 0))
        a = basis.index_of((0, 1))
        want = _quad_triple(HERMITE, 1, 1, 0) * _quad_triple(LEGENDRE, 1, 0, 1)
        assert tensor[(z, h, a)] == pytest.approx(want, abs=5e-9)

    def test_coupling_matrix_single_hermite(self):
        basis = build_basis([HERMITE], 2)
        tensor = triple_tensor(basis)
        got = coupling_matrix(basis, tensor, 0)
        s2 = math.sqrt(2.0)
        want = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, s2], [0.0, s2, 0.0]])
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_coupling_matrix_picks_right_germ(self):
        basis = build_basis([HERMITE, LEGENDRE], 2)
        tensor = triple_tensor(basis)
        t1 = coupling_matrix(basis, tensor, 1)
        # <psi_1^leg * 1, Psi_a> nonzero only at a = e_leg
        unit = basis.unit_index(1)
        row0 = np.zeros(basis.cardinality)
        row0[unit] = 1.0
        np.testing.assert_allclose(t1[0], row0, atol=1e-12)


# ── moments ────────────────────────────────────────────────────────────────────


class TestMoments:
    def test_constant_expansion(self):
        mean, var = moments(np.array([5.0, 0.0, 0.0]))
        assert (mean, var) == (5.0, 0.0)

    def test_sum_of_squares(self):
        mean, var = moments(np.array([0.0, 3.0, 4.0, 0.0]))
        assert (mean, var) == (0.0, 25.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            moments(np.array([]))

    def test_against_monte_carlo(self):
        basis = build_basis([HERMITE, LEGENDRE, LAGUERRE], 2)
        rng = np.random.default_rng(1234)
        coeffs = rng.uniform(-1.0, 1.0, basis.cardinality)
        mean, var = moments(coeffs)

        n = 1_000_000
        pts = np.column_stack(
            [rng.standard_normal(n), rng.uniform(-1.0, 1.0, n), rng.gamma(2.5, 1.0, n)]
        )
        vals = eval_all(basis, pts) @ coeffs
        mc_mean = vals.mean()
        se_mean = vals.std(ddof=1) / math.sqrt(n)
        assert abs(mean - mc_mean) < 3 * se_mean

        sq = (vals - mc_mean) ** 2
        mc_var = sq.mean()
        se_var = sq.std(ddof=1) / math.sqrt(n)
        assert abs(var - mc_var) < 3 * se_var
