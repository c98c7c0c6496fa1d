"""Monte-Carlo validation: germ sampling, violation tallies, cost statistics."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochproj.polybasis import Distribution
from stochproj.sprog import FIRST, SECOND, StochModel
from stochproj.galerkin import project_model, recover_policy
from stochproj.conic import assemble, solve
from stochproj.mcvalidate import (
    VIOLATION_TOL,
    estimate_cost,
    estimate_violations,
    max_equality_residual,
    sample_germs,
)
from stochproj.mcvalidate import _wilson


def _germs(*dists):
    m = StochModel()
    return [m.add_germ(f"g{i}", d, allow_unused=True) for i, d in enumerate(dists)]


def _solve_policy(model):
    prog = project_model(model)
    res = solve(assemble(prog)).require_optimal()
    return recover_policy(prog, res.x)


def _pinned_model(extra_caps=()):
    """z tracks a N(0,2) germ; optional slack caps z <= m."""
    m = StochModel()
    xi = m.add_germ("xi", Distribution.normal(0.0, 2.0))
    z = m.add_variable("z", SECOND)
    m.add_eq(z - xi, 0.0, name="pin")
    for mname, cap in extra_caps:
        m.add_le(z, cap, name=mname)
    m.set_objective(z * 1.0)
    return m.finalize()


class TestSampleGerms:
    def test_shape_and_determinism(self):
        germs = _germs(Distribution.normal(1.0, 2.0), Distribution.beta(2.0, 5.0))
        a = sample_germs(germs, 100, seed=7)
        b = sample_germs(germs, 100, seed=7)
        assert a.shape == (100, 2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, sample_germs(germs, 100, seed=8))

    def test_prefix_property(self):
        # counter-based streams: a shorter run is a prefix of a longer one
        germs = _germs(Distribution.normal(0.0, 1.0), Distribution.gamma(3.0, 2.0))
        short = sample_germs(germs, 100, seed=3)
        long = sample_germs(germs, 1000, seed=3)
        np.testing.assert_array_equal(long[:100], short)

    def test_moments(self):
        dists = (
            Distribution.normal(-2.0, 3.0),
            Distribution.uniform(0.0, 10.0),
            Distribution.gamma(2.0, 0.5),
        )
        draws = sample_germs(_germs(*dists), 20_000, seed=5)
        for i, d in enumerate(dists):
            assert abs(draws[:, i].mean() - d.mean) < 3 * d.sd / np.sqrt(20_000)
            assert abs(draws[:, i].std(ddof=1) - d.sd) < 0.05 * d.sd

    def test_no_germs_and_validation(self):
        assert sample_germs([], 5, seed=1).shape == (5, 0)
        germs = _germs(Distribution.normal(0.0, 1.0))
        with pytest.raises(ValueError, match="at least one sample"):
            sample_germs(germs, 0, seed=1)
        with pytest.raises(ValueError, match="non-negative"):
            sample_germs(germs, 5, seed=-2)


class TestWilson:
    @given(st.integers(min_value=1, max_value=100_000), st.data())
    def test_interval_contains_estimate(self, n, data):
        count = data.draw(st.integers(min_value=0, max_value=n))
        lo, hi = _wilson(count, n)
        p = count / n
        assert 0.0 <= lo <= p <= hi <= 1.0

    def test_degenerate_endpoints(self):
        lo, hi = _wilson(0, 1000)
        assert lo == 0.0 and hi < 0.01
        lo, hi = _wilson(1000, 1000)
        assert lo > 0.99 and hi == 1.0


class TestEstimateViolations:
    def test_slack_deterministic_constraint_never_violates(self):
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(0.0, 1.0))
        x = m.add_variable("x", FIRST, lb=0.0, ub=1.0)
        z = m.add_variable("z", SECOND)
        m.add_eq(z - xi, 0.0, name="pin")
        m.add_le(x, 10.0, name="roomy")
        m.set_objective(x + z)
        m.finalize()
        policy = _solve_policy(m)
        report = estimate_violations(policy, m, n_mc=2000, seed=1)
        roomy = next(c for c in report.checks if c.name == "roomy")
        assert roomy.violations == 0
        assert roomy.probability == 0.0
        assert roomy.ci_low == 0.0
        assert not roomy.exceeds_target

    def test_binding_gaussian_boundary_near_five_percent(self):
        # minimal cap b* = 1.645*sd makes P(violation) = P(y > 1.645) ≈ 5%
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(0.0, 2.0))
        b = m.add_variable("b", FIRST)
        z = m.add_variable("z", SECOND)
        m.add_eq(z - xi, 0.0, name="pin")
        m.add_le(z - b, 0.0, name="cap")
        m.set_objective(b * 1.0)
        m.finalize()
        policy = _solve_policy(m)
        report = estimate_violations(policy, m, n_mc=10_000, seed=4)
        cap = next(c for c in report.checks if c.name == "cap")
        se = np.sqrt(0.05 * 0.95 / 10_000)
        assert abs(cap.probability - 0.05) < 3 * se
        assert cap.ci_low <= cap.probability <= cap.ci_high

    def test_margin_growth_drives_violations_to_zero(self):
        m = _pinned_model(extra_caps=[("m2", 4.0), ("m3", 6.0), ("m4", 8.0)])
        policy = _solve_policy(m)
        report = estimate_violations(policy, m, n_mc=20_000, seed=9)
        by_name = {c.name: c.probability for c in report.checks}
        # z has sd 2: caps sit at 2, 3, 4 residual sds
        assert by_name["m2"] > by_name["m3"] >= by_name["m4"]
        assert by_name["m4"] <= 1e-3

    def test_report_invariants_and_reproducibility(self):
        m = _pinned_model(extra_caps=[("mid", 4.0), ("loose", 9.0)])
        policy = _solve_policy(m)
        a = estimate_violations(policy, m, n_mc=3000, seed=2)
        b = estimate_violations(policy, m, n_mc=3000, seed=2)
        assert a.csv() == b.csv()
        for check in a.checks:
            assert 0.0 <= check.ci_low <= check.probability <= check.ci_high <= 1.0
            assert check.n_samples == 3000
        assert a.n_above_target == sum(c.probability > c.target for c in a.checks)
        assert a.max_probability == max(c.probability for c in a.checks)

    def test_explicit_epsilon_sets_target(self):
        m = StochModel()
        xi = m.add_germ("xi", Distribution.normal(0.0, 1.0))
        z = m.add_variable("z", SECOND)
        m.add_eq(z - xi, 0.0, name="pin")
        m.add_le(z, 5.0, name="tight", epsilon=0.01)
        m.set_objective(z * 1.0)
        m.finalize()
        policy = _solve_policy(m)
        report = estimate_violations(policy, m, n_mc=500, seed=1)
        tight = next(c for c in report.checks if c.name == "tight")
        assert tight.target == 0.01

    def test_germ_mismatch_rejected(self):
        policy = _solve_policy(_pinned_model())
        other = StochModel()
        other.add_germ("nu", Distribution.normal(0.0, 2.0))
        z = other.add_variable("z", SECOND)
        other.add_eq(z - other.germs["nu"], 0.0, name="pin")
        other.set_objective(z * 1.0)
        other.finalize()
        with pytest.raises(ValueError, match="differ from model germs"):
            estimate_violations(policy, other, n_mc=10, seed=0)

    def test_csv_and_summary(self):
        m = _pinned_model(extra_caps=[("cap", 9.0)])
        policy = _solve_policy(m)
        report = estimate_violations(policy, m, n_mc=100, seed=0)
        lines = report.csv().strip().split("\n")
        assert lines[0] == "constraint,violation_probability,ci_low,ci_high,target,above_target"
        assert len(lines) == 1 + len(report.checks)
        for line in lines[1:]:  # every numeric cell must parse back as a float
            cells = line.split(",")
            assert [float(c) >= 0.0 for c in cells[1:]]
        assert "of 1 inequalities above target" in report.summary_line()
        assert "at 100 samples" in report.summary_line()


class TestEqualityResidual:
    def test_pinned_policy_matches_equality(self):
        policy = _solve_policy(_pinned_model(extra_caps=[("cap", 9.0)]))
        assert max_equality_residual(policy, _pinned_model(extra_caps=[("cap", 9.0)]), 1000, 3) <= 1e-6

    def test_broken_policy_detected(self):
        m = _pinned_model(extra_caps=[("cap", 9.0)])
        policy = _solve_policy(m)
        policy.coefficients["z"][0, 1] += 0.5  # corrupt the linear mode
        assert max_equality_residual(policy, m, 200, 3) > 0.1


class TestEstimateCost:
    def test_germ_free_model_is_exact(self):
        m = StochModel()
        x = m.add_variable("x", FIRST, lb=1.0, ub=4.0)
        z = m.add_variable("z", SECOND)
        m.add_eq(z - x, 0.0, name="mirror")
        m.set_objective(2.0 * x + z)
        m.finalize()
        prog = project_model(m)
        res = solve(assemble(prog)).require_optimal()
        policy = recover_policy(prog, res.x)
        est = estimate_cost(policy, m, n_mc=50, seed=1)
        assert est.mean == pytest.approx(res.objective, abs=1e-9)
        assert est.se == pytest.approx(0.0, abs=1e-12)

    def test_pure_germ_cost_moments(self):
        policy = _solve_policy(_pinned_model(extra_caps=[("cap", 9.0)]))
        est = estimate_cost(policy, _pinned_model(extra_caps=[("cap", 9.0)]), n_mc=10_000, seed=6)
        # cost = z = 2*y: mean 0, sd 2
        assert abs(est.mean) < 3 * 2.0 / np.sqrt(10_000)
        assert est.se * np.sqrt(10_000) == pytest.approx(2.0, rel=0.05)
        assert est.ci_low < est.mean < est.ci_high

    def test_mean_matches_projected_objective(self):
        m = StochModel()
        demand = m.add_germ("demand", Distribution.uniform(50.0, 150.0))
        price = m.add_germ("price", Distribution.normal(20.0, 2.0))
        x = m.add_variable("x", FIRST, lb=0.0, ub=120.0)
        z = m.add_variable("z", SECOND)
        m.add_eq(z - demand + x, 0.0, name="serve")
        m.set_objective(4.0 * x + price * z)
        m.finalize()
        prog = project_model(m)
        res = solve(assemble(prog)).require_optimal()
        policy = recover_policy(prog, res.x)
        est = estimate_cost(policy, m, n_mc=40_000, seed=11)
        assert abs(est.mean - res.objective) < 3 * est.se

    def test_se_scales_inverse_sqrt(self):
        m = _pinned_model(extra_caps=[("cap", 9.0)])
        policy = _solve_policy(m)
        ses = [estimate_cost(policy, m, n_mc=n, seed=5).se for n in (1000, 4000, 16_000)]
        assert ses[0] / ses[1] == pytest.approx(2.0, rel=0.1)
        assert ses[1] / ses[2] == pytest.approx(2.0, rel=0.1)
