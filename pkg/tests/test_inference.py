"""Wald tests, boundary adjustment, QIC, and model comparison."""

import numpy as np
import pytest

from pstarmax import (GridSpec, ModelSpec, ParameterVector, SimulationConfig,
                      build_grid_4nn, compare_models, fit, qic, qic_from_parts,
                      simulate_path, single_param_test, wald_test)
from pstarmax.inference import InferenceError, chi2_sf, multi_param_boundary_test

TABLE1_LINEAR = ParameterVector(delta=[5.0], alpha=([0.2, 0.1],), beta=([0.2, 0.1],))
SPEC11 = ModelSpec("linear", a=(1,), b=(1,))


@pytest.fixture(scope="module")
def linear_fit():
    W = build_grid_4nn(GridSpec(3))
    sim = simulate_path(TABLE1_LINEAR, SPEC11, W,
                        cfg=SimulationConfig(T=300, seed=70))
    return fit(SPEC11, W, sim.counts)


@pytest.fixture(scope="module")
def log_fit():
    W = build_grid_4nn(GridSpec(3))
    spec = ModelSpec("log_linear", a=(1,), b=(1,))
    theta = ParameterVector(delta=[0.6], alpha=([0.2, 0.1],), beta=([0.2, 0.1],))
    sim = simulate_path(theta, spec, W, cfg=SimulationConfig(T=300, seed=71))
    return fit(spec, W, sim.counts)


class TestWaldTest:
    def test_null_at_estimate(self, linear_fit):
        C = np.eye(5)
        res = wald_test(linear_fit, C, linear_fit.theta_flat)
        assert res.statistic == pytest.approx(0.0, abs=1e-12)
        assert res.p_value == pytest.approx(1.0)
        assert res.df == 5

    def test_chi2_quantile(self):
        # 3.841 is the chi-square(1) 95th percentile
        assert chi2_sf(3.841458820694124, 1) == pytest.approx(0.05, rel=1e-10)

    def test_row_scaling_invariance(self, linear_fit):
        C = np.array([[0.0, 1.0, -1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, -1.0]])
        c0 = np.array([0.01, 0.02])
        D = np.diag([3.0, -0.5])
        a = wald_test(linear_fit, C, c0)
        b = wald_test(linear_fit, D @ C, D @ c0)
        assert a.statistic == pytest.approx(b.statistic, rel=1e-9)
        assert a.df == b.df

    def test_rank_deficient_C_uses_rank(self, linear_fit):
        C = np.array([[1.0, 0, 0, 0, 0], [2.0, 0, 0, 0, 0]])
        res = wald_test(linear_fit, C, np.array([0.0, 0.0]))
        assert res.df == 1

    def test_monotone_p_in_statistic(self):
        stats = [0.5, 1.0, 2.0, 5.0, 10.0]
        ps = [chi2_sf(s, 1) for s in stats]
        assert all(a > b for a, b in zip(ps, ps[1:]))

    def test_dimension_mismatch(self, linear_fit):
        with pytest.raises(InferenceError):
            wald_test(linear_fit, np.eye(4), np.zeros(4))


class TestSingleParamTest:
    def test_linear_halves_p_value(self, linear_fit, log_fit):
        res_lin = single_param_test(linear_fit, 1)
        assert res_lin.boundary_adjusted
        assert res_lin.p_value == pytest.approx(0.5 * chi2_sf(res_lin.statistic, 1))
        res_log = single_param_test(log_fit, 1)
        assert not res_log.boundary_adjusted
        assert res_log.p_value == pytest.approx(chi2_sf(res_log.statistic, 1))

    def test_exact_halving_relation(self, linear_fit, log_fit):
        for k in range(5):
            a = single_param_test(linear_fit, k)
            tail = chi2_sf(a.statistic, 1)
            assert a.p_value == pytest.approx(0.5 * tail, rel=1e-12)

    def test_statistic_with_known_tail(self, linear_fit):
        # a statistic whose chi2_1 tail is 0.10 must report p = 0.05
        res = single_param_test(linear_fit, 0)
        # verify through the chi2 relation rather than the data
        from scipy.stats import chi2
        s = chi2.isf(0.10, df=1)
        assert 0.5 * chi2_sf(s, 1) == pytest.approx(0.05, rel=1e-9)

    def test_zero_estimate_gives_half(self):
        # mixture mass at zero: statistic 0 -> linear p-value 0.5
        W = build_grid_4nn(GridSpec(3))
        theta = ParameterVector(delta=[2.0], alpha=([0.0, 0.0],), beta=([0.3, 0.0],))
        sim = simulate_path(theta, SPEC11, W, cfg=SimulationConfig(T=300, seed=72))
        res = fit(SPEC11, W, sim.counts)
        boundary = [k for k in res.active_constraints if res.theta_flat[k] == 0.0]
        assert boundary, "expected at least one boundary estimate"
        wr = single_param_test(res, boundary[0])
        assert wr.statistic == 0.0
        assert wr.p_value == pytest.approx(0.5)

    def test_out_of_range_index(self, linear_fit):
        with pytest.raises(InferenceError):
            single_param_test(linear_fit, 9)

    def test_multi_param_boundary_unsupported(self):
        with pytest.raises(InferenceError, match="chi-bar-squared"):
            multi_param_boundary_test()


class TestQic:
    def test_equal_information_reduces_to_aic(self):
        H = np.diag([2.0, 3.0, 4.0])
        assert qic_from_parts(-100.0, H, H) == pytest.approx(200.0 + 2 * 3)

    def test_simple_value(self):
        H = np.eye(2)
        G = np.diag([2.0, 3.0])
        assert qic_from_parts(0.0, H, G) == pytest.approx(10.0)

    def test_fit_qic_consistent(self, linear_fit):
        assert qic(linear_fit) == pytest.approx(linear_fit.qic, rel=1e-12)

    def test_better_nested_fit_wins(self):
        # same trace penalty forced, higher loglik -> lower QIC
        H = np.eye(3)
        assert qic_from_parts(-90.0, H, H) < qic_from_parts(-100.0, H, H)


class TestCompareModels:
    def test_ordering(self, linear_fit):
        import copy
        better = copy.deepcopy(linear_fit)
        better.qic = linear_fit.qic - 5.0
        order = compare_models([linear_fit, better])
        assert order == [1, 0]

    def test_tie_broken_by_parameter_count(self, linear_fit):
        import copy
        small = copy.deepcopy(linear_fit)
        small.qic = linear_fit.qic
        small.theta_flat = linear_fit.theta_flat[:4]
        order = compare_models([linear_fit, small])
        assert order == [1, 0]

    def test_mixed_datasets_rejected(self, linear_fit):
        import copy
        other = copy.deepcopy(linear_fit)
        other.data_fingerprint = "0" * 64
        with pytest.raises(InferenceError, match="fingerprint"):
            compare_models([linear_fit, other])
