import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdlab.schedules import (InverseLogSchedule, PowerLawSchedule, RateExponents, Role, ScheduleError,
                              check_rm_conditions, check_sgd_conditions, eval_schedule,
                              optimal_spsa_exponent, partial_sum_growth, predict_rate, product_summable,
                              rate_bound, series_converges)

P = PowerLawSchedule


def mu(g):
    return P(1.0, g, role=Role.BIAS_BOUND)


def M(delta):
    return P(1.0, -delta, role=Role.STDDEV_BOUND)


class TestEval:
    def test_unit_at_zero(self):
        assert eval_schedule(P(1, 1), 0) == 1.0

    def test_two_thirds_power(self):
        assert eval_schedule(P(1, 2 / 3), 7) == pytest.approx(0.25, abs=1e-15)

    @pytest.mark.parametrize("t", [0, 1, 17, 10**9])
    def test_constant(self, t):
        assert eval_schedule(P(2, 0), t) == 2.0

    def test_large_t_finite(self):
        v = eval_schedule(P(1, 3.0), 2**53)
        assert 0 < v < 1e-40

    def test_array_matches_values(self):
        s = P(0.5, 0.9, 2)
        assert np.allclose(s(np.arange(50)), s.values(50), rtol=0, atol=0)

    @pytest.mark.parametrize("kw", [dict(scale=0, exponent=1), dict(scale=-1, exponent=1),
                                    dict(scale=1, exponent=1, offset=0),
                                    dict(scale=1, exponent=float("nan"))])
    def test_construction_rejects(self, kw):
        with pytest.raises(ScheduleError):
            P(**kw)

    def test_negative_t_rejected(self):
        with pytest.raises(ScheduleError):
            eval_schedule(P(1, 1), -1)

    def test_dict_round_trip(self):
        s = P(0.5, 0.9, 2, Role.INCREMENT)
        assert P.from_dict(s.to_dict()) == s

    def test_from_dict_role_mismatch(self):
        with pytest.raises(ScheduleError):
            P.from_dict({"scale": 1, "exponent": 1, "role": "increment"}, Role.STEP_SIZE)

    def test_from_dict_unknown_key(self):
        with pytest.raises(ScheduleError, match="bogus"):
            P.from_dict({"scale": 1, "exponent": 1, "bogus": 2})

    @given(scale=st.floats(1e-3, 1e3), p=st.floats(0.01, 3), t0=st.integers(1, 50),
           t=st.integers(0, 10**6))
    def test_positive_and_decreasing(self, scale, p, t0, t):
        s = P(scale, p, t0)
        assert s(t) > 0
        assert s(t + 1) < s(t)


class TestConditions:
    def test_rm_p1(self):
        r = check_rm_conditions(P(1, 1))
        assert r.all_hold

    def test_rm_p04(self):
        r = check_rm_conditions(P(1, 0.4))
        assert r.failed() == ["sum_alpha_sq_finite"]

    def test_rm_p11(self):
        r = check_rm_conditions(P(1, 1.1))
        assert r.failed() == ["sum_alpha_infinite"]

    def test_rm_wrong_role(self):
        with pytest.raises(ScheduleError):
            check_rm_conditions(P(1, 1, role=Role.BIAS_BOUND))

    def test_sgd_all_hold(self):
        assert check_sgd_conditions(P(1, 1), mu(1), M(0)).all_hold

    def test_sgd_bias_sum_diverges(self):
        r = check_sgd_conditions(P(1, 0.6), mu(0.3), M(0))
        assert r.failed() == ["sum_alpha_mu_finite"]

    def test_sgd_growing_variance(self):
        assert check_sgd_conditions(P(1, 0.95), mu(1 / 3), M(1 / 3)).all_hold

    def test_sgd_wrong_roles(self):
        with pytest.raises(ScheduleError):
            check_sgd_conditions(P(1, 1), M(0), mu(1))

    def test_report_serializes(self):
        d = check_rm_conditions(P(1, 0.4)).to_dict()
        assert d["sum_alpha_sq_finite"]["holds"] is False
        assert "2p" in d["sum_alpha_sq_finite"]["criterion"]

    def test_bertrand_series(self):
        assert not series_converges(1.0, 1.0)
        assert series_converges(1.0, 1.5)
        assert not product_summable(P(1, 1), InverseLogSchedule(1.0))

    @given(p=st.floats(0.05, 3.0))
    def test_rm_matches_p_series(self, p):
        r = check_rm_conditions(P(1, p))
        assert r["sum_alpha_sq_finite"] == (p > 0.5)
        assert r["sum_alpha_infinite"] == (p <= 1)


class TestPartialSums:
    @pytest.mark.parametrize("p", [0.1, 0.3, 0.45])
    def test_divergent_grows_tenfold(self, p):
        assert partial_sum_growth(P(1, p)) > 10

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_convergent_flat(self, p):
        assert partial_sum_growth(P(1, p)) < 1.01

    @pytest.mark.parametrize("p", [0.6, 0.9])
    def test_slow_divergence_inconclusive(self, p):
        # divergent, yet two decades of terms add less than 10x
        assert not product_summable(P(1, p))
        assert partial_sum_growth(P(1, p)) < 10


class TestRates:
    def test_unbiased_limit(self):
        assert predict_rate(1e-9, 0.0, 1.0) == pytest.approx(1.0, abs=1e-8)

    def test_spsa_k1_at_phi_zero(self):
        assert predict_rate(0.0, 1 / 3, 1 / 3) == pytest.approx(1 / 3)

    def test_balanced(self):
        assert predict_rate(0.1, 0.2, 0.5) == pytest.approx(0.4)

    def test_unbiased_bounded_variance(self):
        assert predict_rate(0.1, 0.0, 1.0) == pytest.approx(0.8)

    @pytest.mark.parametrize("args,word", [((0.3, 0.2, 1.0), "0.5 - delta"), ((0.2, 0.0, 0.1), "gamma"),
                                           ((-0.1, 0.0, 1.0), "phi"), ((0.1, -0.1, 1.0), "delta"),
                                           ((0.1, 0.0, 0.0), "gamma")])
    def test_domain_errors_name_bound(self, args, word):
        with pytest.raises(ScheduleError, match=word):
            predict_rate(*args)

    def test_rate_exponents_default_c(self):
        r = RateExponents(0.1, 0.2, 0.5)
        assert r.C == 0.1 and r.nu == pytest.approx(0.4)

    @pytest.mark.parametrize("k,s,nu", [(1, 1 / 3, 1 / 3), (2, 1 / 4, 1 / 2)])
    def test_optimal_spsa(self, k, s, nu):
        got = optimal_spsa_exponent(k, 0.0)
        assert got == pytest.approx((s, nu))

    def test_optimal_spsa_high_order(self):
        assert optimal_spsa_exponent(100)[1] == pytest.approx(100 / 102)

    def test_optimal_spsa_rejects_k0(self):
        with pytest.raises(ScheduleError):
            optimal_spsa_exponent(0)

    @pytest.mark.parametrize("k", [1, 2, 3, 5, 10])
    def test_optimal_spsa_matches_grid_search(self, k):
        grid = np.round(np.arange(0, 0.5 + 1e-12, 1e-4), 10)
        vals = np.minimum(1 - 2 * grid, k * grid)
        s_best = grid[np.argmax(vals)]
        s, nu = optimal_spsa_exponent(k, 0.0)
        assert nu == pytest.approx(vals.max(), abs=1e-3)
        assert s == pytest.approx(s_best, abs=1e-4)

    @given(phi=st.floats(0.001, 0.2), delta=st.floats(0, 0.2), gamma=st.floats(0.25, 2),
           dphi=st.floats(0, 0.05), ddelta=st.floats(0, 0.05), dgamma=st.floats(0, 1))
    def test_monotonicity(self, phi, delta, gamma, dphi, ddelta, dgamma):
        base = rate_bound(phi, delta, gamma)
        assert rate_bound(phi + dphi, delta, gamma) <= base + 1e-15
        assert rate_bound(phi, delta + ddelta, gamma) <= base + 1e-15
        assert rate_bound(phi, delta, gamma + dgamma) >= base - 1e-15

    @settings(max_examples=50)
    @given(phi=st.floats(0.001, 0.24), delta=st.floats(0, 0.24), gamma=st.floats(0.25, 2))
    def test_formula_exact(self, phi, delta, gamma):
        assert predict_rate(phi, delta, gamma) == min(1 - 2 * (phi + delta), gamma - phi)
        assert math.isfinite(predict_rate(phi, delta, gamma))
