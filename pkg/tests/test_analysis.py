import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdlab.analysis import (FAIL, NOT_MET, PASS, AnalysisError, RsProcessSpec, convergence_verdict,
                             fit_rate, rate_hypotheses, simulate_rs_process, two_branch_mean,
                             verify_rs_convergence, verify_rs_rate)
from sgdlab.objectives import quadratic, sinsq
from sgdlab.optimize import SgdRun, geometric_steps, run_sgd
from sgdlab.oracles import ExactNoisy
from sgdlab.schedules import PowerLawSchedule, Role

P = PowerLawSchedule
T = np.arange(1, 10**5 + 1, dtype=float)


def drift(scale, p):
    return P(scale, p, 2, Role.DRIFT)


class TestFitRate:
    def test_inverse_t(self):
        assert fit_rate(T, 1 / T).lambda_hat == pytest.approx(1.0, abs=1e-6)

    def test_cube_root(self):
        assert fit_rate(T, 5 * T ** (-1 / 3)).lambda_hat == pytest.approx(1 / 3, abs=1e-3)

    def test_oscillating(self):
        # the tail window must span about one period of cos(log t)
        t = geometric_steps(10**6, 1.01)[1:].astype(float)
        z = (2 + np.cos(np.log(t))) / t
        assert 0.9 <= fit_rate(t, z).lambda_hat <= 1.1

    def test_geometric_grid(self):
        s = geometric_steps(10**6)[1:].astype(float)
        fit = fit_rate(s, s ** -0.7)
        assert fit.lambda_hat == pytest.approx(0.7, abs=1e-9)
        assert fit.n_support >= 20 and fit.r_squared > 0.999999

    def test_zero_floored(self):
        z = np.zeros_like(T)
        assert math.isfinite(fit_rate(T, z).lambda_hat)

    def test_too_few_points(self):
        with pytest.raises(AnalysisError):
            fit_rate(np.arange(1, 50.0), np.ones(49))

    def test_negative_rejected(self):
        with pytest.raises(AnalysisError):
            fit_rate(T, -np.ones_like(T))

    @settings(max_examples=50, deadline=None)
    @given(c=st.floats(1e-6, 1e6), p=st.floats(0.1, 2.0), seed=st.integers(0, 100))
    def test_scale_invariant(self, c, p, seed):
        noise = np.exp(np.random.default_rng(seed).normal(0, 0.5, T.size))
        z = T ** -p * noise
        a = fit_rate(T, z).lambda_hat
        b = fit_rate(T, c * z).lambda_hat
        assert a == pytest.approx(b, abs=1e-9)


class TestRsProcess:
    def test_halving(self):
        z = simulate_rs_process(RsProcessSpec(P(0.5, 0.0)), 10).z
        assert np.array_equal(z, 0.5 ** np.arange(11))

    def test_telescoping(self):
        z = simulate_rs_process(RsProcessSpec(P(1.0, 1.0, 2)), 1000).z
        assert np.allclose(z, 1.0 / (np.arange(1001) + 1), rtol=1e-12)

    def test_nonnegative_and_reproducible(self):
        spec = RsProcessSpec(P(1.0, 0.9, 2), drift(1, 2), drift(1, 2), u=0.5)
        a = simulate_rs_process(spec, 5000, seed=3)
        b = simulate_rs_process(spec, 5000, seed=3)
        assert np.all(a.z >= 0) and np.array_equal(a.z, b.z)

    def test_rejects_large_alpha(self):
        with pytest.raises(AnalysisError):
            RsProcessSpec(P(2.0, 0.5))
        with pytest.raises(AnalysisError):
            RsProcessSpec(P(0.5, 0.5), u=1.0)

    @settings(max_examples=50, deadline=None)
    @given(u=st.floats(0, 0.99), seed=st.integers(0, 2**32), eta=st.sampled_from(["identity", "saturating"]),
           z0=st.floats(1e-3, 1e3))
    def test_conditional_mean_two_branch(self, u, seed, eta, z0):
        spec = RsProcessSpec(P(1.0, 0.7, 2), drift(0.5, 1.5), drift(2.0, 2.0), eta, u, z0)
        path = simulate_rs_process(spec, 200, seed)
        for t in np.random.default_rng(seed).integers(0, 200, 10):
            zt = path.z[t]
            m = spec.mean_step(int(t), zt)
            assert path.z[t + 1] in (m * (1 - u), m * (1 + u))
            assert two_branch_mean(spec, int(t), zt) == pytest.approx(m, rel=1e-12, abs=1e-300)
            assert abs(0.5 * (m * (1 - u) + m * (1 + u)) - m) <= 1e-12 * max(1.0, m)


class TestVerifiers:
    def test_convergence_passes(self):
        spec = RsProcessSpec(P(1.0, 0.9, 2), drift(1, 2), drift(1, 2), u=0.5)
        paths = [simulate_rs_process(spec, 20000, seed=s) for s in range(10)]
        v = verify_rs_convergence(paths, spec, tol=1e-2, threshold=1e-2)
        assert v.outcome == PASS and v.checks["final_below_threshold"]

    def test_summable_alpha_positive_limit(self):
        spec = RsProcessSpec(P(1.0, 1.5, 2))
        v = verify_rs_convergence([simulate_rs_process(spec, 10**5)], spec)
        assert v.outcome == PASS
        assert "final_below_threshold" not in v.checks
        assert v.finals[0] > 0.1

    def test_gate_refuses(self):
        spec = RsProcessSpec(P(1.0, 0.9, 2), f=drift(0.1, 0.0))
        v = verify_rs_convergence([simulate_rs_process(spec, 100)], spec)
        assert v.outcome == NOT_MET and v.exit_code == 3

    def test_counterexample_schedules_gated(self):
        # g_t = alpha_t beta_t with beta_t = 1/log(t+2) is not summable
        from sgdlab.schedules import InverseLogSchedule, product_summable
        assert not product_summable(P(1.0, 1.0), InverseLogSchedule(1.0))

    def test_rate_pass(self):
        spec = RsProcessSpec(P(1.0, 0.9, 2), g=drift(1.0, 2.5), u=0.5)
        paths = [simulate_rs_process(spec, 10**5, seed=s) for s in range(5)]
        assert verify_rs_rate(paths, spec, 0.8).outcome == PASS

    def test_rate_boundary_rejected(self):
        spec = RsProcessSpec(P(1.0, 0.9, 2))
        v = verify_rs_rate([simulate_rs_process(spec, 1000)], spec, 0.0)
        assert v.outcome == NOT_MET and "lambda_in_open_unit_interval" in v.reason

    def test_rate_deterministic_inverse_t(self):
        spec = RsProcessSpec(P(1.0, 1.0, 2))
        assert verify_rs_rate([simulate_rs_process(spec, 10**5)], spec, 0.5).outcome == PASS

    def test_rate_gate_arithmetic(self):
        spec = RsProcessSpec(P(1.0, 0.9, 2), g=drift(1.0, 1.6))
        h = rate_hypotheses(spec, 0.8)
        assert not h["weighted_g_summable"]
        assert rate_hypotheses(spec, 0.5)["weighted_g_summable"]
        assert not rate_hypotheses(RsProcessSpec(P(0.4, 1.0, 2)), 0.5)["alpha_dominates_lambda_over_t"]


def _trajs(n, horizon=20000, alpha=P(0.5, 0.9, 2)):
    o = ExactNoisy(variance=P(1.0, 0.0, role=Role.STDDEV_BOUND))
    return [run_sgd(SgdRun(sinsq(2), o, alpha, horizon=horizon, seed=s)) for s in range(n)]


class TestConvergenceVerdict:
    def test_geometric_gd_passes(self):
        obj = quadratic(np.diag([1.0, 2.0]))
        tr = run_sgd(SgdRun(obj, ExactNoisy(), P(1 / obj.L, 0.0), horizon=2000))
        v = convergence_verdict([tr] * 10, nu=0.8)
        assert v.outcome == PASS and v.median_rate("J") > 1

    def test_needs_seeds(self):
        with pytest.raises(AnalysisError):
            convergence_verdict(_trajs(3), nu=0.8)

    def test_diverged_seed_fails(self):
        trajs = _trajs(10)
        bad = run_sgd(SgdRun(quadratic([[1.0]]), ExactNoisy(), P(3.0, 0.0), np.array([1.0]), 500, seed=9))
        assert bad.diverged
        v = convergence_verdict(trajs[:9] + [bad], nu=0.1, slack=0.5, threshold=1.0)
        assert v.outcome == FAIL and not v.checks["no_divergence"]

    def test_csv_schema(self):
        v = convergence_verdict(_trajs(10), nu=0.8)
        lines = v.to_csv().splitlines()
        assert lines[0] == "seed,lambda_hat_J,lambda_hat_grad,final_J,flag"
        assert len(lines) == 1 + 10 + 3
        assert lines[-1].startswith(f"verdict,{v.outcome}")
