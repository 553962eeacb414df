import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdlab.objectives import (ClassBFunction, ObjectiveError, check_gradient, check_pl,
                               check_smoothness_bound, fd_gradient, finite_sum_data, finite_sum_ls,
                               kl_ratio, klprime, make_objective, quadratic, random_quadratic,
                               sample_box, sinsq)

finite = st.floats(-10, 10, allow_nan=False)


def catalog(dim=3):
    return [random_quadratic(dim, seed=1), sinsq(dim), klprime(dim), finite_sum_ls(20, dim, 2)]


class TestValues:
    def test_quadratic_half_norm(self):
        obj = quadratic(np.eye(2))
        assert obj.value([3.0, 4.0]) == 12.5
        assert np.array_equal(obj.grad([3.0, 4.0]), [3.0, 4.0])

    def test_sinsq_gradient(self):
        assert sinsq(1).grad([0.3])[0] == pytest.approx(2 * 0.3 + math.sin(0.6), rel=1e-15)

    def test_sinsq_at_half_pi(self):
        assert sinsq(1).value([math.pi / 2]) == pytest.approx(math.pi ** 2 / 4 + 1)

    def test_klprime_core_and_tail(self):
        obj = klprime(1)
        assert obj.value([1.0]) == pytest.approx(1 + 4 * math.sin(1) ** 2)
        # even, saturating and increasing beyond the knot
        assert obj.value([7.0]) == obj.value([-7.0])
        assert obj.value([5.0]) < obj.value([7.0]) < obj.value([50.0])

    def test_finite_sum_zero_at_solution(self):
        obj = finite_sum_ls(30, 4, data_seed=3)
        assert obj.value(obj.minimizer) == pytest.approx(0, abs=1e-25)
        X, y = finite_sum_data(obj)
        assert X.shape == (30, 4) and np.allclose(X @ obj.minimizer, y)

    def test_constants(self):
        q = quadratic(np.diag([1.0, 3.0]))
        assert (q.L, q.K) == (3.0, 2.0)
        assert (sinsq(2).L, sinsq(2).K) == (4.0, 1.0)
        assert klprime().K is None

    def test_wrong_length(self):
        with pytest.raises(ObjectiveError):
            sinsq(2).value([1.0])

    def test_not_pd(self):
        with pytest.raises(ObjectiveError):
            quadratic(np.diag([1.0, -1.0]))

    def test_make_objective(self):
        assert make_objective({"name": "sinsq", "dim": 3}).dim == 3
        assert make_objective({"name": "quadratic", "matrix": [[2.0]]}).L == 2.0
        with pytest.raises(ObjectiveError):
            make_objective({"name": "rosenbrock"})
        with pytest.raises(ObjectiveError):
            make_objective({"name": "sinsq", "dim": 2, "width": 3})


class TestSmoothness:
    def test_tight_for_identity(self):
        obj = quadratic([[1.0]])
        g = obj.grad([1.0])[0]
        assert g * g == 2 * obj.L * obj.value([1.0])
        assert check_smoothness_bound(obj, [[1.0]]).passed

    def test_sinsq_minimizer(self):
        rep = check_smoothness_bound(sinsq(1), [[0.0]])
        assert rep.passed and rep.worst == 0.0

    def test_sinsq_half_pi(self):
        obj = sinsq(1)
        x = math.pi / 2
        assert obj.grad([x])[0] ** 2 == pytest.approx(math.pi ** 2)
        assert 2 * obj.L * obj.value([x]) == pytest.approx(8 * (math.pi ** 2 / 4 + 1))
        assert check_smoothness_bound(obj, [[x]]).passed

    @pytest.mark.parametrize("dim", [1, 2, 5, 10])
    def test_catalog_on_box(self, dim):
        pts = sample_box(dim, 2000, seed=dim)
        for obj in catalog(dim):
            assert check_smoothness_bound(obj, pts).violations == 0, obj.name


class TestPL:
    def test_sinsq_at_one(self):
        obj = sinsq(1)
        g = obj.grad([1.0])[0]
        assert g == pytest.approx(2.909, abs=1e-3)
        assert g * g >= obj.value([1.0])

    def test_quadratic_equality_on_rays(self):
        obj = quadratic(np.eye(3))
        for r in (0.5, 2.0, 7.0):
            th = r * np.array([1.0, -2.0, 0.5])
            g = obj.grad(th)
            assert g @ g == pytest.approx(obj.K * obj.value(th), rel=1e-14)

    def test_at_minimizer(self):
        for obj in (sinsq(2), random_quadratic(2), finite_sum_ls(10, 2)):
            rep = check_pl(obj, [obj.minimizer])
            assert rep.passed and rep.worst == pytest.approx(0, abs=1e-20)

    def test_missing_constant(self):
        with pytest.raises(ObjectiveError):
            check_pl(klprime(1), [[1.0]])

    @pytest.mark.parametrize("dim", [1, 3, 10])
    def test_catalog_on_box(self, dim):
        pts = sample_box(dim, 2000, seed=10 + dim)
        for obj in (random_quadratic(dim, seed=4), sinsq(dim), finite_sum_ls(25, dim, 5)):
            assert check_pl(obj, pts).violations == 0, obj.name

    def test_klprime_fails_pl(self):
        # the gradient-to-value ratio vanishes in the tail, so no K works
        r = kl_ratio([5.0, 10.0, 20.0])
        assert r[0] > r[1] > r[2] > 0 and r[2] < 1e-10


class TestGradients:
    def test_quadratic_diag(self):
        obj = quadratic(np.diag([1.0, 2.0]))
        assert np.array_equal(obj.grad([1.0, 1.0]), [1.0, 2.0])
        assert check_gradient(obj, [[1.0, 1.0]]) <= 1e-6

    def test_sinsq_fd(self):
        assert check_gradient(sinsq(1), [[0.3]]) <= 1e-8

    def test_klprime_seam_one_sided(self):
        obj = klprime(1)
        h = 1e-6
        left = (obj.value([5.0]) - obj.value([5.0 - h])) / h
        right = (obj.value([5.0 + h]) - obj.value([5.0])) / h
        assert abs(left - right) <= 1e-4
        assert obj.grad([5.0])[0] == pytest.approx(left, abs=1e-4)

    @pytest.mark.parametrize("dim", [1, 4])
    def test_catalog_fd(self, dim):
        pts = sample_box(dim, 300, seed=20 + dim)
        for obj in catalog(dim):
            assert check_gradient(obj, pts) <= 1e-5, obj.name

    @settings(max_examples=40, deadline=None)
    @given(st.lists(finite, min_size=3, max_size=3))
    def test_fd_property(self, th):
        for obj in catalog(3):
            g = obj.grad(th)
            assert np.max(np.abs(fd_gradient(obj, th) - g)) <= 1e-5 * max(1, np.max(np.abs(g)))


class TestClassB:
    def test_klprime_ratio_class_b(self):
        eta = ClassBFunction(lambda r: np.where(r == 0, 0.0, kl_ratio(np.where(r == 0, 1.0, r))), "kl")
        assert eta.check([(0.01, 1.0), (1.0, 100.0)])

    def test_rejects_vanishing_interior(self):
        eta = ClassBFunction(lambda r: np.maximum(0.0, np.abs(r - 2.0) - 0.5), "gap")
        assert not eta.check([(1.0, 4.0)])

    def test_rejects_nonzero_origin(self):
        assert not ClassBFunction(lambda r: r + 1.0).check([(0.1, 1.0)])

    def test_discontinuous_allowed(self):
        eta = ClassBFunction(lambda r: np.where(r < 1, r, 0.5), "step")
        assert eta.check([(0.01, 1.0), (1.0, 10.0)])

    @given(st.floats(1e-3, 50).filter(lambda x: x != 0))
    def test_ratio_positive(self, x):
        assert kl_ratio([x])[0] > 0 and kl_ratio([-x])[0] > 0


class TestRho:
    @settings(max_examples=60)
    @given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
    def test_one_lipschitz(self, a, b):
        for obj in (sinsq(2), random_quadratic(2), finite_sum_ls(8, 2)):
            assert abs(obj.rho(a) - obj.rho(b)) <= np.linalg.norm(np.subtract(a, b)) + 1e-12

    def test_zero_at_minimizer(self):
        obj = finite_sum_ls(10, 3)
        assert obj.rho(obj.minimizer) == 0.0
