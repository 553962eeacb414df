"""Test objectives with exact gradients and structural metadata.

All objectives are shifted so that their infimum is zero.  Each carries a
gradient Lipschitz constant ``L`` and, where it holds, a Polyak-Lojasiewicz
constant ``K`` with ``|grad J|^2 >= K J``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K_


class ObjectiveError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Objective:
    name: str
    dim: int
    code: int
    data: np.ndarray
    L: float
    K: float | None = None
    minimizer: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def value(self, theta) -> float:
        return K_.obj_value(self.code, self.data, _vec(theta, self.dim))

    def grad(self, theta) -> np.ndarray:
        out = np.empty(self.dim)
        K_.obj_grad(self.code, self.data, _vec(theta, self.dim), out)
        return out

    def rho(self, theta) -> float | None:
        """Distance to the (singleton) minimizer set, when it is known."""
        if self.minimizer is None:
            return None
        return float(np.linalg.norm(_vec(theta, self.dim) - self.minimizer))

    @property
    def has_rho(self) -> bool:
        return self.minimizer is not None

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}


def _vec(theta, dim) -> np.ndarray:
    th = np.ascontiguousarray(theta, dtype=np.float64).reshape(-1)
    if th.size != dim:
        raise ObjectiveError(f"expected a vector of length {dim}, got {th.size}")
    return th


def quadratic(A) -> Objective:
    """J = 0.5 theta^T A theta with A symmetric positive definite."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T):
        raise ObjectiveError("A must be square and symmetric")
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= 0:
        raise ObjectiveError("A must be positive definite")
    d = A.shape[0]
    return Objective("quadratic", d, K_.QUADRATIC, np.ascontiguousarray(A.ravel()),
                     L=float(eig[-1]), K=2.0 * float(eig[0]), minimizer=np.zeros(d),
                     params={"dim": d, "matrix": A.tolist()})


def random_quadratic(dim: int, spectrum=None, seed: int = 0) -> Objective:
    """Quadratic with the given eigenvalues (default linspace(1, 10)) in a random basis."""
    spectrum = np.linspace(1.0, 10.0, dim) if spectrum is None else np.asarray(spectrum, float)
    if spectrum.size != dim:
        raise ObjectiveError("spectrum length must equal dim")
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
    A = q @ np.diag(spectrum) @ q.T
    obj = quadratic(0.5 * (A + A.T))
    return Objective(obj.name, dim, obj.code, obj.data, obj.L, obj.K, obj.minimizer,
                     {"dim": dim, "spectrum": spectrum.tolist(), "seed": seed})


def sinsq(dim: int) -> Objective:
    """Separable sum of theta_i^2 + sin^2 theta_i: nonconvex, PL with K = 1.

    L = 4 since the second derivative 2 + 2 cos(2 theta) ranges over [0, 4].
    """
    return Objective("sinsq", dim, K_.SINSQ, np.zeros(0), L=4.0, K=1.0,
                     minimizer=np.zeros(dim), params={"dim": dim})


KL_J5 = 25.0 + 4.0 * np.sin(5.0) ** 2
KL_DJ5 = 10.0 + 4.0 * np.sin(10.0)


def klprime(dim: int = 1) -> Objective:
    """Separable sum of the even KL' example: PL fails, KL' holds.

    Per coordinate s(x) = x^2 + 4 sin^2 x on |x| <= 5, then a saturating
    exponential tail matched in value and slope at 5.  |s''| is at most 10 on
    the core and 2 s'(5) on the tail, so L = max(10, 2 s'(5)).
    """
    return Objective("klprime", dim, K_.KLPRIME, np.zeros(0), L=float(max(10.0, 2 * KL_DJ5)),
                     K=None, minimizer=np.zeros(dim), params={"dim": dim})


def finite_sum_ls(m: int, dim: int, data_seed: int = 0) -> Objective:
    """J = (1/m) sum_i (y_i - <x_i, theta>)^2 on consistent data, so J* = 0."""
    if m < dim:
        raise ObjectiveError("need m >= dim for a unique minimizer")
    rng = np.random.default_rng(data_seed)
    X = rng.standard_normal((m, dim))
    theta_star = rng.standard_normal(dim)
    y = X @ theta_star
    H = 2.0 * X.T @ X / m
    eig = np.linalg.eigvalsh(H)
    data = np.ascontiguousarray(np.concatenate([X.ravel(), y]))
    return Objective("finite_sum_ls", dim, K_.FINITE_SUM_LS, data, L=float(eig[-1]),
                     K=2.0 * float(eig[0]), minimizer=theta_star,
                     params={"m": m, "dim": dim, "data_seed": data_seed})


def finite_sum_data(obj: Objective) -> tuple[np.ndarray, np.ndarray]:
    if obj.code != K_.FINITE_SUM_LS:
        raise ObjectiveError("not a finite-sum objective")
    d = obj.dim
    m = obj.data.size // (d + 1)
    return obj.data[:m * d].reshape(m, d), obj.data[m * d:]


CATALOG = {
    "quadratic": random_quadratic,
    "sinsq": sinsq,
    "klprime": klprime,
    "finite_sum_ls": finite_sum_ls,
}


def make_objective(spec: dict) -> Objective:
    """Build a catalog objective from ``{"name": ..., **params}``."""
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in CATALOG:
        raise ObjectiveError(f"unknown objective {name!r}; choose from {sorted(CATALOG)}")
    if name == "quadratic" and "matrix" in spec:
        extra = set(spec) - {"matrix", "dim"}
        if extra:
            raise ObjectiveError(f"unknown objective key(s): {sorted(extra)}")
        return quadratic(spec["matrix"])
    if "dim" in spec:
        spec["dim"] = int(spec["dim"])
    try:
        return CATALOG[name](**spec)
    except TypeError as exc:
        raise ObjectiveError(f"bad parameters for {name!r}: {exc}") from None


# -- Class-B functions --------------------------------------------------------

@dataclass(frozen=True)
class ClassBFunction:
    """A map eta: R+ -> R+ with eta(0) = 0 and positive infimum on every [eps, M]."""

    fn: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, r):
        return self.fn(np.asarray(r, dtype=np.float64))

    def interval_infimum(self, eps: float, big_m: float, n: int = 10_001) -> float:
        return float(np.min(self(np.linspace(eps, big_m, n))))

    def check(self, pairs, n: int = 10_001) -> bool:
        if float(self(np.array([0.0]))[0]) != 0.0:
            return False
        return all(self.interval_infimum(e, m, n) > 0 for e, m in pairs)


def kl_ratio(theta) -> np.ndarray:
    """[s'(x)]^2 / s(x) for the scalar KL' example; positive away from zero."""
    x = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        v, dv = K_.kl_scalar(xi)
        out[i] = dv * dv / v if v > 0 else 0.0
    return out


# -- structural checks ----------------------------------------------------------

@dataclass(frozen=True)
class ViolationReport:
    worst: float
    worst_point: np.ndarray
    violations: int
    n_points: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def sample_box(dim: int, n: int, half_width: float = 10.0, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-half_width, half_width, size=(n, dim))


def _values_and_gradsq(obj: Objective, points):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    J = np.array([obj.value(p) for p in pts])
    G = np.array([float(np.dot(g, g)) for g in (obj.grad(p) for p in pts)])
    return pts, J, G


def check_smoothness_bound(obj: Objective, points, rtol: float = 1e-9) -> ViolationReport:
    """|grad J|^2 <= 2 L J at every point, up to rtol * (1 + 2 L J)."""
    pts, J, G = _values_and_gradsq(obj, points)
    excess = G - 2.0 * obj.L * J
    bad = excess > rtol * (1.0 + 2.0 * obj.L * J)
    i = int(np.argmax(excess))
    return ViolationReport(float(excess[i]), pts[i], int(bad.sum()), len(pts))


def check_pl(obj: Objective, points, rtol: float = 1e-9) -> ViolationReport:
    """|grad J|^2 >= K J at every point, up to rtol * (1 + K J)."""
    if obj.K is None:
        raise ObjectiveError(f"{obj.name} has no PL constant")
    pts, J, G = _values_and_gradsq(obj, points)
    slack = G - obj.K * J
    bad = slack < -rtol * (1.0 + obj.K * J)
    i = int(np.argmin(slack))
    return ViolationReport(float(slack[i]), pts[i], int(bad.sum()), len(pts))


def fd_gradient(obj: Objective, theta, step: float = 1e-6) -> np.ndarray:
    th = np.asarray(theta, dtype=np.float64)
    out = np.empty(obj.dim)
    for i in range(obj.dim):
        e = np.zeros(obj.dim)
        e[i] = step
        out[i] = (obj.value(th + e) - obj.value(th - e)) / (2 * step)
    return out


def check_gradient(obj: Objective, points, step: float = 1e-6) -> float:
    """Max over points of |fd - grad|_inf / max(1, |grad|_inf) with central differences."""
    worst = 0.0
    for p in np.atleast_2d(np.asarray(points, dtype=np.float64)):
        g = obj.grad(p)
        err = np.max(np.abs(fd_gradient(obj, p, step) - g)) / max(1.0, np.max(np.abs(g)))
        worst = max(worst, float(err))
    return worst
