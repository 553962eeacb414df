"""SGD and stochastic-approximation iteration engines with trajectory recording."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K_
from .objectives import Objective
from .oracles import DIRECTIONS, NOISE_KINDS, Oracle, OracleError
from .schedules import InverseLogSchedule, PowerLawSchedule, Role

CSV_COLUMNS = ("t", "J", "grad_sq", "rho", "V", "evals")


class RunConfigError(ValueError):
    pass


def geometric_steps(horizon: int, ratio: float = 1.05) -> np.ndarray:
    """Steps 0, 1 and ceil(ratio**j) up to the horizon, which is always included."""
    if ratio <= 1:
        raise RunConfigError("record ratio must exceed 1")
    n = int(math.log(max(horizon, 1)) / math.log(ratio)) + 2
    steps = np.ceil(ratio ** np.arange(n)).astype(np.int64)
    steps = np.unique(np.concatenate([[0], steps[steps <= horizon], [horizon]]))
    return steps


def record_steps(horizon: int, stride: int | None = None, ratio: float = 1.05) -> np.ndarray:
    if stride is None:
        return geometric_steps(horizon, ratio)
    if stride < 1:
        raise RunConfigError("stride must be >= 1")
    return np.unique(np.concatenate([np.arange(0, horizon + 1, stride), [horizon]])).astype(np.int64)


def default_theta0(dim: int, norm: float = 5.0) -> np.ndarray:
    return np.full(dim, norm / math.sqrt(dim))


@dataclass
class Trajectory:
    t: np.ndarray
    J: np.ndarray | None = None
    grad_sq: np.ndarray | None = None
    rho: np.ndarray | None = None
    V: np.ndarray | None = None
    evals: np.ndarray | None = None
    theta_final: np.ndarray | None = None
    diverged: bool = False
    final_step: int = 0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def series(self, name: str) -> np.ndarray:
        if name == "rho_sq":
            return None if self.rho is None else self.rho ** 2
        out = getattr(self, name, None)
        if out is None:
            raise KeyError(f"trajectory has no {name!r} series")
        return out

    def final(self, name: str) -> float:
        return float(self.series(name)[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = [self.J, self.grad_sq, self.rho, self.V]
        for i, t in enumerate(self.t):
            row = [str(int(t))]
            for c in cols:
                row.append("" if c is None else repr(float(c[i])))
            row.append("" if self.evals is None else str(int(self.evals[i])))
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"unexpected header {rows[0]}")
        body = rows[1:]

        def col(j, conv):
            vals = [r[j] for r in body]
            if all(v == "" for v in vals):
                return None
            return np.array([conv(v) for v in vals])

        return cls(t=col(0, int), J=col(1, float), grad_sq=col(2, float), rho=col(3, float),
                   V=col(4, float), evals=col(5, int))


# -- SGD -------------------------------------------------------------------------

@dataclass(frozen=True)
class SgdRun:
    objective: Objective
    oracle: Oracle
    alpha: PowerLawSchedule
    theta0: np.ndarray | None = None
    horizon: int = 1000
    stride: int | None = None
    record_ratio: float = 1.05
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise RunConfigError("horizon must be >= 1")
        if self.alpha.role != Role.STEP_SIZE:
            raise RunConfigError("alpha must be a step-size schedule")
        if self.theta0 is not None:
            th = np.asarray(self.theta0, dtype=float)
            if th.shape != (self.objective.dim,) or not np.all(np.isfinite(th)):
                raise RunConfigError("theta0 must be a finite vector of the objective's dimension")


def run_sgd(run: SgdRun, rng: np.random.Generator | None = None) -> Trajectory:
    """theta_{t+1} = theta_t - alpha_t h_{t+1} for t < T.

    Runs whose iterate norm exceeds 1e12 (or turns non-finite) are flagged
    diverged and truncated at that step.
    """
    obj = run.objective
    try:
        packed = run.oracle.pack(obj)
    except OracleError as exc:
        raise RunConfigError(str(exc)) from None
    theta0 = default_theta0(obj.dim) if run.theta0 is None else np.asarray(run.theta0, dtype=float)
    steps = record_steps(run.horizon, run.stride, run.record_ratio)
    rng = np.random.default_rng(run.seed) if rng is None else rng
    thetas, evals, th, diverged, last = K_.sgd_loop(
        obj.code, obj.data, run.oracle.code, packed, np.array(run.alpha.packed()),
        np.ascontiguousarray(theta0), int(run.horizon), steps, rng)
    J = np.array([obj.value(p) for p in thetas])
    G = np.array([float(np.dot(g, g)) for g in (obj.grad(p) for p in thetas)])
    rho = np.array([obj.rho(p) for p in thetas]) if obj.has_rho else None
    return Trajectory(t=steps[:len(thetas)], J=J, grad_sq=G, rho=rho, evals=evals,
                      theta_final=th, diverged=bool(diverged), final_step=int(last), seed=run.seed)


# -- stochastic approximation -------------------------------------------------------

FIELDS = {"linear": K_.FIELD_LINEAR, "saturating": K_.FIELD_SATURATING}


@dataclass(frozen=True)
class SaProblem:
    """Root finding for f with f(0) = 0 and a quadratic Lyapunov function V = theta^T P theta.

    ``decay`` is either a constant c > 0 with <grad V, f> <= -c |theta|^2, or a
    callable psi (Class B) with <grad V, f> <= -psi(|theta|).
    """

    name: str
    dim: int
    rate: float = 1.0
    P: np.ndarray | None = None
    lipschitz: float = 1.0
    decay: object = None

    def f(self, theta) -> np.ndarray:
        out = np.empty(self.dim)
        K_.sa_field(FIELDS[self.name], self.rate, np.ascontiguousarray(theta, dtype=float), out)
        return out

    @property
    def Pm(self) -> np.ndarray:
        return np.eye(self.dim) if self.P is None else np.asarray(self.P, dtype=float)

    def V(self, theta) -> float:
        th = np.asarray(theta, dtype=float)
        return float(th @ self.Pm @ th)

    def grad_V(self, theta) -> np.ndarray:
        return 2.0 * self.Pm @ np.asarray(theta, dtype=float)

    @property
    def ab(self) -> tuple[float, float]:
        e = np.linalg.eigvalsh(self.Pm)
        return float(e[0]), float(e[-1])

    @property
    def has_rate(self) -> bool:
        return not callable(self.decay)

    def to_dict(self):
        return {"name": self.name, "dim": self.dim, "rate": self.rate}


def linear_problem(dim: int, rate: float = 1.0) -> SaProblem:
    """f = -rate * theta, V = |theta|^2: <grad V, f> = -2 rate |theta|^2."""
    return SaProblem("linear", dim, rate, None, lipschitz=rate, decay=2.0 * rate)


def saturating_problem(dim: int, rate: float = 1.0) -> SaProblem:
    """f = -rate * theta / (1 + |theta|): <grad V, f> = -psi(|theta|), psi(r) = 2 rate r^2/(1+r)."""
    return SaProblem("saturating", dim, rate, None, lipschitz=rate,
                     decay=lambda r: 2.0 * rate * r * r / (1.0 + r))


SA_CATALOG = {"linear": linear_problem, "saturating": saturating_problem}


def make_problem(spec: dict) -> SaProblem:
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in SA_CATALOG:
        raise RunConfigError(f"unknown SA problem {name!r}; choose from {sorted(SA_CATALOG)}")
    extra = set(spec) - {"dim", "rate"}
    if extra:
        raise RunConfigError(f"unknown SA problem key(s): {sorted(extra)}")
    return SA_CATALOG[name](int(spec.get("dim", 2)), float(spec.get("rate", 1.0)))


@dataclass(frozen=True)
class ProblemCheck:
    sandwich_ok: bool
    decay_ok: bool
    lipschitz_ok: bool

    @property
    def passed(self):
        return self.sandwich_ok and self.decay_ok and self.lipschitz_ok


def check_sa_problem(problem: SaProblem, points, rtol: float = 1e-9) -> ProblemCheck:
    """a|theta|^2 <= V <= b|theta|^2, the decay inequality and Lipschitz f on sampled points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = problem.ab
    sandwich = decay = lip = True
    prev = None
    for p in pts:
        n2 = float(p @ p)
        v = problem.V(p)
        sandwich &= a * n2 * (1 - rtol) <= v <= b * n2 * (1 + rtol) + 1e-300
        vdot = float(problem.grad_V(p) @ problem.f(p))
        bound = problem.decay * n2 if problem.has_rate else float(problem.decay(math.sqrt(n2)))
        decay &= vdot <= -bound + rtol * (1 + abs(bound))
        if prev is not None:
            lhs = np.linalg.norm(problem.f(p) - problem.f(prev))
            lip &= lhs <= problem.lipschitz * np.linalg.norm(p - prev) * (1 + rtol) + 1e-12
        prev = p
    return ProblemCheck(bool(sandwich), bool(decay), bool(lip))


@dataclass(frozen=True)
class SaNoise:
    """Measurement error with bias norm mu_t(1+|theta|) and second moment M_t^2(1+|theta|^2)."""

    bias: PowerLawSchedule | None = None
    variance: PowerLawSchedule | None = None
    law: str = "gaussian"
    direction: str = "aligned"
    direction_vector: tuple | None = None

    def pack(self, dim: int) -> np.ndarray:
        def ps(s):
            return [0.0, 0.0, 1.0] if s is None else list(s.packed())
        v = np.ones(dim) if self.direction_vector is None else np.asarray(self.direction_vector, float)
        v = v / np.linalg.norm(v)
        law = NOISE_KINDS[self.law] if self.variance is not None else K_.NOISE_NONE
        return np.array(ps(self.bias) + ps(self.variance) + [law, DIRECTIONS[self.direction]] + list(v))

    def envelope_exponents(self):
        gamma = 1.0 if self.bias is None else self.bias.exponent
        delta = 0.0 if self.variance is None else max(0.0, -self.variance.exponent)
        return gamma, delta

    def to_dict(self):
        return {"bias": None if self.bias is None else self.bias.to_dict(),
                "variance": None if self.variance is None else self.variance.to_dict(),
                "law": self.law, "direction": self.direction}


def run_sa(problem: SaProblem, noise: SaNoise, alpha: PowerLawSchedule, theta0=None,
           horizon: int = 1000, seed: int = 0, stride: int | None = None,
           record_ratio: float = 1.05, rng: np.random.Generator | None = None,
           check_points: int = 1000) -> Trajectory:
    """theta_{t+1} = theta_t + alpha_t (f(theta_t) + xi_{t+1}); records V and |theta|."""
    if horizon < 1:
        raise RunConfigError("horizon must be >= 1")
    pts = np.random.default_rng(12345).uniform(-10, 10, size=(check_points, problem.dim))
    chk = check_sa_problem(problem, pts)
    if not chk.passed:
        raise RunConfigError(f"SA problem fails its structural checks: {chk}")
    theta0 = default_theta0(problem.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    steps = record_steps(horizon, stride, record_ratio)
    rng = np.random.default_rng(seed) if rng is None else rng
    thetas, th, diverged, last = K_.sa_loop(FIELDS[problem.name], float(problem.rate),
                                            noise.pack(problem.dim), np.array(alpha.packed()),
                                            np.ascontiguousarray(theta0), int(horizon), steps, rng)
    V = np.array([problem.V(p) for p in thetas])
    rho = np.linalg.norm(thetas, axis=1)
    return Trajectory(t=steps[:len(thetas)], V=V, rho=rho, theta_final=th,
                      diverged=bool(diverged), final_step=int(last), seed=seed)


# -- divergence counterexample ------------------------------------------------------------

@dataclass
class CounterexampleResult:
    t: np.ndarray
    theta: np.ndarray
    lower_bound: np.ndarray
    saturated: bool

    @property
    def bound_holds(self) -> bool:
        return bool(np.all(self.theta >= self.lower_bound))

    def to_csv(self) -> str:
        lines = ["t,theta,lower_bound"]
        for t, th, lb in zip(self.t, self.theta, self.lower_bound):
            lines.append(f"{int(t)},{float(th)!r},{float(lb)!r}")
        return "\n".join(lines) + "\n"


def run_divergence_counterexample(alpha, beta, theta0: float = 0.0, horizon: int = 10**5,
                                  stride: int | None = None, record_ratio: float = 1.05,
                                  saturate_at: float = 1e300) -> CounterexampleResult:
    """theta_{t+1} = (1 + alpha_t) theta_t + alpha_t beta_t, with the running sum of alpha_k beta_k.

    With theta_0 = 0 and beta >= 0, theta_t >= sum_{k<t} alpha_k beta_k even
    though beta_t -> 0.
    """
    if theta0 < 0:
        raise RunConfigError("theta0 must be >= 0")
    a = alpha.values(horizon)
    b = beta.values(horizon) if isinstance(beta, (PowerLawSchedule, InverseLogSchedule)) \
        else np.asarray([beta(t) for t in range(horizon)], dtype=float)
    if np.any(b < 0):
        raise RunConfigError("beta must be nonnegative")
    steps = record_steps(horizon, stride, record_ratio)
    want = np.zeros(horizon + 1, dtype=bool)
    want[steps] = True
    th_rec, lb_rec = [], []
    theta, lb = float(theta0), 0.0
    saturated = False
    a_l, b_l = a.tolist(), b.tolist()
    for t in range(horizon + 1):
        if want[t]:
            th_rec.append(theta)
            lb_rec.append(lb)
        if t == horizon:
            break
        ab = a_l[t] * b_l[t]
        theta = (1.0 + a_l[t]) * theta + ab
        lb = lb + ab
        if not theta <= saturate_at:
            theta = saturate_at
            saturated = True
    return CounterexampleResult(steps, np.array(th_rec), np.array(lb_rec), saturated)
