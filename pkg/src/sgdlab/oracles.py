"""Stochastic-gradient oracles and Monte-Carlo bias/variance diagnostics.

An oracle maps ``(theta, t, rng)`` to a search direction ``h``.  Writing
``z = E_t h``, the bias is ``x = z - grad J`` and ``zeta = h - z`` is the
martingale-difference part.  Each oracle declares how its bias and variance
bounds scale with ``t`` through ``envelope_exponents``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K_
from .objectives import Objective, ObjectiveError
from .schedules import PowerLawSchedule, Role, ScheduleError

NOISE_KINDS = {"none": K_.NOISE_NONE, "gaussian": K_.NOISE_GAUSSIAN, "uniform": K_.NOISE_UNIFORM}
DIRECTIONS = {"fixed": K_.DIR_FIXED, "aligned": K_.DIR_ALIGNED, "opposed": K_.DIR_OPPOSED}


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Mean-zero measurement noise, independent across evaluations and components."""

    kind: str = "none"
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise OracleError(f"unknown noise kind {self.kind!r}")
        if not self.std >= 0:
            raise OracleError("noise std must be >= 0")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.std > 0

    def to_dict(self):
        return {"kind": self.kind, "std": self.std}


NO_NOISE = NoiseModel()


def _pack_sched(s: PowerLawSchedule | None):
    return [0.0, 0.0, 1.0] if s is None else list(s.packed())


@dataclass(frozen=True)
class OracleSample:
    h: np.ndarray
    evals_used: int
    aux: dict = field(default_factory=dict)


class Oracle:
    """Base class; subclasses define the packed kernel form and envelopes."""

    kind: str
    code: int

    def pack(self, obj: Objective) -> np.ndarray:
        raise NotImplementedError

    def cost(self, dim: int) -> int:
        return 1

    def envelope_exponents(self) -> tuple[float, float]:
        """(gamma, delta): bias bound O(t^-gamma), std-dev bound O(t^delta).

        gamma = 1 stands for an unbiased oracle.
        """
        return 1.0, 0.0

    def validate(self, obj: Objective):
        pass

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ExactNoisy(Oracle):
    """grad J plus an injected bias of norm mu_t (1 + |grad J|) plus Gaussian noise.

    The noise has per-component std ``M_t sqrt((1 + J)/d)`` so its second
    moment is ``M_t^2 (1 + J)``.
    """

    bias: PowerLawSchedule | None = None
    variance: PowerLawSchedule | None = None
    direction: str = "fixed"
    direction_vector: tuple | None = None
    law: str = "gaussian"

    kind = "exact_noisy"
    code = K_.EXACT_NOISY

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise OracleError(f"unknown bias direction {self.direction!r}")
        if self.law not in NOISE_KINDS:
            raise OracleError(f"unknown noise law {self.law!r}")

    def unit_direction(self, dim: int) -> np.ndarray:
        v = np.ones(dim) if self.direction_vector is None else np.asarray(self.direction_vector, float)
        if v.size != dim or not np.linalg.norm(v) > 0:
            raise OracleError("direction_vector must be a nonzero vector of length dim")
        return v / np.linalg.norm(v)

    def pack(self, obj):
        law = NOISE_KINDS[self.law] if self.variance is not None else K_.NOISE_NONE
        return np.array(_pack_sched(self.bias) + _pack_sched(self.variance)
                        + [law, DIRECTIONS[self.direction]] + list(self.unit_direction(obj.dim)))

    def envelope_exponents(self):
        gamma = 1.0 if self.bias is None else self.bias.exponent
        delta = 0.0 if self.variance is None else max(0.0, -self.variance.exponent)
        return gamma, delta

    def to_dict(self):
        out = {"kind": self.kind, "direction": self.direction, "law": self.law,
               "bias": None if self.bias is None else self.bias.to_dict(),
               "variance": None if self.variance is None else self.variance.to_dict()}
        if self.direction_vector is not None:
            out["direction_vector"] = list(self.direction_vector)
        return out


@dataclass(frozen=True)
class CoordinateUniform(Oracle):
    """h = d e_i o (grad J + xi) with i uniform."""

    noise: NoiseModel = NO_NOISE

    kind = "coordinate"
    code = K_.COORD_UNIFORM

    def pack(self, obj):
        return np.array([NOISE_KINDS[self.noise.kind], self.noise.std])

    def to_dict(self):
        return {"kind": self.kind, "noise": self.noise.to_dict()}


@dataclass(frozen=True)
class CoordinateOffPolicy(Oracle):
    """Coordinate sampling with phi_t = u + (phi0 - u) w(t), drifting to uniform."""

    phi0: tuple = ()
    decay: PowerLawSchedule | None = None
    noise: NoiseModel = NO_NOISE

    kind = "coordinate_off_policy"
    code = K_.COORD_OFF_POLICY

    def __post_init__(self):
        p = np.asarray(self.phi0, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-12):
            raise OracleError("phi0 must be a probability vector")
        if self.decay is not None and (self.decay.exponent < 0 or self.decay(0) > 1):
            raise OracleError("decay must be nonincreasing with w(0) <= 1")

    def phi(self, t: int) -> np.ndarray:
        p = np.asarray(self.phi0, dtype=float)
        u = np.full(p.size, 1.0 / p.size)
        w = 1.0 if self.decay is None else self.decay(t)
        return u + (p - u) * w

    def validate(self, obj):
        if len(self.phi0) != obj.dim:
            raise OracleError("phi0 length must equal objective dimension")

    def pack(self, obj):
        self.validate(obj)
        w = [1.0, 0.0, 1.0] if self.decay is None else list(self.decay.packed())
        return np.array([NOISE_KINDS[self.noise.kind], self.noise.std] + w + list(self.phi0))

    def envelope_exponents(self):
        p = np.asarray(self.phi0, dtype=float)
        if np.all(p == 1.0 / p.size):
            return 1.0, 0.0
        return (0.0 if self.decay is None else self.decay.exponent), 0.0

    def to_dict(self):
        return {"kind": self.kind, "phi0": list(self.phi0),
                "decay": None if self.decay is None else self.decay.to_dict(),
                "noise": self.noise.to_dict()}


@dataclass(frozen=True)
class BlockCoordinate(Oracle):
    """h = (d/m) e_S o (grad J + xi) with S uniform among size-m subsets."""

    block_size: int = 1
    noise: NoiseModel = NO_NOISE

    kind = "block"
    code = K_.BLOCK_COORD

    def validate(self, obj):
        if not 1 <= self.block_size <= obj.dim:
            raise OracleError("block_size must be in [1, dim]")

    def pack(self, obj):
        self.validate(obj)
        return np.array([NOISE_KINDS[self.noise.kind], self.noise.std, self.block_size])

    def to_dict(self):
        return {"kind": self.kind, "block_size": self.block_size, "noise": self.noise.to_dict()}


@dataclass(frozen=True)
class KieferWolfowitz(Oracle):
    """Coordinatewise central differences with increment c_t; 2d evaluations."""

    increment: PowerLawSchedule | None = None
    noise: NoiseModel = NO_NOISE

    kind = "kiefer_wolfowitz"
    code = K_.KIEFER_WOLFOWITZ

    def validate(self, obj):
        if self.increment is None:
            raise OracleError(f"{self.kind} oracle needs an increment schedule")

    def pack(self, obj):
        self.validate(obj)
        return np.array([NOISE_KINDS[self.noise.kind], self.noise.std] + list(self.increment.packed()))

    def cost(self, dim):
        return 2 * dim

    def envelope_exponents(self):
        s = self.increment.exponent
        return s, (s if self.noise.active else 0.0)

    def to_dict(self):
        return {"kind": self.kind, "increment": self.increment.to_dict(), "noise": self.noise.to_dict()}


def fd_stencil(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and first-derivative weights (unit spacing) using k + 1 evaluations.

    k = 1 is the two-sided pair (+1, -1).  Even k uses the symmetric nodes
    -k/2..k/2, odd k >= 3 the forward nodes 0..k; in both cases the weights
    are exact for polynomials of degree k, so the truncation error is O(c^k).
    """
    if int(k) != k or k < 1:
        raise OracleError("k must be a positive integer")
    if k == 1:
        nodes = np.array([1.0, -1.0])
    elif k % 2 == 0:
        nodes = np.arange(-k // 2, k // 2 + 1, dtype=float)
    else:
        nodes = np.arange(0, k + 1, dtype=float)
    V = np.vander(nodes, increasing=True).T
    rhs = np.zeros(nodes.size)
    rhs[1] = 1.0
    weights = np.linalg.solve(V, rhs)
    weights[np.abs(weights) < 1e-14] = 0.0
    return nodes, weights


@dataclass(frozen=True)
class SPSA(Oracle):
    """Simultaneous perturbation along a Rademacher direction, k + 1 evaluations.

    h_i = sum_j w_j [J(theta + n_j c_t Delta) + xi_{j,i}] / (c_t Delta_i); the
    noise is independent per evaluation and per component.
    """

    k: int = 1
    increment: PowerLawSchedule | None = None
    noise: NoiseModel = NO_NOISE

    kind = "spsa"
    code = K_.SPSA

    def validate(self, obj):
        if self.increment is None:
            raise OracleError("spsa oracle needs an increment schedule")

    def pack(self, obj):
        self.validate(obj)
        nodes, weights = fd_stencil(self.k)
        return np.array([NOISE_KINDS[self.noise.kind], self.noise.std] + list(self.increment.packed())
                        + [self.k, nodes.size] + list(nodes) + list(weights))

    def cost(self, dim):
        return self.k + 1

    def envelope_exponents(self):
        s = self.increment.exponent
        return self.k * s, (s if self.noise.active else 0.0)

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "increment": self.increment.to_dict(),
                "noise": self.noise.to_dict()}


@dataclass(frozen=True)
class Minibatch(Oracle):
    """Average of N per-sample gradients drawn uniformly with replacement."""

    batch_size: int = 1

    kind = "minibatch"
    code = K_.MINIBATCH

    def validate(self, obj):
        if obj.code != K_.FINITE_SUM_LS:
            raise OracleError("minibatch oracle needs a finite-sum objective")
        if self.batch_size < 1:
            raise OracleError("batch_size must be >= 1")

    def pack(self, obj):
        self.validate(obj)
        return np.array([float(self.batch_size)])

    def cost(self, dim):
        return self.batch_size

    def to_dict(self):
        return {"kind": self.kind, "batch_size": self.batch_size}


# -- config round trip ------------------------------------------------------------

def _noise_from(d):
    if d is None:
        return NO_NOISE
    extra = set(d) - {"kind", "std"}
    if extra:
        raise OracleError(f"unknown noise key(s): {sorted(extra)}")
    return NoiseModel(d.get("kind", "none"), float(d.get("std", 0.0)))


def _sched_from(d, role):
    return None if d is None else PowerLawSchedule.from_dict(d, role)


_ORACLE_KEYS = {
    "exact_noisy": {"bias", "variance", "direction", "direction_vector", "law"},
    "coordinate": {"noise"},
    "coordinate_off_policy": {"phi0", "decay", "noise"},
    "block": {"block_size", "noise"},
    "kiefer_wolfowitz": {"increment", "noise"},
    "spsa": {"k", "increment", "noise"},
    "minibatch": {"batch_size"},
}


def oracle_from_dict(d: dict) -> Oracle:
    kind = d.get("kind")
    if kind not in _ORACLE_KEYS:
        raise OracleError(f"unknown oracle kind {kind!r}; choose from {sorted(_ORACLE_KEYS)}")
    extra = set(d) - _ORACLE_KEYS[kind] - {"kind"}
    if extra:
        raise OracleError(f"unknown key(s) for oracle {kind!r}: {sorted(extra)}")
    try:
        if kind == "exact_noisy":
            dv = d.get("direction_vector")
            return ExactNoisy(_sched_from(d.get("bias"), Role.BIAS_BOUND),
                              _sched_from(d.get("variance"), Role.STDDEV_BOUND),
                              d.get("direction", "fixed"), None if dv is None else tuple(dv),
                              d.get("law", "gaussian"))
        if kind == "coordinate":
            return CoordinateUniform(_noise_from(d.get("noise")))
        if kind == "coordinate_off_policy":
            return CoordinateOffPolicy(tuple(d["phi0"]), _sched_from(d.get("decay"), Role.BIAS_BOUND),
                                       _noise_from(d.get("noise")))
        if kind == "block":
            return BlockCoordinate(int(d.get("block_size", 1)), _noise_from(d.get("noise")))
        if kind == "kiefer_wolfowitz":
            return KieferWolfowitz(_sched_from(d.get("increment"), Role.INCREMENT), _noise_from(d.get("noise")))
        if kind == "spsa":
            return SPSA(int(d.get("k", 1)), _sched_from(d.get("increment"), Role.INCREMENT),
                        _noise_from(d.get("noise")))
        return Minibatch(int(d.get("batch_size", 1)))
    except (KeyError, ScheduleError) as exc:
        raise OracleError(f"bad oracle {kind!r}: {exc}") from None


# -- sampling -------------------------------------------------------------------------

def sample(oracle: Oracle, obj: Objective, theta, t: int, rng: np.random.Generator) -> OracleSample:
    """One draw of the search direction at (theta, t); advances ``rng``."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise OracleError("theta must be finite")
    oracle.validate(obj)
    d = obj.dim
    h = np.empty(d)
    aux = np.empty(d)
    evals = K_.oracle_sample(oracle.code, oracle.pack(obj), obj.code, obj.data, theta, int(t),
                             rng, h, aux, np.empty(4 * d))
    info = {}
    if oracle.code in (K_.COORD_UNIFORM, K_.COORD_OFF_POLICY):
        info["coordinate"] = int(np.argmax(aux))
    elif oracle.code == K_.BLOCK_COORD:
        info["block"] = tuple(int(i) for i in np.flatnonzero(aux))
    elif oracle.code == K_.SPSA:
        info["delta"] = aux.copy()
    return OracleSample(h, int(evals), info)


def sample_many(oracle: Oracle, obj: Objective, theta, t: int, n: int,
                rng: np.random.Generator) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    oracle.validate(obj)
    packed = oracle.pack(obj)
    d = obj.dim
    out = np.empty((n, d))
    aux = np.empty(d)
    work = np.empty(4 * d)
    for j in range(n):
        K_.oracle_sample(oracle.code, packed, obj.code, obj.data, theta, int(t), rng, out[j], aux, work)
    return out


def exact_bias(oracle: Oracle, obj: Objective, theta, t: int) -> np.ndarray:
    """E_t[h] - grad J by enumerating coordinates or blocks (noise has mean zero)."""
    g = obj.grad(theta)
    d = obj.dim
    if isinstance(oracle, (CoordinateUniform, CoordinateOffPolicy)):
        # outcome i contributes only to component i, with weight P(i) * d
        weight = np.ones(d) if isinstance(oracle, CoordinateUniform) else d * oracle.phi(t)
        return weight * g - g
    if isinstance(oracle, BlockCoordinate):
        oracle.validate(obj)
        m = oracle.block_size
        subsets = list(itertools.combinations(range(d), m))
        mean = np.zeros(d)
        for s in subsets:
            h = np.zeros(d)
            idx = list(s)
            h[idx] = (d / m) * g[idx]
            mean += h
        return mean / len(subsets) - g
    raise OracleError(f"exact_bias needs an enumerable coordinate oracle, got {oracle.kind!r}")


@dataclass(frozen=True)
class BiasVarianceEstimate:
    bias: np.ndarray
    bias_stderr: np.ndarray
    variance: float
    variance_stderr: float
    n: int

    @property
    def bias_norm(self) -> float:
        return float(np.linalg.norm(self.bias))

    @property
    def bias_norm_stderr(self) -> float:
        return float(np.linalg.norm(self.bias_stderr))

    def bias_within(self, n_stderr: float) -> bool:
        """Every bias component within n_stderr standard errors of zero."""
        return bool(np.all(np.abs(self.bias) <= n_stderr * self.bias_stderr + 1e-300))


def estimate_bias_variance(oracle: Oracle, obj: Objective, theta, t: int, n: int,
                           rng: np.random.Generator) -> BiasVarianceEstimate:
    """Monte-Carlo bias E h - grad J and conditional variance E|h - E h|^2 at fixed (theta, t)."""
    if n < 1000:
        raise OracleError("need n >= 1000 samples")
    H = sample_many(oracle, obj, theta, t, n, rng)
    mean = H.mean(axis=0)
    dev = H - mean
    sq = np.einsum("ij,ij->i", dev, dev) * n / (n - 1)
    return BiasVarianceEstimate(
        bias=mean - obj.grad(theta),
        bias_stderr=H.std(axis=0, ddof=1) / math.sqrt(n),
        variance=float(sq.mean()),
        variance_stderr=float(sq.std(ddof=1) / math.sqrt(n)),
        n=n,
    )


def declared_envelopes(oracle: Oracle, obj: Objective, theta, t: int) -> tuple[float | None, float | None]:
    """(bias bound, variance bound) with explicit constants where the oracle defines them."""
    J = obj.value(theta)
    gn = float(np.linalg.norm(obj.grad(theta)))
    if isinstance(oracle, ExactNoisy):
        mu = 0.0 if oracle.bias is None else oracle.bias(t)
        m = 0.0 if oracle.variance is None else oracle.variance(t)
        return mu * (1 + gn), m * m * (1 + J)
    if isinstance(oracle, CoordinateOffPolicy):
        u = np.full(obj.dim, 1.0 / obj.dim)
        return obj.dim * float(np.abs(oracle.phi(t) - u).sum()) * gn, None
    if isinstance(oracle, (CoordinateUniform, BlockCoordinate, Minibatch)):
        return 0.0, None
    return None, None
