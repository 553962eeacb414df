"""Deterministic power-law sequences and analytic summability classifiers.

Every sequence used by the iteration engines (step sizes, bias bounds,
standard-deviation bounds, finite-difference increments, drifts) is a pure
power law ``scale * (t + offset) ** (-exponent)``.  Summability of products of
such sequences is decided from the exponents alone.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    """Raised for malformed schedules or schedules passed in the wrong role."""


class Role(str, enum.Enum):
    STEP_SIZE = "step_size"
    BIAS_BOUND = "bias_bound"
    STDDEV_BOUND = "stddev_bound"
    INCREMENT = "increment"
    DRIFT = "drift"


@dataclass(frozen=True)
class PowerLawSchedule:
    scale: float
    exponent: float
    offset: int = 1
    role: Role = Role.STEP_SIZE

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ScheduleError(f"scale must be positive and finite, got {self.scale!r}")
        if not math.isfinite(self.exponent):
            raise ScheduleError(f"exponent must be finite, got {self.exponent!r}")
        if int(self.offset) != self.offset or self.offset < 1:
            raise ScheduleError(f"offset must be an integer >= 1, got {self.offset!r}")
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "role", Role(self.role))

    def __call__(self, t):
        return eval_schedule(self, t)

    def values(self, n: int) -> np.ndarray:
        """First ``n`` terms as an array."""
        t = np.arange(n, dtype=np.float64)
        return self.scale * (t + self.offset) ** (-self.exponent)

    def packed(self) -> tuple[float, float, float]:
        return (float(self.scale), float(self.exponent), float(self.offset))

    def to_dict(self) -> dict:
        return {"scale": self.scale, "exponent": self.exponent,
                "offset": self.offset, "role": self.role.value}

    @classmethod
    def from_dict(cls, data: dict, role: Role | None = None) -> "PowerLawSchedule":
        unknown = set(data) - {"scale", "exponent", "offset", "role"}
        if unknown:
            raise ScheduleError(f"unknown schedule key(s): {sorted(unknown)}")
        if "scale" not in data or "exponent" not in data:
            raise ScheduleError("schedule needs 'scale' and 'exponent'")
        declared = data.get("role")
        if role is not None and declared is not None and Role(declared) != role:
            raise ScheduleError(f"schedule declared role {declared!r} but is used as {role.value!r}")
        return cls(float(data["scale"]), float(data["exponent"]), data.get("offset", 1),
                   role if role is not None else Role(declared or Role.STEP_SIZE))


@dataclass(frozen=True)
class InverseLogSchedule:
    """``scale / log(t + offset)``; vanishes slower than any power law."""

    scale: float
    offset: int = 2
    role: Role = Role.DRIFT

    def __post_init__(self):
        if not self.scale > 0:
            raise ScheduleError("scale must be positive")
        if self.offset < 2:
            raise ScheduleError("offset must be >= 2 so that log(t + offset) > 0")

    def __call__(self, t):
        return self.scale / np.log(np.asarray(t, dtype=np.float64) + self.offset)

    def values(self, n: int) -> np.ndarray:
        return self(np.arange(n))


def eval_schedule(schedule: PowerLawSchedule, t):
    """Value of the schedule at step ``t`` (scalar or array)."""
    if np.any(np.asarray(t) < 0):
        raise ScheduleError("t must be nonnegative")
    if np.isscalar(t):
        return schedule.scale * (float(t) + schedule.offset) ** (-schedule.exponent)
    tt = np.asarray(t, dtype=np.float64)
    return schedule.scale * (tt + schedule.offset) ** (-schedule.exponent)


# -- summability -------------------------------------------------------------

def _decay_exponents(s) -> tuple[float, float]:
    """(power, log) exponents with the term behaving like t**-power * log(t)**-log."""
    if isinstance(s, PowerLawSchedule):
        return s.exponent, 0.0
    if isinstance(s, InverseLogSchedule):
        return 0.0, 1.0
    raise ScheduleError(f"cannot classify {type(s).__name__}")


def series_converges(power: float, log_power: float = 0.0) -> bool:
    """Whether sum_t t**-power * (log t)**-log_power is finite (Bertrand series)."""
    if power > 1:
        return True
    if power < 1:
        return False
    return log_power > 1


def product_summable(*factors, powers=None) -> bool:
    """Summability of the termwise product of schedules raised to ``powers``."""
    powers = powers or [1] * len(factors)
    p = q = 0.0
    for s, k in zip(factors, powers):
        a, b = _decay_exponents(s)
        p += k * a
        q += k * b
    return series_converges(p, q)


@dataclass(frozen=True)
class Condition:
    name: str
    holds: bool
    criterion: str


@dataclass(frozen=True)
class ConditionReport:
    conditions: tuple[Condition, ...] = field(default_factory=tuple)

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.conditions)

    def __getitem__(self, name: str) -> bool:
        for c in self.conditions:
            if c.name == name:
                return c.holds
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [c.name for c in self.conditions if not c.holds]

    def to_dict(self) -> dict:
        return {c.name: {"holds": c.holds, "criterion": c.criterion} for c in self.conditions}


def _require_role(s, role: Role, what: str):
    if not isinstance(s, PowerLawSchedule):
        raise ScheduleError(f"{what} must be a PowerLawSchedule")
    if s.role != role:
        raise ScheduleError(f"{what} must have role {role.value!r}, got {s.role.value!r}")


def check_rm_conditions(alpha: PowerLawSchedule) -> ConditionReport:
    """Square-summable but not summable step sizes."""
    _require_role(alpha, Role.STEP_SIZE, "alpha")
    p = alpha.exponent
    return ConditionReport((
        Condition("sum_alpha_sq_finite", series_converges(2 * p), f"2p = {2 * p:g} > 1"),
        Condition("sum_alpha_infinite", not series_converges(p), f"p = {p:g} <= 1"),
    ))


def check_sgd_conditions(alpha: PowerLawSchedule, mu: PowerLawSchedule,
                         m: PowerLawSchedule) -> ConditionReport:
    """The four summability conditions for biased SGD (and for biased SA).

    ``mu`` is the bias bound (exponent gamma), ``m`` the standard-deviation
    bound; a bound growing like t**delta has exponent ``-delta``.
    """
    _require_role(alpha, Role.STEP_SIZE, "alpha")
    _require_role(mu, Role.BIAS_BOUND, "mu")
    _require_role(m, Role.STDDEV_BOUND, "M")
    p, g, e = alpha.exponent, mu.exponent, m.exponent
    return ConditionReport((
        Condition("sum_alpha_sq_finite", series_converges(2 * p), f"2p = {2 * p:g} > 1"),
        Condition("sum_alpha_mu_finite", series_converges(p + g), f"p + gamma = {p + g:g} > 1"),
        Condition("sum_alpha_sq_M_sq_finite", series_converges(2 * (p + e)),
                  f"2(p - delta) = {2 * (p + e):g} > 1"),
        Condition("sum_alpha_infinite", not series_converges(p), f"p = {p:g} <= 1"),
    ))


# -- rates ---------------------------------------------------------------------

@dataclass(frozen=True)
class RateExponents:
    phi: float
    delta: float
    gamma: float
    C: float | None = None

    def __post_init__(self):
        if self.C is None:
            # exact power laws: the lower envelope exponent equals phi
            object.__setattr__(self, "C", self.phi)

    @property
    def nu(self) -> float:
        return rate_bound(self.phi, self.delta, self.gamma)


def rate_bound(phi: float, delta: float, gamma: float) -> float:
    """min{1 - 2(phi + delta), gamma - phi} with no domain check."""
    return min(1.0 - 2.0 * (phi + delta), gamma - phi)


def predict_rate(phi: float, delta: float, gamma: float) -> float:
    """Exponent nu such that J and |grad J|^2 are o(t^-lambda) for all lambda < nu."""
    if delta < 0:
        raise ScheduleError(f"delta must be >= 0, got {delta}")
    if gamma <= 0:
        raise ScheduleError(f"gamma must be > 0, got {gamma}")
    # phi = 0 is accepted as the phi -> 0+ limit of the bound
    if phi < 0:
        raise ScheduleError(f"phi must be >= 0, got {phi}")
    if not phi < 0.5 - delta:
        raise ScheduleError(f"phi = {phi} violates phi < 0.5 - delta = {0.5 - delta}")
    if not phi < gamma:
        raise ScheduleError(f"phi = {phi} violates phi < gamma = {gamma}")
    return rate_bound(phi, delta, gamma)


def optimal_spsa_exponent(k: int, phi: float = 0.0) -> tuple[float, float]:
    """Increment exponent s balancing bias O(c^k) against variance O(1/c^2).

    Returns ``(s, nu)`` with ``s = (1 - phi)/(k + 2)``; at ``phi = 0`` this is
    ``(1/(k + 2), k/(k + 2))``.
    """
    if int(k) != k or k < 1:
        raise ScheduleError(f"k must be a positive integer, got {k}")
    if phi < 0:
        raise ScheduleError("phi must be >= 0")
    s = (1.0 - phi) / (k + 2)
    return s, predict_rate(phi, s, k * s)


def partial_sum_growth(schedule: PowerLawSchedule, n_small: int = 10**4,
                       n_large: int = 10**6) -> float:
    """Ratio of partial sums S(n_large)/S(n_small); a numeric cross-check only.

    For exponents p < 0.5 a divergent series grows by more than 10x between
    1e4 and 1e6 terms, and for p > 1 the ratio stays near one.  Between 0.5
    and 1 the ratio is inconclusive, which is why summability is decided
    analytically.
    """
    v = schedule.values(n_large)
    return float(v.sum() / v[:n_small].sum())
