"""Rate fitting, multi-seed verdicts and a synthetic almost-supermartingale simulator."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K_
from .schedules import PowerLawSchedule, product_summable, series_converges

PASS, FAIL, NOT_MET = "pass", "fail", "hypotheses-not-met"
EXIT_CODES = {PASS: 0, FAIL: 2, NOT_MET: 3}
LOG_FLOOR = 1e-300
CSV_LABELS = {"grad_sq": "grad"}


class AnalysisError(ValueError):
    pass


# -- rate fitting ------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    r_squared: float
    n_support: int
    smoothing: str = "median of log values over a +-10% neighborhood"

    @property
    def lambda_hat(self) -> float:
        return -self.slope


def fit_rate(t, z, window: float = 0.5, n_support: int = 30, neighborhood: float = 0.1,
             min_points: int = 100, min_support: int = 20) -> RateFit:
    """Decay exponent of z_t from a log-log least-squares fit over the tail [T^(1-w), T].

    At each of ``n_support`` log-spaced support points the medians of log t
    and log z over the recorded steps within +-``neighborhood`` are taken;
    OLS through those medians gives the slope, and ``lambda_hat = -slope``.
    Working with log-medians keeps the fit exact for pure power laws and
    invariant to rescaling z.
    """
    t = np.asarray(t, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if t.shape != z.shape or t.ndim != 1:
        raise AnalysisError("t and z must be 1-D arrays of equal length")
    keep = t > 0
    t, z = t[keep], z[keep]
    if t.size < min_points:
        raise AnalysisError(f"need at least {min_points} recorded points with t > 0, got {t.size}")
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise AnalysisError("z must be finite and nonnegative")
    if not 0 < window <= 1:
        raise AnalysisError("window fraction must be in (0, 1]")
    T = float(t.max())
    lo = T ** (1.0 - window)
    lt = np.log(t)
    lz = np.log(np.maximum(z, LOG_FLOOR))
    xs, ys = [], []
    for s in np.geomspace(lo, T, n_support):
        sel = (t >= s * (1 - neighborhood)) & (t <= s * (1 + neighborhood))
        if sel.any():
            xs.append(np.median(lt[sel]))
            ys.append(np.median(lz[sel]))
    if len(xs) < min_support:
        raise AnalysisError(f"only {len(xs)} support points in the tail window; need {min_support}")
    x, y = np.array(xs), np.array(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    if not math.isfinite(slope):
        raise AnalysisError("non-finite slope")
    return RateFit((lo, T), float(slope), float(intercept), r2, len(xs))


# -- verdicts ------------------------------------------------------------------------

@dataclass
class Verdict:
    outcome: str
    seeds: list = field(default_factory=list)
    finals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rates: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    threshold: float | None = None
    checks: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    reason: str = ""
    final_name: str = "J"

    @property
    def passed(self) -> bool:
        return self.outcome == PASS

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]

    @property
    def median_final(self) -> float:
        ok = self.finals[~np.asarray(self.flags, dtype=bool)] if len(self.flags) else self.finals
        return float(np.median(ok)) if ok.size else math.nan

    @property
    def max_final(self) -> float:
        return float(np.max(self.finals)) if self.finals.size else math.nan

    @property
    def fraction_below(self) -> float:
        if self.threshold is None or not self.finals.size:
            return math.nan
        return float(np.mean(self.finals < self.threshold))

    def median_rate(self, name: str) -> float:
        r = np.asarray(self.rates[name], dtype=float)
        ok = r[~np.asarray(self.flags, dtype=bool)] if len(self.flags) else r
        return float(np.median(ok)) if ok.size else math.nan

    def min_rate(self, name: str) -> float:
        r = np.asarray(self.rates[name], dtype=float)
        return float(np.nanmin(r)) if r.size else math.nan

    def to_csv(self) -> str:
        """One row per seed, then median, min and verdict summary rows."""
        names = list(self.rates)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed"] + [f"lambda_hat_{CSV_LABELS.get(n, n)}" for n in names] + [f"final_{self.final_name}", "flag"])
        for i, seed in enumerate(self.seeds):
            w.writerow([seed] + [repr(float(self.rates[n][i])) for n in names]
                       + [repr(float(self.finals[i])), int(bool(self.flags[i]))])
        w.writerow(["median"] + [repr(self.median_rate(n)) for n in names]
                   + [repr(self.median_final), sum(bool(f) for f in self.flags)])
        w.writerow(["min"] + [repr(self.min_rate(n)) for n in names]
                   + [repr(float(np.min(self.finals))) if self.finals.size else "nan", ""])
        w.writerow(["verdict", self.outcome] + [""] * (len(names) + 1))
        return buf.getvalue()


def convergence_verdict(trajectories, nu: float, slack: float = 0.15, threshold: float = 1e-2,
                        series=("J", "grad_sq"), final_series: str | None = None,
                        window: float = 0.5, min_seeds: int = 10) -> Verdict:
    """Median fitted rate >= nu - slack on every series and all finals below threshold.

    Diverged trajectories count as failures.
    """
    trajs = list(trajectories)
    if len(trajs) < min_seeds:
        raise AnalysisError(f"need at least {min_seeds} seeds, got {len(trajs)}")
    final_series = final_series or series[0]
    flags = [bool(tr.diverged) for tr in trajs]
    rates = {name: [] for name in series}
    finals = []
    for tr in trajs:
        for name in series:
            if tr.diverged:
                rates[name].append(math.nan)
            else:
                rates[name].append(fit_rate(tr.t, tr.series(name), window).lambda_hat)
        finals.append(math.inf if tr.diverged else tr.final(final_series))
    finals = np.array(finals)
    v = Verdict(FAIL, [tr.seed for tr in trajs], finals, {n: np.array(r) for n, r in rates.items()},
                flags, threshold, final_name=final_series)
    v.checks["no_divergence"] = not any(flags)
    for name in series:
        v.checks[f"median_rate_{name}"] = v.median_rate(name) >= nu - slack
    v.checks["all_final_below_threshold"] = bool(np.all(finals < threshold))
    v.diagnostics.update(nu=nu, slack=slack)
    if all(v.checks.values()):
        v.outcome = PASS
    else:
        v.reason = "failed: " + ", ".join(k for k, ok in v.checks.items() if not ok)
    return v


# -- almost-supermartingale process ----------------------------------------------------

ETA = {"identity": K_.ETA_IDENTITY, "saturating": K_.ETA_SATURATING}


@dataclass(frozen=True)
class RsProcessSpec:
    """z_{t+1} = [(1 + f_t) z_t + g_t - alpha_t eta(z_t)] U_{t+1}, U in {1-u, 1+u} equiprobable.

    ``f`` or ``g`` set to None means the zero sequence.  ``eta`` is the
    identity or the saturating Class-B map r/(1+r); both satisfy eta(r) <= r.
    """

    alpha: PowerLawSchedule
    f: PowerLawSchedule | None = None
    g: PowerLawSchedule | None = None
    eta: str = "identity"
    u: float = 0.0
    z0: float = 1.0

    def __post_init__(self):
        if self.eta not in ETA:
            raise AnalysisError(f"eta must be one of {sorted(ETA)}")
        if not 0 <= self.u < 1:
            raise AnalysisError("u must lie in [0, 1)")
        if not self.z0 > 0:
            raise AnalysisError("z0 must be positive")
        # alpha_t <= 1 for every t keeps the pre-noise term nonnegative
        if self.alpha.exponent < 0 or self.alpha(0) > 1:
            raise AnalysisError("alpha_t must stay <= 1 (nonincreasing with alpha_0 <= 1)")

    def packed(self) -> np.ndarray:
        def ps(s):
            return [0.0, 0.0, 1.0] if s is None else list(s.packed())
        return np.array(ps(self.f) + ps(self.g) + ps(self.alpha))

    def mean_step(self, t: int, z: float) -> float:
        """Conditional mean E_t z_{t+1} given z_t = z."""
        f = 0.0 if self.f is None else self.f(t)
        g = 0.0 if self.g is None else self.g(t)
        return (1.0 + f) * z + g - self.alpha(t) * K_.eta(ETA[self.eta], z)

    def summable(self) -> dict:
        return {"sum_f_finite": self.f is None or product_summable(self.f),
                "sum_g_finite": self.g is None or product_summable(self.g),
                "sum_alpha_infinite": not product_summable(self.alpha)}

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.to_dict(),
                "f": None if self.f is None else self.f.to_dict(),
                "g": None if self.g is None else self.g.to_dict(),
                "eta": self.eta, "u": self.u, "z0": self.z0}


@dataclass
class RsPath:
    z: np.ndarray
    drift: np.ndarray
    seed: int | None = None


def simulate_rs_process(spec: RsProcessSpec, horizon: int, seed: int = 0,
                        rng: np.random.Generator | None = None) -> RsPath:
    if horizon < 1:
        raise AnalysisError("horizon must be >= 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    z, drift = K_.rs_loop(spec.packed(), ETA[spec.eta], float(spec.u), float(spec.z0), int(horizon), rng)
    return RsPath(z, drift, seed)


def _gate(conditions: dict) -> str | None:
    bad = [k for k, ok in conditions.items() if not ok]
    return None if not bad else "hypotheses not met: " + ", ".join(bad)


def verify_rs_convergence(paths, spec: RsProcessSpec, tol: float = 1e-3,
                          threshold: float = 1e-3) -> Verdict:
    """Per path: bounded, settled tail, vanishing limit when the drift sum diverges,
    and a finite accumulated drift.

    Refuses to judge (``hypotheses-not-met``) unless sum f and sum g are finite.
    """
    paths = list(paths)
    sums = spec.summable()
    gate = {k: sums[k] for k in ("sum_f_finite", "sum_g_finite")}
    finals = np.array([p.z[-1] for p in paths])
    v = Verdict(NOT_MET, [p.seed for p in paths], finals, {}, [False] * len(paths), threshold,
                final_name="z")
    reason = _gate(gate)
    if reason:
        v.reason = reason
        return v
    limit_claimed = sums["sum_alpha_infinite"]
    bounded = osc = small = drift_ok = True
    tail_min, oscillations = [], []
    for p in paths:
        z = p.z
        T = z.size - 1
        tail = z[T // 2:]
        bounded &= bool(np.all(np.isfinite(z)))
        o = float(np.max(np.abs(tail - z[-1])))
        oscillations.append(o)
        osc &= o <= tol
        if limit_claimed:
            small &= z[-1] <= threshold
        drift_ok &= bool(np.isfinite(np.sum(p.drift)))
        tail_min.append(float(tail.min()))
    v.checks = {"bounded": bounded, "tail_oscillation": osc, "drift_sum_finite": drift_ok}
    if limit_claimed:
        v.checks["final_below_threshold"] = small
    v.diagnostics = {"max_tail_oscillation": max(oscillations), "tail_min": tail_min,
                     "limit_claimed": limit_claimed}
    v.outcome = PASS if all(v.checks.values()) else FAIL
    if not v.passed:
        v.reason = "failed: " + ", ".join(k for k, ok in v.checks.items() if not ok)
    return v


def rate_hypotheses(spec: RsProcessSpec, lam: float) -> dict:
    """Analytic preconditions for z_t = o(t^-lambda), decided from the exponents."""
    a = spec.alpha
    if a.exponent < 1:
        dominates = True
    elif a.exponent == 1:
        dominates = a.scale > lam
    else:
        dominates = False
    sums = spec.summable()
    return {
        "lambda_in_open_unit_interval": 0 < lam < 1,
        "drift_is_identity": spec.eta == "identity",
        "sum_f_finite": sums["sum_f_finite"],
        "sum_g_finite": sums["sum_g_finite"],
        "sum_alpha_infinite": sums["sum_alpha_infinite"],
        "alpha_dominates_lambda_over_t": dominates,
        "weighted_g_summable": spec.g is None or series_converges(spec.g.exponent - lam),
    }


def verify_rs_rate(paths, spec: RsProcessSpec, lam: float, window: float = 0.5,
                   record_ratio: float = 1.05) -> Verdict:
    """Checks t^lambda z_t -> 0: fitted decay >= lambda and the tail of t^lambda z_t
    falls below its early maximum."""
    paths = list(paths)
    finals = np.array([p.z[-1] for p in paths])
    v = Verdict(NOT_MET, [p.seed for p in paths], finals, {}, [False] * len(paths), None,
                final_name="z")
    reason = _gate(rate_hypotheses(spec, lam))
    if reason:
        v.reason = reason
        return v
    from .optimize import geometric_steps
    rates, decays = [], []
    for p in paths:
        T = p.z.size - 1
        steps = geometric_steps(T, record_ratio)
        rates.append(fit_rate(steps, p.z[steps], window).lambda_hat)
        w = (np.arange(T + 1, dtype=float) + 1.0) ** lam * p.z
        half = T // 2
        decays.append(bool(np.max(w[half:]) < np.max(w[:half + 1])))
    v.rates = {"z": np.array(rates)}
    v.checks = {"fitted_rate_at_least_lambda": bool(np.all(np.array(rates) >= lam)),
                "weighted_tail_decreasing": all(decays)}
    v.diagnostics = {"lambda": lam}
    v.outcome = PASS if all(v.checks.values()) else FAIL
    if not v.passed:
        v.reason = "failed: " + ", ".join(k for k, ok in v.checks.items() if not ok)
    return v


def two_branch_mean(spec: RsProcessSpec, t: int, z: float) -> float:
    """Average of the two equiprobable noise branches at step t."""
    m = spec.mean_step(t, z)
    return 0.5 * (m * (1 - spec.u) + m * (1 + spec.u))

