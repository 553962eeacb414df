"""Strict JSON experiment configs, seed derivation and config hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import RsProcessSpec
from .objectives import ObjectiveError, make_objective
from .optimize import RunConfigError, SaNoise, make_problem
from .oracles import OracleError, oracle_from_dict
from .schedules import InverseLogSchedule, PowerLawSchedule, Role, ScheduleError

KINDS = ("sgd", "sa", "rs-process", "counterexample", "oracle-diagnostics")
COMMON_KEYS = {"experiment", "name", "horizon", "seeds", "out", "jobs", "plot", "record", "verdict"}
KIND_KEYS = {
    "sgd": {"objective", "oracle", "alpha", "theta0"},
    "sa": {"problem", "noise", "alpha", "theta0"},
    "rs-process": {"process"},
    "counterexample": {"alpha", "beta", "theta0"},
    "oracle-diagnostics": {"objective", "oracle", "theta", "steps", "samples"},
}
VERDICT_KEYS = {
    "sgd": {"nu", "slack", "min_rate", "threshold", "window", "min_seeds", "series"},
    "sa": {"nu", "slack", "min_rate", "threshold", "window", "min_seeds", "series"},
    "rs-process": {"tol", "threshold", "lambda", "window"},
    "counterexample": {"min_lower_bound"},
    "oracle-diagnostics": {"n_stderr"},
}
# keys that do not change any result and so stay out of the hash
UNHASHED = ("out", "jobs", "plot")

MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    pass


def derive_seed(base: int, index: int) -> int:
    """SplitMix64 mix of base + (index + 1) * golden-ratio increment; 64-bit, platform stable."""
    z = (int(base) + (int(index) + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def config_hash(raw: dict) -> str:
    body = {k: v for k, v in raw.items() if k not in UNHASHED}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _sched(d, role, what):
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ConfigError(f"{what}: expected a schedule object")
    try:
        return PowerLawSchedule.from_dict(d, role)
    except ScheduleError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _beta(d):
    if isinstance(d, dict) and set(d) == {"inverse_log"}:
        return InverseLogSchedule(float(d["inverse_log"]))
    return _sched(d, Role.DRIFT, "beta")


@dataclass
class Experiment:
    """A parsed, validated config with built domain objects."""

    raw: dict
    kind: str
    horizon: int
    seeds: list
    record: dict
    verdict: dict
    parts: dict
    source: str = ""

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def name(self) -> str:
        return self.raw.get("name", Path(self.source).stem or self.kind)


def _seeds(spec) -> list[int]:
    if spec is None:
        spec = 10
    if isinstance(spec, bool):
        raise ConfigError("seeds: expected a count, a list or {base, count}")
    if isinstance(spec, int):
        if spec < 1:
            raise ConfigError("seeds: count must be >= 1")
        return [derive_seed(0, i) for i in range(spec)]
    if isinstance(spec, list):
        if not spec or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in spec):
            raise ConfigError("seeds: list must hold nonnegative integers")
        return list(spec)
    if isinstance(spec, dict):
        extra = set(spec) - {"base", "count"}
        if extra:
            raise ConfigError(f"seeds: unknown key(s) {sorted(extra)}")
        count = spec.get("count", 10)
        if not isinstance(count, int) or count < 1:
            raise ConfigError("seeds: count must be a positive integer")
        return [derive_seed(int(spec.get("base", 0)), i) for i in range(count)]
    raise ConfigError("seeds: expected a count, a list or {base, count}")


def with_seed_count(raw: dict, n: int) -> dict:
    """Copy of the config with the seed count replaced, keeping any base seed."""
    out = copy.deepcopy(raw)
    s = raw.get("seeds")
    base = s.get("base", 0) if isinstance(s, dict) else 0
    out["seeds"] = {"base": base, "count": int(n)} if base else int(n)
    return out


def parse_config(raw: dict, source: str = "") -> Experiment:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    kind = raw.get("experiment")
    if kind not in KINDS:
        raise ConfigError(f"experiment: expected one of {list(KINDS)}, got {kind!r}")
    unknown = set(raw) - COMMON_KEYS - KIND_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown config key(s) for {kind!r}: {sorted(unknown)}")
    horizon = raw.get("horizon", 1000)
    if not isinstance(horizon, int) or isinstance(horizon, bool) or horizon < 1:
        raise ConfigError("horizon: expected an integer >= 1")
    record = raw.get("record", {"ratio": 1.05})
    if not isinstance(record, dict) or set(record) - {"ratio", "stride"} or len(record) > 1:
        raise ConfigError("record: expected {\"ratio\": r} or {\"stride\": n}")
    verdict = raw.get("verdict", {})
    if not isinstance(verdict, dict):
        raise ConfigError("verdict: expected an object")
    bad = set(verdict) - VERDICT_KEYS[kind]
    if bad:
        raise ConfigError(f"unknown verdict key(s) for {kind!r}: {sorted(bad)}")
    for key in ("jobs",):
        if key in raw and (not isinstance(raw[key], int) or raw[key] < 1):
            raise ConfigError(f"{key}: expected a positive integer")
    try:
        parts = _build_parts(kind, raw)
    except (ObjectiveError, OracleError, RunConfigError, ScheduleError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return Experiment(raw, kind, horizon, _seeds(raw.get("seeds")), record, verdict, parts, source)


def _vector(v, what):
    if v is None:
        return None
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what}: expected a finite vector")
    return arr


def _build_parts(kind: str, raw: dict) -> dict:
    if kind in ("sgd", "oracle-diagnostics"):
        for key in ("objective", "oracle"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        obj = make_objective(raw["objective"])
        oracle = oracle_from_dict(raw["oracle"])
        oracle.validate(obj)
        parts = {"objective": obj, "oracle": oracle}
        if kind == "sgd":
            if "alpha" not in raw:
                raise ConfigError("missing required key 'alpha'")
            parts["alpha"] = _sched(raw["alpha"], Role.STEP_SIZE, "alpha")
            parts["theta0"] = _vector(raw.get("theta0"), "theta0")
        else:
            parts["theta"] = _vector(raw.get("theta"), "theta")
            steps = raw.get("steps", [0])
            if not isinstance(steps, list) or not all(isinstance(s, int) and s >= 0 for s in steps):
                raise ConfigError("steps: expected a list of nonnegative integers")
            parts["steps"] = steps
            samples = raw.get("samples", 10_000)
            if not isinstance(samples, int) or samples < 1000:
                raise ConfigError("samples: expected an integer >= 1000")
            parts["samples"] = samples
        return parts
    if kind == "sa":
        for key in ("problem", "alpha"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        nz = raw.get("noise", {})
        extra = set(nz) - {"bias", "variance", "law", "direction", "direction_vector"}
        if extra:
            raise ConfigError(f"noise: unknown key(s) {sorted(extra)}")
        noise = SaNoise(_sched(nz.get("bias"), Role.BIAS_BOUND, "noise.bias"),
                        _sched(nz.get("variance"), Role.STDDEV_BOUND, "noise.variance"),
                        nz.get("law", "gaussian"), nz.get("direction", "aligned"),
                        None if nz.get("direction_vector") is None else tuple(nz["direction_vector"]))
        return {"problem": make_problem(raw["problem"]), "noise": noise,
                "alpha": _sched(raw["alpha"], Role.STEP_SIZE, "alpha"),
                "theta0": _vector(raw.get("theta0"), "theta0")}
    if kind == "rs-process":
        p = raw.get("process")
        if not isinstance(p, dict):
            raise ConfigError("missing required key 'process'")
        extra = set(p) - {"alpha", "f", "g", "eta", "u", "z0"}
        if extra:
            raise ConfigError(f"process: unknown key(s) {sorted(extra)}")
        if "alpha" not in p:
            raise ConfigError("process: missing 'alpha'")
        spec = RsProcessSpec(_sched(p["alpha"], Role.STEP_SIZE, "process.alpha"),
                             _sched(p.get("f"), Role.DRIFT, "process.f"),
                             _sched(p.get("g"), Role.DRIFT, "process.g"),
                             p.get("eta", "identity"), float(p.get("u", 0.0)), float(p.get("z0", 1.0)))
        return {"process": spec}
    # counterexample
    for key in ("alpha", "beta"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    return {"alpha": _sched(raw["alpha"], Role.STEP_SIZE, "alpha"), "beta": _beta(raw["beta"]),
            "theta0": float(raw.get("theta0", 0.0))}


def load_config(path) -> Experiment:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(raw, str(path))


def set_path(raw: dict, dotted: str, value) -> dict:
    """Copy of ``raw`` with the dotted key path set to ``value``; the path must exist."""
    out = copy.deepcopy(raw)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"parameter path {dotted!r} does not exist in the config")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"parameter path {dotted!r} does not exist in the config")
    node[keys[-1]] = value
    return out
