"""Execute parsed experiments over seeds and write CSV, JSON and SVG artifacts."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (FAIL, NOT_MET, PASS, EXIT_CODES, AnalysisError, Verdict, convergence_verdict,
                       fit_rate, rate_hypotheses, simulate_rs_process, verify_rs_convergence,
                       verify_rs_rate)
from .config import UNHASHED, ConfigError, Experiment, parse_config, set_path
from .optimize import (SgdRun, Trajectory, default_theta0, geometric_steps, run_divergence_counterexample,
                       run_sa, run_sgd)
from .oracles import declared_envelopes, estimate_bias_variance
from .schedules import (PowerLawSchedule, Role, ScheduleError, check_sgd_conditions, predict_rate,
                        product_summable, rate_bound)
from .svgplot import PALETTE, Figure

SWEEP_ALIASES = {"s": "oracle.increment.exponent", "k": "oracle.k", "p": "alpha.exponent"}


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# -- analytic gates -------------------------------------------------------------------

@dataclass
class Gate:
    conditions: dict
    nu: float | None
    nu_unchecked: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error and all(self.conditions.values())

    @property
    def reason(self) -> str:
        bad = [k for k, v in self.conditions.items() if not v]
        parts = (["hypotheses not met: " + ", ".join(bad)] if bad else []) + ([self.error] if self.error else [])
        return "; ".join(parts)


def envelopes(exp: Experiment) -> tuple[float, float]:
    if exp.kind == "sgd":
        return exp.parts["oracle"].envelope_exponents()
    return exp.parts["noise"].envelope_exponents()


def evaluate_gate(exp: Experiment) -> Gate:
    """Summability conditions and the predicted rate exponent for sgd/sa runs."""
    alpha = exp.parts["alpha"]
    gamma, delta = envelopes(exp)
    phi = 1.0 - alpha.exponent
    report = check_sgd_conditions(alpha, PowerLawSchedule(1.0, gamma, role=Role.BIAS_BOUND),
                                  PowerLawSchedule(1.0, -delta, role=Role.STDDEV_BOUND))
    conds = {c.name: bool(c.holds) for c in report.conditions}
    nu_u = rate_bound(phi, delta, gamma)
    nu, err = None, ""
    if "nu" in exp.verdict:
        nu = float(exp.verdict["nu"])
    else:
        try:
            nu = predict_rate(phi, delta, gamma)
        except ScheduleError as exc:
            err = f"rate prediction undefined: {exc}"
    return Gate(conds, nu, nu_u, err)


# -- per-seed workers -------------------------------------------------------------------

def _record_kw(exp: Experiment) -> dict:
    return {"stride": exp.record.get("stride"), "record_ratio": exp.record.get("ratio", 1.05)}


def run_one(raw: dict, seed: int):
    """Run a single seed of an sgd, sa or rs-process config (module-level for pickling)."""
    exp = parse_config(raw)
    p = exp.parts
    if exp.kind == "sgd":
        rk = _record_kw(exp)
        return run_sgd(SgdRun(p["objective"], p["oracle"], p["alpha"], p["theta0"], exp.horizon,
                              rk["stride"], rk["record_ratio"], seed))
    if exp.kind == "sa":
        return run_sa(p["problem"], p["noise"], p["alpha"], p["theta0"], exp.horizon, seed, **_record_kw(exp))
    if exp.kind == "rs-process":
        return simulate_rs_process(p["process"], exp.horizon, seed)
    raise ConfigError(f"{exp.kind!r} runs are not seeded")


def run_seeds(exp: Experiment, jobs: int = 1) -> list:
    raw = exp.raw
    if jobs <= 1 or len(exp.seeds) == 1:
        return [run_one(raw, s) for s in exp.seeds]
    with ProcessPoolExecutor(max_workers=min(jobs, len(exp.seeds))) as pool:
        return list(pool.map(run_one, itertools.repeat(raw), exp.seeds))


# -- results ----------------------------------------------------------------------------

@dataclass
class Result:
    outcome: str
    reason: str = ""
    verdict: Verdict | None = None
    gate: Gate | None = None
    trajectories: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]


def _verdict_params(exp: Experiment, nu: float, default_series):
    v = exp.verdict
    series = tuple(v.get("series", default_series))
    slack = float(v.get("slack", 0.15))
    if "min_rate" in v:
        slack = nu - float(v["min_rate"])
    return dict(nu=nu, slack=slack, threshold=float(v.get("threshold", 1e-2)), series=series,
                window=float(v.get("window", 0.5)), min_seeds=int(v.get("min_seeds", 10)))


def evaluate(exp: Experiment, jobs: int = 1, enforce_gate: bool = True) -> Result:
    """Run an experiment and judge it; no files are written."""
    if exp.kind in ("sgd", "sa"):
        gate = evaluate_gate(exp)
        if enforce_gate and not gate.ok:
            return Result(NOT_MET, gate.reason, gate=gate)
        nu = gate.nu if gate.nu is not None else gate.nu_unchecked
        params = _verdict_params(exp, nu, ("J", "grad_sq") if exp.kind == "sgd" else ("V",))
        if len(exp.seeds) < params["min_seeds"]:
            raise ConfigError(f"verdict needs at least {params['min_seeds']} seeds, got {len(exp.seeds)}")
        trajs = run_seeds(exp, jobs)
        try:
            verdict = convergence_verdict(trajs, **params)
        except AnalysisError as exc:
            raise ConfigError(f"cannot fit rates: {exc}") from None
        outcome = verdict.outcome if gate.ok else NOT_MET
        reason = verdict.reason if gate.ok else gate.reason
        return Result(outcome, reason, verdict, gate, trajs)
    if exp.kind == "rs-process":
        return _evaluate_rs(exp, jobs)
    if exp.kind == "counterexample":
        return _evaluate_counterexample(exp)
    return _evaluate_oracle(exp)


def _evaluate_rs(exp: Experiment, jobs: int) -> Result:
    spec = exp.parts["process"]
    v = exp.verdict
    paths = run_seeds(exp, jobs)
    conv = verify_rs_convergence(paths, spec, tol=float(v.get("tol", 1e-3)),
                                 threshold=float(v.get("threshold", 1e-3)))
    verdicts = {"convergence": conv}
    if "lambda" in v:
        verdicts["rate"] = verify_rs_rate(paths, spec, float(v["lambda"]), window=float(v.get("window", 0.5)))
    outcomes = [x.outcome for x in verdicts.values()]
    if NOT_MET in outcomes:
        outcome = NOT_MET
    elif FAIL in outcomes:
        outcome = FAIL
    else:
        outcome = PASS
    reason = "; ".join(f"{k}: {x.reason}" for k, x in verdicts.items() if x.reason)
    return Result(outcome, reason, conv, trajectories=paths, summary={"verdicts": verdicts})


def _evaluate_counterexample(exp: Experiment) -> Result:
    p = exp.parts
    res = run_divergence_counterexample(p["alpha"], p["beta"], p["theta0"], exp.horizon, **_record_kw(exp))
    checks = {"lower_bound_holds": res.bound_holds, "not_saturated": not res.saturated}
    if "min_lower_bound" in exp.verdict:
        checks["lower_bound_exceeds_min"] = bool(res.lower_bound[-1] > float(exp.verdict["min_lower_bound"]))
    # the drift alpha_t beta_t is the g_t of an almost-supermartingale; it is not summable here
    g_summable = product_summable(p["alpha"], p["beta"])
    outcome = PASS if all(checks.values()) else FAIL
    reason = "" if outcome == PASS else "failed: " + ", ".join(k for k, ok in checks.items() if not ok)
    return Result(outcome, reason, summary={"result": res, "checks": checks,
                                            "drift_summable": g_summable})


def _evaluate_oracle(exp: Experiment) -> Result:
    p = exp.parts
    obj, oracle = p["objective"], p["oracle"]
    theta = default_theta0(obj.dim) if p["theta"] is None else p["theta"]
    k = float(exp.verdict.get("n_stderr", 4.0))
    rng = np.random.default_rng(exp.seeds[0])
    rows, ok_all = [], True
    for t in p["steps"]:
        est = estimate_bias_variance(oracle, obj, theta, t, p["samples"], rng)
        db, dv = declared_envelopes(oracle, obj, theta, t)
        ok_b = db is None or est.bias_norm <= db * (1 + 1e-9) + k * est.bias_norm_stderr
        ok_v = dv is None or est.variance <= dv * (1 + 1e-9) + k * est.variance_stderr
        ok_all &= bool(ok_b and ok_v)
        rows.append({"t": t, "bias_norm": est.bias_norm, "bias_norm_stderr": est.bias_norm_stderr,
                     "declared_bias": db, "variance": est.variance, "variance_stderr": est.variance_stderr,
                     "declared_variance": dv, "within_envelope": bool(ok_b and ok_v),
                     "evals_per_sample": oracle.cost(obj.dim)})
    outcome = PASS if ok_all else FAIL
    return Result(outcome, "" if ok_all else "realized bias or variance exceeds its declared envelope",
                  summary={"rows": rows})


# -- artifacts ---------------------------------------------------------------------------

def hashed_config(raw: dict) -> dict:
    return {k: v for k, v in raw.items() if k not in UNHASHED}


def _metadata(exp: Experiment, res: Result, extra: dict | None = None) -> dict:
    meta = {"package": "sgdlab", "version": __version__, "experiment": exp.kind, "name": exp.name,
            "config_hash": exp.hash, "config": hashed_config(exp.raw), "horizon": exp.horizon,
            "outcome": res.outcome, "exit_code": res.exit_code, "reason": res.reason}
    if res.gate is not None:
        meta["gate"] = {"conditions": res.gate.conditions, "nu": res.gate.nu,
                        "nu_unchecked": res.gate.nu_unchecked, "error": res.gate.error}
    if res.verdict is not None:
        meta["checks"] = res.verdict.checks
    if exp.kind in ("sgd", "sa", "rs-process"):
        meta["seeds"] = [{"index": i, "seed": s} for i, s in enumerate(exp.seeds)]
        for row, tr in zip(meta["seeds"], res.trajectories):
            if isinstance(tr, Trajectory):
                row.update(diverged=tr.diverged, final_step=tr.final_step)
    if extra:
        meta.update(extra)
    return meta


def _rs_csvs(res: Result, exp: Experiment) -> tuple[str, list[str]]:
    verdicts = res.summary["verdicts"]
    conv = verdicts["convergence"]
    rate = verdicts.get("rate")
    osc = conv.diagnostics.get("max_tail_oscillation") if conv.diagnostics else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "final_z", "tail_oscillation", "tail_min", "lambda_hat_z", "flag"])
    T = exp.horizon
    for i, path in enumerate(res.trajectories):
        tail = path.z[T // 2:]
        lam = repr(float(rate.rates["z"][i])) if rate is not None and rate.rates else ""
        w.writerow([path.seed, repr(float(path.z[-1])), repr(float(np.max(np.abs(tail - path.z[-1])))),
                    repr(float(tail.min())), lam, 0])
    finals = np.array([p.z[-1] for p in res.trajectories])
    w.writerow(["median", repr(float(np.median(finals))), "", "",
                repr(rate.median_rate("z")) if rate is not None and rate.rates else "", 0])
    w.writerow(["max", repr(float(finals.max())), "" if osc is None else repr(float(osc)), "", "", ""])
    for name, v in verdicts.items():
        w.writerow([f"verdict_{name}", v.outcome, "", "", "", ""])
    w.writerow(["verdict", res.outcome, "", "", "", ""])
    steps = geometric_steps(T)
    trajs = []
    for path in res.trajectories:
        lines = ["t,z"] + [f"{int(t)},{float(path.z[t])!r}" for t in steps]
        trajs.append("\n".join(lines) + "\n")
    return buf.getvalue(), trajs


def _oracle_csv(rows) -> str:
    cols = ["t", "bias_norm", "bias_norm_stderr", "declared_bias", "variance", "variance_stderr",
            "declared_variance", "within_envelope", "evals_per_sample"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(float(r[c])) if isinstance(r[c], float) else
                                             int(r[c]) if isinstance(r[c], bool) else r[c]) for c in cols])
    return buf.getvalue()


def write_artifacts(exp: Experiment, res: Result, out: Path, plot: bool = True) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if exp.kind in ("sgd", "sa") and res.verdict is not None:
        for i, tr in enumerate(res.trajectories):
            write_atomic(out / "trajectories" / f"seed_{i:03d}.csv", tr.to_csv())
        write_atomic(out / "verdict.csv", res.verdict.to_csv())
        if plot:
            write_atomic(out / "plot.svg", trajectory_plot(exp, res))
    elif exp.kind == "rs-process":
        vcsv, trajs = _rs_csvs(res, exp)
        for i, text in enumerate(trajs):
            write_atomic(out / "trajectories" / f"seed_{i:03d}.csv", text)
        write_atomic(out / "verdict.csv", vcsv)
        extra["checks"] = {k: v.checks for k, v in res.summary["verdicts"].items()}
        extra["reasons"] = {k: v.reason for k, v in res.summary["verdicts"].items()}
        if plot:
            write_atomic(out / "plot.svg", rs_plot(exp, res))
    elif exp.kind == "counterexample":
        r = res.summary["result"]
        write_atomic(out / "trajectory.csv", r.to_csv())
        lines = ["check,value", f"final_theta,{float(r.theta[-1])!r}",
                 f"final_lower_bound,{float(r.lower_bound[-1])!r}"]
        lines += [f"{k},{int(v)}" for k, v in res.summary["checks"].items()]
        lines.append(f"verdict,{res.outcome}")
        write_atomic(out / "verdict.csv", "\n".join(lines) + "\n")
        extra["checks"] = res.summary["checks"]
        extra["drift_summable"] = res.summary["drift_summable"]
        if plot:
            fig = Figure("divergence counterexample", "t", "value", logx=True, logy=True)
            fig.add(r.t, r.theta, label="theta_t", color=PALETTE[0])
            fig.add(r.t, r.lower_bound, label="running lower bound", color=PALETTE[1], dash="4 3")
            write_atomic(out / "plot.svg", fig.render())
    elif exp.kind == "oracle-diagnostics":
        write_atomic(out / "oracle_diagnostics.csv", _oracle_csv(res.summary["rows"]))
        write_atomic(out / "verdict.csv", f"verdict\n{res.outcome}\n")
    write_atomic(out / "metadata.json", _json(_metadata(exp, res, extra)))


def trajectory_plot(exp: Experiment, res: Result) -> str:
    names = res.verdict.rates.keys()
    fig = Figure(f"{exp.name}: log-log decay", "t", "value", logx=True, logy=True)
    for j, name in enumerate(names):
        color = PALETTE[j % len(PALETTE)]
        for tr in res.trajectories:
            fig.add(tr.t, tr.series(name), color=color, width=0.8, opacity=0.25)
        good = [tr for tr in res.trajectories if not tr.diverged]
        if good:
            n = min(len(tr.t) for tr in good)
            med = np.median(np.array([tr.series(name)[:n] for tr in good]), axis=0)
            fig.add(good[0].t[:n], med, label=f"median {name}", color=color, width=2)
    nu = res.verdict.diagnostics.get("nu")
    good = [tr for tr in res.trajectories if not tr.diverged]
    if nu is not None and good:
        first = next(iter(names))
        T = float(good[0].t[-1])
        t0 = T ** 0.5
        y0 = float(np.median([np.interp(t0, tr.t, tr.series(first)) for tr in good]))
        ts = np.array([t0, T])
        fig.add(ts, y0 * (ts / t0) ** (-nu), label=f"slope -{nu:.3g}", color="#000000", dash="6 4")
    return fig.render()


def rs_plot(exp: Experiment, res: Result) -> str:
    fig = Figure(f"{exp.name}: process paths", "t", "z", logx=True, logy=True)
    steps = geometric_steps(exp.horizon)
    for path in res.trajectories[:20]:
        fig.add(steps[1:], path.z[steps[1:]], color=PALETTE[0], width=0.8, opacity=0.3)
    return fig.render()


# -- sweep --------------------------------------------------------------------------------

def sweep_grid(raw: dict, params: list[str], values: list[list[float]]) -> list[dict]:
    if not params or len(params) != len(values):
        raise ConfigError("sweep needs one value list per parameter")
    if any(len(v) == 0 for v in values):
        raise ConfigError("sweep grid is empty")
    paths = [SWEEP_ALIASES.get(p, p) for p in params]
    grid = []
    for combo in itertools.product(*values):
        cfg = raw
        for path, val in zip(paths, combo):
            if path == "oracle.k":
                val = int(val)
            cfg = set_path(cfg, path, val)
        grid.append({"point": dict(zip(params, combo)), "raw": cfg})
    return grid


def run_sweep(exp: Experiment, params: list[str], values: list[list[float]], out: Path | None,
              jobs: int = 1, plot: bool = True) -> tuple[list[dict], str]:
    if exp.kind not in ("sgd", "sa"):
        raise ConfigError("sweeps support sgd and sa experiments")
    grid = sweep_grid(exp.raw, params, values)
    rows = []
    for i, g in enumerate(grid):
        sub = parse_config(g["raw"], exp.source)
        res = evaluate(sub, jobs, enforce_gate=False)
        row = dict(g["point"])
        row["nu_predicted"] = res.gate.nu_unchecked
        row["gate"] = "ok" if res.gate.ok else "not-met"
        for name in res.verdict.rates:
            row[f"median_lambda_{name}"] = res.verdict.median_rate(name)
            row[f"min_lambda_{name}"] = res.verdict.min_rate(name)
        row["median_final"] = res.verdict.median_final
        row["outcome"] = res.outcome
        rows.append(row)
        if out is not None:
            write_atomic(Path(out) / f"point_{i:03d}" / "verdict.csv", res.verdict.to_csv())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols])
    text = buf.getvalue()
    if out is not None:
        write_atomic(Path(out) / "sweep.csv", text)
        meta = {"package": "sgdlab", "version": __version__, "config_hash": exp.hash,
                "config": hashed_config(exp.raw), "params": params, "values": values,
                "points": [{"point": r_["point"], "config_hash": parse_config(r_["raw"]).hash} for r_ in grid]}
        write_atomic(Path(out) / "metadata.json", _json(meta))
        if plot and len(params) == 1:
            write_atomic(Path(out) / "sweep.svg", sweep_plot(exp, params[0], values[0], rows))
    return rows, text


def sweep_plot(exp: Experiment, param: str, values: list[float], rows: list[dict]) -> str:
    fig = Figure(f"{exp.name}: fitted rate vs {param}", param, "rate exponent")
    xs = np.array([r[param] for r in rows], dtype=float)
    rate_cols = [c for c in rows[0] if c.startswith("median_lambda_")]
    for j, c in enumerate(rate_cols):
        fig.add(xs, [r[c] for r in rows], label=c.replace("median_lambda_", "median fitted "),
                color=PALETTE[j % len(PALETTE)], markers=True)
    lo, hi = float(xs.min()), float(xs.max())
    if hi > lo:
        dense = np.linspace(lo, hi, 200)
        nus = []
        path = SWEEP_ALIASES.get(param, param)
        for v in dense:
            try:
                nus.append(evaluate_gate(parse_config(set_path(exp.raw, path, float(v)))).nu_unchecked)
            except (ConfigError, ValueError):
                nus.append(math.nan)
        fig.add(dense, nus, label="predicted nu", color="#000000", dash="6 4")
    else:
        fig.add(xs, [r["nu_predicted"] for r in rows], label="predicted nu", color="#000000", markers=True)
    return fig.render()
