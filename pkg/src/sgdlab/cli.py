"""Command-line entry point: ``sgdlab run|sweep|verify-oracles|rs``.

Exit codes: 0 pass, 2 conclusion failed, 3 hypotheses not met, 1 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .analysis import EXIT_CODES
from .config import ConfigError, load_config, parse_config, with_seed_count
from .runner import evaluate, run_sweep, write_artifacts

USAGE_ERROR = 1
VERB_KINDS = {"rs": ("rs-process",), "verify-oracles": ("oracle-diagnostics",)}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgdlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="path to a JSON experiment config")
    common.add_argument("--seeds", type=int, help="number of seeds (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes for seed fan-out")
    common.add_argument("--no-plot", action="store_true", help="skip SVG output")
    sub.add_parser("run", parents=[common], help="run any experiment config")
    sw = sub.add_parser("sweep", parents=[common], help="grid over one or two config parameters")
    sw.add_argument("--param", action="append", required=True,
                    help="dotted config path or alias (s, k, p); repeat for a 2-D grid")
    sw.add_argument("--values", action="append", required=True,
                    help="comma-separated values, one list per --param")
    sub.add_parser("verify-oracles", parents=[common], help="Monte-Carlo bias/variance diagnostics")
    sub.add_parser("rs", parents=[common], help="simulate and verify the almost-supermartingale process")
    return ap


def _load(args):
    exp = load_config(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        exp = parse_config(with_seed_count(exp.raw, args.seeds), args.config)
    allowed = VERB_KINDS.get(args.verb)
    if allowed and exp.kind not in allowed:
        raise ConfigError(f"'{args.verb}' expects a {allowed[0]!r} config, got {exp.kind!r}")
    return exp


def _settings(args, exp):
    out = Path(args.out or exp.raw.get("out") or Path("runs") / exp.name)
    jobs = args.jobs if args.jobs is not None else exp.raw.get("jobs", 1)
    if jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    plot = not args.no_plot and exp.raw.get("plot", True)
    return out, jobs, plot


def _values(text: str) -> list[float]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    try:
        return [float(v) for v in vals]
    except ValueError:
        raise ConfigError(f"--values: not a number list: {text!r}") from None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        exp = _load(args)
        out, jobs, plot = _settings(args, exp)
        if args.verb == "sweep":
            if len(args.param) != len(args.values):
                raise ConfigError("give one --values list per --param")
            rows, _ = run_sweep(exp, args.param, [_values(v) for v in args.values], out, jobs, plot)
            for r in rows:
                print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
            print(f"wrote {out / 'sweep.csv'}")
            return 0
        res = evaluate(exp, jobs)
        write_artifacts(exp, res, out, plot)
    except ValueError as exc:  # ConfigError and the domain validation errors
        print(f"sgdlab: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    print(f"{exp.name}: {res.outcome}" + (f" ({res.reason})" if res.reason else ""))
    if res.verdict is not None and res.verdict.rates:
        for name in res.verdict.rates:
            print(f"  median lambda_hat[{name}] = {res.verdict.median_rate(name):.4f}")
    print(f"  artifacts in {out}")
    return EXIT_CODES[res.outcome]


if __name__ == "__main__":
    sys.exit(main())
