"""Run every config in configs/ through the CLI and tabulate outcomes."""
import argparse
import json
import sys
from pathlib import Path

from sgdlab.cli import main

ROOT = Path(__file__).resolve().parent.parent
VERBS = {"rs-process": "rs", "oracle-diagnostics": "verify-oracles"}


def run(out_root, jobs):
    rows = []
    for cfg in sorted((ROOT / "configs").glob("*.json")):
        kind = json.loads(cfg.read_text())["experiment"]
        out = out_root / cfg.stem
        code = main([VERBS.get(kind, "run"), str(cfg), "--out", str(out), "--jobs", str(jobs)])
        rows.append((cfg.stem, code))
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs", type=Path)
    ap.add_argument("--jobs", default=1, type=int)
    args = ap.parse_args()
    rows = run(args.out, args.jobs)
    print()
    for name, code in rows:
        print(f"{name:24s} exit {code}")
    sys.exit(max(code for _, code in rows))
