"""Measure SPSA bias and variance against the increment size c."""
import argparse

import numpy as np

from sgdlab.objectives import sinsq
from sgdlab.oracles import SPSA, NoiseModel, estimate_bias_variance
from sgdlab.schedules import PowerLawSchedule, Role


def table(k, cs, sigma, dim, theta, samples, seed):
    obj = sinsq(dim)
    th = np.full(dim, theta)
    print(f"k={k} sigma={sigma} dim={dim} theta={theta}")
    print(f"{'c':>8s} {'bias_norm':>12s} {'stderr':>10s} {'variance':>12s}")
    var = []
    for c in cs:
        o = SPSA(k, PowerLawSchedule(c, 0.0, role=Role.INCREMENT), NoiseModel("gaussian", sigma))
        est = estimate_bias_variance(o, obj, th, 0, samples, np.random.default_rng(seed))
        var.append(est.variance)
        print(f"{c:8.4f} {est.bias_norm:12.4e} {np.linalg.norm(est.bias_stderr):10.2e} {est.variance:12.4e}")
    slope = np.polyfit(np.log(cs), np.log(var), 1)[0]
    print(f"log-log variance slope {slope:.3f}\n")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--dim", type=int, default=4)
    ap.add_argument("--theta", type=float, default=0.01)
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cs = [0.2, 0.1, 0.05, 0.025]
    for k in (1, 2):
        table(k, cs, args.sigma, args.dim, args.theta, args.samples, args.seed)
