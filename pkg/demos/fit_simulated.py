"""Simulate a spiky series, run the pipeline, and compare labels with the truth.

Usage::

    python3 demos/fit_simulated.py --process nhpp --seed 3
"""
import argparse

import numpy as np

from smoothem import PipelineConfig, run_smoothem
from smoothem.simgen import Scenario, generate, metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--stn", type=float, default=2.0)
    ap.add_argument("--alpha-star", type=float, default=0.8)
    ap.add_argument("--process", choices=("uniform", "nhpp"), default="uniform")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = generate(Scenario(n=args.n, stn=args.stn, alpha_star=args.alpha_star,
                             spike_process=args.process, seed=args.seed))
    print(f"{data.true_labels.sum()} of {args.n} points carry a spike of size {data.scenario.mu_star:g}")

    result = run_smoothem(data.xs, data.ys, PipelineConfig())
    print("\n   lambda     loglik    overfit  criterion  spikes")
    for row in result.per_lambda:
        mark = "  <-" if row.lam == result.lambda_star else ""
        print(f"{row.lam:9.0e} {row.loglik:10.4f} {row.overfit:10.4f} {row.criterion:10.4f} {row.n_spikes:7d}{mark}")

    p = result.params
    print(f"\nestimated alpha={p.alpha:.3f} mu={p.mu:.2f} sigma2={p.sigma2:.3f}"
          f"  (truth {data.theta_star[0]:.3f}, {data.theta_star[1]:.2f}, {data.theta_star[2]:.3f})")
    m = metrics(result, data)
    print(f"FNR={m.fnr:.3f} FPR={m.fpr:.3f} curve RMS error={m.l2:.4f} max error={m.linf:.4f}")
    worst = np.argsort(-np.abs(result.predict(data.xs) - data.true_f))[:3]
    print("largest curve errors at x =", np.round(data.xs[worst], 3))


if __name__ == "__main__":
    main()
