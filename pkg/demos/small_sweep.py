"""Run a small replicated sweep over sample size and spike strength.

Usage::

    python3 demos/small_sweep.py --replicates 5 --process nhpp
"""
import argparse

from smoothem.simgen import scenario_grid, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=5)
    ap.add_argument("--process", choices=("uniform", "nhpp"), default="uniform")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cells = scenario_grid((300, 600), (1.0, 2.0), (0.1, 0.2), spike_process=args.process)
    rows = sweep(cells, replicates=args.replicates, base_seed=args.seed, n_jobs=1)
    print("   n  stn  1-alpha*    RMS     FNR     FPR")
    for r in rows:
        print(f"{r['n']:4d} {r['stn']:4.1f} {r['one_minus_alpha']:9.2f} {r['l2_mean']:6.3f} "
              f"{r['fnr_mean']:7.3f} {r['fpr_mean']:7.3f}{'  partial' if r['partial'] else ''}")


if __name__ == "__main__":
    main()
