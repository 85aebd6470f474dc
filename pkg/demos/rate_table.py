"""Print the EM contraction-rate table and check the Hessian bounds on each setting.

Usage::

    python3 demos/rate_table.py --samples 2000
"""
import argparse

from smoothem import theory


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=2000, help="sampled parameters per setting")
    args = ap.parse_args()

    print("sigma*     r  1-alpha*        nu         L     rate   iters  reference  bounds")
    for row in theory.rate_table():
        col = theory.RATE_GRID_SIGMA_R.index((row.sigma_star, row.r))
        ref = theory.REFERENCE_RATES[row.spike_fraction][col]
        rep = theory.verify_bounds(theory.TheoryInputs.from_sd(row.sigma_star, row.r, row.spike_fraction),
                                   n_samples=args.samples)
        print(f"{row.sigma_star:6.1f} {row.r:5.2f} {row.spike_fraction:9.2f} {row.nu:9.5f} {row.L:9.5f} "
              f"{row.rate:8.3f} {row.iterations:7d} {ref:10.3f}  {'ok' if rep.ok else 'VIOLATED'}")


if __name__ == "__main__":
    main()
