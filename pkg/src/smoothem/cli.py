"""Command-line entry point: ``smoothem {fit,simulate,sweep,theory}``.

Every subcommand accepts ``--config FILE``, a flat JSON object whose keys are
the subcommand's long option names without the leading dashes (kebab-case).
Flags given on the command line override values from the file. The master
seed falls back to the ``SMOOTHEM_SEED`` environment variable, then to 0.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, mixture, smoother, theory
from .pipeline import CURVE_GRID_SIZE, DEFAULT_LAMBDA_GRID, PipelineConfig, run_smoothem
from .simgen import Curve, RateSpec, Scenario, generate, scenario_grid, sweep

logger = logging.getLogger("smoothem")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
MIN_ROWS = 20


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


class NumericError(Exception):
    """Numerical breakdown; reported with exit code 3."""


# ---------------------------------------------------------------- formatting

def fmt(v) -> str:
    """Shortest text that parses back to the same value."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_xy(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an ``x,y`` CSV with a header; extra columns are ignored."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        if "x" not in names or "y" not in names:
            raise InputError(f"{path}:1: header must name columns 'x' and 'y', got {header}")
        ix, iy = names.index("x"), names.index("y")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            try:
                x, y = float(row[ix]), float(row[iy])
            except ValueError:
                raise InputError(f"{path}:{line}: non-numeric value in {row[ix]!r}, {row[iy]!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InputError(f"{path}:{line}: values must be finite")
            xs.append(x)
            ys.append(y)
    if len(xs) < MIN_ROWS:
        raise InputError(f"{path}: need at least {MIN_ROWS} data rows, found {len(xs)}")
    xs, ys = np.array(xs), np.array(ys)
    if np.ptp(xs) == 0:
        raise InputError(f"{path}: x values span an empty interval")
    return xs, ys


# ---------------------------------------------------------------- argument parsing

def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


# option name -> (type, default); shared by flags and config files
_PIPELINE_OPTS = {
    "lambda-grid": (_float_list, DEFAULT_LAMBDA_GRID),
    "variant": (str, "equal"),
    "beta": (float, 1.0),
    "penalty-order": (int, 2),
    "n-interior": (int, None),
    "max-spike-fraction": (float, 0.5),
}
_SCENARIO_OPTS = {
    "curve": (str, "poly4"),
    "sigma-star": (float, 1.0),
    "spike-process": (str, "uniform"),
}
OPTIONS = {
    "fit": {"output-dir": (str, "."), "seed": (int, None), "threads": (int, None), **_PIPELINE_OPTS},
    "simulate": {
        "output": (str, "data.csv"), "seed": (int, None), "n": (int, 500), "stn": (float, 2.0),
        "alpha-star": (float, 0.8), **_SCENARIO_OPTS,
    },
    "sweep": {
        "output": (str, "sweep.csv"), "seed": (int, None), "threads": (int, None),
        "ns": (_int_list, (500, 1000)), "stns": (_float_list, (1.0, 2.0)),
        "spike-fractions": (_float_list, (0.05, 0.1)), "replicates": (int, 20),
        **_SCENARIO_OPTS, **_PIPELINE_OPTS,
    },
    "theory": {
        "output": (str, "theory.csv"), "spike-fractions": (_float_list, theory.RATE_GRID_SPIKE_FRACTIONS),
        "sigma-star": (_float_list, None), "r": (_float_list, None),
        "constant-set": (str, "known_alpha"), "target": (float, 1e-4),
    },
}
_CHOICES = {
    "variant": ("equal", "inflated"),
    "curve": ("poly4", "beta41", "sine_fast", "nine_pi_sin"),
    "spike-process": ("uniform", "nhpp"),
    "constant-set": ("known_alpha", "full"),
}
_HELP = {
    "lambda-grid": "comma-separated smoothing parameters to search",
    "seed": "master seed (default: $SMOOTHEM_SEED or 0)",
    "threads": "worker processes (default: available cores)",
    "output-dir": "directory for fit.csv, params.json and curve.csv",
    "spike-fractions": "comma-separated values of 1 - alpha*",
    "sigma-star": "noise sd (for theory: comma-separated list, paired with --r)",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smoothem", description="Spline smoothing with spike detection by mixture EM.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "fit": "fit a CSV of x,y observations",
        "simulate": "write one simulated dataset",
        "sweep": "average simulation metrics over a scenario grid",
        "theory": "tabulate contraction constants and rates",
    }
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        if name == "fit":
            p.add_argument("input", help="CSV with header containing x and y")
        p.add_argument("--config", help="flat JSON file of option values")
        for key, (typ, default) in opts.items():
            flags = [f"--{key}"]
            if key in ("output", "output-dir"):
                flags.insert(0, "-o")
            kw = {"type": typ, "dest": key.replace("-", "_"), "help": _HELP.get(key)}
            if key in _CHOICES:
                kw["choices"] = _CHOICES[key]
            if default is not None and kw["help"] is None:
                kw["help"] = f"default: {','.join(map(str, default)) if isinstance(default, tuple) else default}"
            p.add_argument(*flags, **kw)
    return parser


def load_config(path, command: str) -> dict:
    """Read a flat JSON config, validating keys and value types for ``command``."""
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise InputError(f"{path}: config must be a JSON object")
    opts = OPTIONS[command]
    unknown = sorted(set(raw) - set(opts))
    if unknown:
        raise InputError(f"{path}: unknown config key(s) for '{command}': {', '.join(unknown)}")
    out = {}
    for key, value in raw.items():
        typ = opts[key][0]
        try:
            if typ in (_float_list, _int_list) and isinstance(value, list):
                value = ",".join(str(v) for v in value)
            if typ is int and isinstance(value, float) and not value.is_integer():
                raise ValueError
            out[key] = None if value is None else typ(value)
        except (ValueError, TypeError, argparse.ArgumentTypeError):
            raise InputError(f"{path}: bad value for '{key}': {value!r}") from None
        if key in _CHOICES and out[key] not in _CHOICES[key]:
            raise InputError(f"{path}: '{key}' must be one of {', '.join(_CHOICES[key])}")
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags into one option dict."""
    opts = {key: default for key, (_, default) in OPTIONS[args.command].items()}
    if getattr(args, "config", None):
        opts.update(load_config(args.config, args.command))
    for key in OPTIONS[args.command]:
        dest = key.replace("-", "_")
        if hasattr(args, dest):
            opts[key] = getattr(args, dest)
    if "seed" in opts and opts["seed"] is None:
        env = os.environ.get("SMOOTHEM_SEED")
        try:
            opts["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise InputError(f"SMOOTHEM_SEED must be an integer, got {env!r}") from None
    if "threads" in opts:
        threads = opts["threads"] or os.cpu_count() or 1
        if threads < 1:
            raise InputError("--threads must be positive")
        opts["threads"] = threads
    return opts


def pipeline_config(opts: dict) -> PipelineConfig:
    try:
        return PipelineConfig(
            lambda_grid=opts["lambda-grid"], variant=opts["variant"], beta=opts["beta"],
            penalty_order=opts["penalty-order"], n_interior=opts["n-interior"],
            max_spike_fraction=opts["max-spike-fraction"], perturbation_seed=opts.get("seed", 0),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


# ---------------------------------------------------------------- commands

def cmd_fit(opts: dict, input_path) -> int:
    xs, ys = read_xy(input_path)
    config = pipeline_config(opts)
    outdir = Path(opts["output-dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    result = run_smoothem(xs, ys, config)
    if not np.all(np.isfinite(result.fit.fitted)):
        raise NumericError("non-finite fitted values")

    fitted = result.fit.fitted
    post = result.responsibilities
    write_csv(outdir / "fit.csv", ["x", "y", "fitted", "residual", "spike", "posterior"],
              zip(xs, ys, fitted, ys - fitted, result.labels.astype(int), post))

    grid = np.linspace(xs.min(), xs.max(), CURVE_GRID_SIZE)
    write_csv(outdir / "curve.csv", ["x", "fitted"], zip(grid, result.predict(grid)))

    p = result.params
    write_json(outdir / "params.json", {
        "lambda_star": result.lambda_star,
        "alpha": p.alpha, "mu": p.mu, "sigma2": p.sigma2, "sigma_h2": p.sigma_h2,
        "variant": p.variant.value,
        "threshold": result.best.threshold,
        "n": int(xs.size), "n_spikes": int(result.labels.sum()),
        "sigma_tau": result.sigma_tau,
        "flags": result.flags,
        "per_lambda": [
            {"lambda": r.lam, "loglik": r.loglik, "overfit": r.overfit, "criterion": r.criterion,
             "n_spikes": r.n_spikes, "threshold": r.threshold, "em_converged": r.em_converged,
             "collapsed": r.collapsed}
            for r in result.per_lambda
        ],
    })
    if result.no_spikes_found:
        logger.warning("no spikes found")
    logger.info("lambda*=%g, %d spikes, output in %s", result.lambda_star, result.labels.sum(), outdir)
    return EXIT_OK


def _scenario(opts: dict, n: int, stn: float, alpha_star: float, seed: int) -> Scenario:
    try:
        return Scenario(n=n, curve=Curve(opts["curve"]), sigma_star=opts["sigma-star"], stn=stn,
                        alpha_star=alpha_star, spike_process=opts["spike-process"],
                        rate_spec=RateSpec(), seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_simulate(opts: dict) -> int:
    sc = _scenario(opts, opts["n"], opts["stn"], opts["alpha-star"], opts["seed"])
    try:
        data = generate(sc)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(opts["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["x", "y", "f", "spike"], zip(data.xs, data.ys, data.true_f, data.true_labels.astype(int)))
    logger.info("wrote %d rows (%d spikes) to %s", sc.n, data.true_labels.sum(), out)
    return EXIT_OK


SWEEP_COLUMNS = ("n", "stn", "one_minus_alpha", "spike_process", "curve",
                 "l2_mean", "l2_sd", "linf_mean", "linf_sd", "fnr_mean", "fnr_sd",
                 "fpr_mean", "fpr_sd", "sse_mean", "sse_sd",
                 "replicates", "n_ok", "partial", "errors")


def cmd_sweep(opts: dict) -> int:
    config = pipeline_config(opts)
    if opts["replicates"] < 1:
        raise InputError("--replicates must be at least 1")
    try:
        scenarios = scenario_grid(opts["ns"], opts["stns"], opts["spike-fractions"],
                                  curve=Curve(opts["curve"]), sigma_star=opts["sigma-star"],
                                  spike_process=opts["spike-process"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    table = sweep(scenarios, opts["replicates"], config, base_seed=opts["seed"], n_jobs=opts["threads"])
    out = Path(opts["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, SWEEP_COLUMNS, ([row[c] for c in SWEEP_COLUMNS] for row in table))
    partial = sum(row["partial"] for row in table)
    if partial:
        logger.warning("%d of %d cells have failed replicates", partial, len(table))
    return EXIT_OK


THEORY_COLUMNS = ("sigma_star", "r", "one_minus_alpha", "nu", "L", "gamma", "CR", "k", "flag")


def cmd_theory(opts: dict) -> int:
    sig, rad = opts["sigma-star"], opts["r"]
    if (sig is None) != (rad is None):
        raise InputError("--sigma-star and --r must be given together")
    if sig is None:
        grid = theory.RATE_GRID_SIGMA_R
    else:
        if len(sig) != len(rad):
            raise InputError("--sigma-star and --r need the same number of values")
        grid = tuple(zip(sig, rad))
    rows = theory.rate_table(grid, opts["spike-fractions"], target=opts["target"],
                             constant_set=theory.ConstantSet(opts["constant-set"]))
    out = Path(opts["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, THEORY_COLUMNS,
              ((r.sigma_star, r.r, r.spike_fraction, r.nu, r.L, r.gamma, r.rate, r.iterations, r.flag)
               for r in rows))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        opts = resolve(args)
        if args.command == "fit":
            return cmd_fit(opts, args.input)
        return {"simulate": cmd_simulate, "sweep": cmd_sweep, "theory": cmd_theory}[args.command](opts)
    except InputError as exc:
        print(f"smoothem: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, smoother.SingularSystemError, np.linalg.LinAlgError,
            FloatingPointError, mixture.ComponentCollapseError) as exc:
        print(f"smoothem: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"smoothem: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
