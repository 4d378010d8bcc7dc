"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical degeneracy,
4 unsupported method combination.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from typing import Optional, Sequence

import numpy as np

from .bands import DEFAULT_BAND_R, DEFAULT_DELTA, density_band, winf_band
from .errors import DegenerateError, DesignError, InputError, UnsupportedMethodError
from .experiments import BAND_XS, SIGNALS, CoverageCell, power_grid, run_coverage_experiment, \
    run_power_experiment
from .fit import fit_model, wasserstein_r_squared
from .inference import DEFAULT_B, DEFAULT_R, METHODS, test_global, test_partial
from .io import emit_report, load_dataset, save_dataset, write_table
from .quantile import DEFAULT_GRID_SIZE
from .simulate import SimConfig, generate_dataset

EXIT_INPUT, EXIT_DEGENERATE, EXIT_UNSUPPORTED = 2, 3, 4
REPRODUCE_REPS, REPRODUCE_FULL_REPS = 100, 500
REPRODUCE_BAND_R = 5000
REPRODUCE_BOOT_B = 499


class UsageError(InputError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _delta(text: str) -> float:
    v = float(text)
    if not 0 < v < 0.5:
        raise argparse.ArgumentTypeError("delta must lie in (0, 0.5)")
    return v


def _need_seed(args) -> int:
    if args.seed is None:
        raise UsageError(f"{args.command} is stochastic: pass --seed")
    return args.seed


def _load(args):
    return load_dataset(args.input, grid_size=args.grid_size, fixed_support=args.fixed_support)


def cmd_fit(args) -> None:
    data = _load(args)
    fit = fit_model(data)
    if args.at:
        rows = []
        curves = [fit.quantile_at(x).values for x in args.at]
        labels = ["x=" + ";".join("%.17g" % v for v in x) for x in args.at]
        for j, t in enumerate(data.grid.points):
            row = {"t": t}
            row.update({lab: c[j] for lab, c in zip(labels, curves)})
            rows.append(row)
        write_table(rows, args.output, ["t"] + labels)
    else:
        save_dataset(data.with_responses(fit.fitted), args.output, include_densities=False)
    summary = {"n": data.n, "p": data.p, "r_squared": wasserstein_r_squared(data, fit),
               "projection_active": int(np.count_nonzero(fit.projection_active))}
    print(json.dumps(summary, sort_keys=True))


def cmd_test_global(args) -> None:
    seed = _need_seed(args)
    report = test_global(_load(args), args.alpha, args.method, R=args.reps or DEFAULT_R,
                         B=args.boot_reps, seed=seed)
    emit_report(report, args.output)
    print(f"F = {report.statistic:.6g}  critical = {report.critical_value:.6g}  "
          f"p = {report.p_value:.4g}")


def cmd_test_partial(args) -> None:
    seed = _need_seed(args)
    if not args.partition:
        raise UsageError("test-partial needs --partition with the tested predictors")
    tested = [c.strip() for c in args.partition.split(",") if c.strip()]
    report = test_partial(_load(args), tested, args.alpha, args.method,
                          R=args.reps or DEFAULT_R, B=args.boot_reps, seed=seed)
    emit_report(report, args.output)
    print(f"F = {report.statistic:.6g}  critical = {report.critical_value:.6g}  "
          f"p = {report.p_value:.4g}")


def cmd_band(args) -> None:
    seed = _need_seed(args)
    if not args.at or len(args.at) != 1:
        raise UsageError("band needs exactly one --at predictor value")
    data = _load(args)
    fit = fit_model(data)
    R = args.reps or DEFAULT_BAND_R
    if args.band == "winf":
        band = winf_band(data, fit, args.at[0], args.alpha, R, seed, args.fixed_support,
                         args.delta)
    else:
        band = density_band(data, fit, args.at[0], args.alpha, args.delta, R, seed)
    emit_report(band, args.output)
    print(f"critical value = {band.critical_value:.6g}  excluded points = {band.excluded}")


def cmd_simulate(args) -> None:
    seed = _need_seed(args)
    coef = args.coef or [0.0] * (2 * args.p)
    if len(coef) != 2 * args.p:
        raise UsageError("--coef needs location slopes then scale slopes, one per predictor")
    config = SimConfig(n=args.n, p=args.p, alpha=tuple(coef[:args.p]),
                       beta=tuple(coef[args.p:]), transport=args.transport,
                       indirect=args.indirect, grid_size=args.grid_size, seed=seed)
    sim = generate_dataset(config, np.random.default_rng(seed))
    save_dataset(sim.data, args.output)


def cmd_reproduce(args) -> None:
    seed = _need_seed(args)
    reps = args.reps or (REPRODUCE_FULL_REPS if args.full else REPRODUCE_REPS)
    ns = tuple(int(v) for v in args.ns) if args.ns else (100, 200, 500)
    signals = tuple(args.signals) if args.signals else SIGNALS
    if args.target == "fig2":
        rows = []
        for test, engines in (("global", METHODS), ("partial", ("mixture", "satterthwaite"))):
            settings = power_grid(tests=(test,), ns=ns, signals=signals,
                                  indirect=args.indirect)
            rows += run_power_experiment(settings, reps, engines, seed, args.alpha,
                                         B=args.boot_reps or REPRODUCE_BOOT_B,
                                         workers=args.workers)
        emit_report(rows, args.output, "fig2")
    else:
        cells = [CoverageCell(k, n, args.indirect) for k in ("linear", "nonlinear")
                 for n in ns]
        xs = tuple(args.xs) if args.xs else BAND_XS
        rows = run_coverage_experiment(cells, xs, reps=reps, seed=seed,
                                       alpha=args.alpha, delta=args.delta,
                                       R=REPRODUCE_BAND_R, workers=args.workers)
        emit_report(rows, args.output, "table1")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", required=True)
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=_alpha, default=0.05)
    common.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE)
    common.add_argument("--workers", type=int, default=1)

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--input", required=True)
    data_opts.add_argument("--fixed-support", action="store_true")

    test_opts = argparse.ArgumentParser(add_help=False)
    test_opts.add_argument("--method", choices=METHODS, default="mixture")
    test_opts.add_argument("--reps", type=int, help="Monte Carlo draws R")
    test_opts.add_argument("--boot-reps", type=int, default=DEFAULT_B, help="bootstrap size B")

    p = argparse.ArgumentParser(prog="wassreg",
                                description="Wasserstein regression, F-tests and bands")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common, data_opts], help="fit the regression model")
    s.add_argument("--at", type=_floats, action="append")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("test-global", parents=[common, data_opts, test_opts],
                       help="global F-test")
    s.set_defaults(func=cmd_test_global)

    s = sub.add_parser("test-partial", parents=[common, data_opts, test_opts],
                       help="partial F-test")
    s.add_argument("--partition", help="comma-separated names of the tested predictors")
    s.set_defaults(func=cmd_test_partial)

    s = sub.add_parser("band", parents=[common, data_opts], help="confidence band")
    s.add_argument("--at", type=_floats, action="append")
    s.add_argument("--band", choices=("winf", "density"), default="winf")
    s.add_argument("--reps", type=int, help="Gaussian paths R")
    s.add_argument("--delta", type=_delta, default=DEFAULT_DELTA)
    s.set_defaults(func=cmd_band)

    s = sub.add_parser("simulate", parents=[common], help="generate a simulated dataset")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--p", type=int, choices=(1, 2), default=2)
    s.add_argument("--coef", type=_floats, help="alpha_1..alpha_p,beta_1..beta_p")
    s.add_argument("--transport", choices=("linear", "nonlinear", "none"), default="linear")
    s.add_argument("--indirect", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reproduce", parents=[common], help="rerun the simulation study")
    s.add_argument("target", choices=("fig2", "table1"))
    s.add_argument("--reps", type=int, help="simulation replications")
    s.add_argument("--boot-reps", type=int)
    s.add_argument("--full", action="store_true", help="use 500 replications")
    s.add_argument("--delta", type=_delta, default=DEFAULT_DELTA)
    s.add_argument("--indirect", action="store_true")
    s.add_argument("--ns", type=_floats, help="sample sizes (default 100,200,500)")
    s.add_argument("--signals", type=_floats, help="fig2 signal values")
    s.add_argument("--xs", type=_floats, help="table1 predictor values")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except UnsupportedMethodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (DesignError, DegenerateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
