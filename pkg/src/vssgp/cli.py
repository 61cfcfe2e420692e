"""Command-line interface: ``vssgp fit | predict | impute | bench | oracle-check``.

Exit status is 0 on success, 1 for usage or input errors and 2 when a
numerical failure (or a failed oracle check) stops the run.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from vssgp.bounds import BoundKind, NumericalError
from vssgp.imputation import (
    REPORT_COLUMNS,
    RunReport,
    make_imputation_task,
    run_imputation,
    synthetic_sinusoid,
)
from vssgp.io import DataFormatError, ModelFile, Standardization, load_csv, load_model, read_csv, save_model, write_csv
from vssgp.model import KernelSpec, ParameterError
from vssgp.training import FitConfig

log = logging.getLogger("vssgp")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_components(text, Q):
    """Parse ``"l1:p1,l2:p2"``; ``p = 0`` means an infinite period.

    Each component gets the same lengthscale and period in every input
    dimension and unit weight.
    """
    ls, ips = [], []
    for part in text.split(","):
        part = part.strip()
        try:
            l_txt, p_txt = part.split(":")
            lengthscale, period = float(l_txt), float(p_txt)
        except ValueError:
            raise UsageError(f"bad component {part!r}; expected 'lengthscale:period'") from None
        if not (math.isfinite(lengthscale) and lengthscale > 0):
            raise UsageError(f"component {part!r}: lengthscale must be positive")
        if not (math.isfinite(period) and period >= 0):
            raise UsageError(f"component {part!r}: period must be non-negative (0 = infinite)")
        ls.append(np.full(Q, lengthscale))
        ips.append(np.full(Q, 0.0 if period == 0 else 1.0 / period))
    return KernelSpec.from_arrays(np.ones(len(ls)), np.array(ls), np.array(ips))


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _add_model_args(p, components_default="1:0"):
    p.add_argument("--num-features", "-K", type=_positive_int, default=20,
                   help="features per mixture component (default 20)")
    p.add_argument("--components", default=components_default,
                   help="initial mixture as 'lengthscale:period,...'; period 0 = infinite "
                        f"(default {components_default})")
    p.add_argument("--bound", choices=[b.value for b in BoundKind], default="optimal")
    p.add_argument("--optimizer", choices=["lbfgs", "rmsprop"], default=None,
                   help="default: lbfgs, or rmsprop for the stochastic bound")
    p.add_argument("--iters", type=_positive_int, default=500)
    p.add_argument("--minibatch", type=_positive_int, default=None,
                   help="mini-batch size for the stochastic bound (default: all rows)")
    p.add_argument("--step-size", type=float, default=1e-3, help="rmsprop step size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=10.0, help="initial noise precision")
    phase = p.add_mutually_exclusive_group()
    phase.add_argument("--fixed-phases", dest="variational_phases", action="store_false",
                       help="phases fixed at random draws (default)")
    phase.add_argument("--variational-phases", dest="variational_phases", action="store_true",
                       help="uniform variational posterior over phases")
    p.set_defaults(variational_phases=False)
    p.add_argument("--standardize", action="store_true",
                   help="centre and scale outputs before fitting")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    parser = _Parser(prog="vssgp", description="Variational sparse spectrum GP regression.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("fit", help="fit a model to a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--baseline", choices=["none", "ssgp", "rp"], default="none")
    _add_model_args(p)

    p = sub.add_parser("predict", help="predictive mean and std at new inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("impute", help="withhold segments, fit, report RMSEs")
    p.add_argument("--data", required=True)
    p.add_argument("--segments", type=int, default=5)
    p.add_argument("--seg-length", type=int, default=20)
    p.add_argument("--report-out", required=True)
    p.add_argument("--methods", default="vssgp,ssgp",
                   help="comma-separated subset of vssgp,ssgp,rp,rp-opt")
    p.add_argument("--sample-rate", type=float, default=None,
                   help="sampling rate in Hz; adds STFT RMSE columns")
    p.add_argument("--deterministic", action="store_true",
                   help="leave the wall-clock column empty so reruns are byte-identical")
    _add_model_args(p)

    p = sub.add_parser("bench", help="sweep the number of features")
    p.add_argument("--data", default=None, help="series CSV (default: synthetic noisy sinusoid)")
    p.add_argument("--ks", type=_int_list, default=[5, 10, 20, 40, 80])
    p.add_argument("--seeds", type=_positive_int, default=5, help="number of seeds 0..n-1")
    p.add_argument("--segments", type=int, default=5)
    p.add_argument("--seg-length", type=int, default=10)
    p.add_argument("--methods", default="vssgp")
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    _add_model_args(p, components_default="0.3:0")

    p = sub.add_parser("oracle-check", help="run the Monte Carlo and finite-difference checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    return parser


def _config(args, bound=None):
    bound = BoundKind(bound or args.bound)
    optimizer = args.optimizer or ("rmsprop" if bound is BoundKind.STOCHASTIC else "lbfgs")
    if optimizer == "rmsprop" and bound is not BoundKind.STOCHASTIC:
        raise UsageError("--optimizer rmsprop requires --bound stochastic")
    if optimizer == "lbfgs" and bound is BoundKind.STOCHASTIC:
        raise UsageError("--bound stochastic requires --optimizer rmsprop")
    if args.minibatch is not None and bound is not BoundKind.STOCHASTIC:
        raise UsageError("--minibatch only applies to --bound stochastic")
    return FitConfig(bound=bound, max_iters=args.iters, optimizer=optimizer,
                     batch_size=args.minibatch, step_size=args.step_size, seed=args.seed)


def _methods(text):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    unknown = sorted(set(methods) - {"vssgp", "ssgp", "rp", "rp-opt"})
    if not methods or unknown:
        raise UsageError(f"unknown methods {unknown}" if unknown else "no methods given")
    return methods


def cmd_fit(args):
    from vssgp.imputation import fit_method

    data = load_csv(args.data)
    spec = parse_components(args.components, data.Q)
    method = {"none": "vssgp", "ssgp": "ssgp", "rp": "rp"}[args.baseline]
    if method != "vssgp" and args.variational_phases:
        raise UsageError("baselines use fixed phases; drop --variational-phases")
    config = _config(args, "optimal" if method != "vssgp" else None)
    std = Standardization.fit(data.Y) if args.standardize else None
    Y = data.Y if std is None else std.forward(data.Y)
    model = fit_method(method, (data.X, Y), spec, args.num_features, config, args.tau,
                       args.variational_phases)
    save_model(args.model_out, ModelFile(model.state, model.spec, args.seed, len(model.trace),
                                         model.bound, model.solve, std, method))
    final = model.trace.values[-1] if model.trace.values else model.trace.initial_value
    log.info("fitted %s: %d iterations, final bound %s", method, len(model.trace), final)
    if model.trace.warning:
        print(f"warning: {model.trace.warning}", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args):
    model = load_model(args.model)
    X, _ = read_csv(args.data, allow_no_outputs=True)
    mean, var = model.predict(X)
    std = np.sqrt(var)
    if mean.shape[1] == 1:
        extra = {"mean": mean[:, 0], "std": std[:, 0]}
    else:
        extra = {"mean": mean, "std": std}
    write_csv(args.out, X, None, extra)
    return EXIT_OK


def _write_reports(path, rows, header, timing):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for prefix, report in rows:
            w.writerow(list(prefix) + report.row(timing))


def _echo(args, method, K):
    return {"method": method, "K": K, "components": args.components, "bound": args.bound,
            "iters": args.iters, "seed": args.seed, "tau": args.tau,
            "variational_phases": args.variational_phases, "standardize": args.standardize,
            "segments": args.segments, "seg_length": args.seg_length}


def _run(task, method, args, K, config, seed, sample_rate=None):
    spec = parse_components(args.components, task.series.Q)
    if method != "vssgp":
        config = FitConfig(**{**config.__dict__, "bound": BoundKind.OPTIMAL, "optimizer": "lbfgs",
                              "batch_size": None})
    echo = dict(_echo(args, method, K), seed=seed)
    return run_imputation(task, method, spec, K, config, args.tau,
                          args.variational_phases and method == "vssgp", sample_rate, echo,
                          standardize=args.standardize)


def cmd_impute(args):
    data = load_csv(args.data)
    methods = _methods(args.methods)
    config = _config(args)
    task = make_imputation_task(data, args.segments, args.seg_length, args.seed)
    reports = [((), _run(task, m, args, args.num_features, config, args.seed, args.sample_rate))
               for m in methods]
    _write_reports(args.report_out, reports, list(REPORT_COLUMNS), not args.deterministic)
    for _, r in reports:
        log.info("%s: train %.4g test %s", r.method, r.train_rmse, r.test_rmse)
    return EXIT_OK


def cmd_bench(args):
    methods = _methods(args.methods)
    series = load_csv(args.data) if args.data else None
    rows = []
    for K in args.ks:
        for seed in range(args.seeds):
            data = series if series is not None else synthetic_sinusoid(seed=seed)[0]
            task = make_imputation_task(data, args.segments, args.seg_length, seed)
            for m in methods:
                config = _config(args)
                config = FitConfig(**{**config.__dict__, "seed": seed})
                report = _run(task, m, args, K, config, seed)
                log.info("K=%d seed=%d %s: test %s", K, seed, m, report.test_rmse)
                rows.append(((K, seed), report))
    _write_reports(args.out, rows, ["K", "seed"] + list(REPORT_COLUMNS), not args.deterministic)
    return EXIT_OK


def cmd_oracle_check(args):
    from vssgp.oracles import run_suite

    results = run_suite(seed=args.seed, quick=args.quick)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERICAL


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "impute": cmd_impute, "bench": cmd_bench,
            "oracle-check": cmd_oracle_check}


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, DataFormatError, ParameterError, FileNotFoundError, ValueError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
