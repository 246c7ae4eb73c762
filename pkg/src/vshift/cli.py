"""``vshift`` command-line interface.

Machine-readable output (CSV/JSON) goes to files or stdout; short human
summaries go to stderr.  Exit codes: 0 success, 1 usage error, 2 data
error, 3 numerical failure.  Relative output paths are resolved against
``$VSHIFT_OUTPUT_DIR`` when it is set.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, dataset as ds, harness, vboost, vmatrix as vm, vsvm
from .errors import DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_DIR_ENV = "VSHIFT_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ validators

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _unit_float(text):
    v = float(text)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"expected a number in [0, 1], got {text}")
    return v


def _rate(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"expected a number in (0, 1], got {text}")
    return v


def _out_path(path):
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _emit(text, path):
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        _out_path(path).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _note(msg):
    print(msg, file=sys.stderr)


# -------------------------------------------------------------- commands

def cmd_gen(args):
    if args.kind == "sigmoid":
        if not (args.out_train and args.out_target):
            raise UsageError("gen --kind sigmoid needs --out-train and --out-target")
        train, target, _ = ds.gen_sigmoid_synthetic(args.n_train, args.n_target, args.seed)
        ds.write_labeled_csv(train, _out_path(args.out_train))
        ds.write_target_csv(target, _out_path(args.out_target))
        _note(f"wrote {train.n_samples} training and {target.n_samples} target rows")
        return
    out = args.out or args.out_train
    if not out:
        raise UsageError(f"gen --kind {args.kind} needs --out")
    gen = ds.gen_twonorm if args.kind == "twonorm" else ds.gen_ringnorm
    data = gen(args.n, args.seed)
    ds.write_labeled_csv(data, _out_path(out))
    _note(f"wrote {data.n_samples} {args.kind} rows")


_BIAS_SCHEME = {"sugiyama": "sugiyama", "feature": "single_feature", "norm": "norm"}


def cmd_bias(args):
    source = ds.load_csv(args.input, args.label_column)
    if not args.no_normalize:
        source, _ = ds.normalize_dataset(source)
    if args.feature is not None and not 0 <= args.feature < source.n_features:
        raise UsageError(f"--feature must lie in [0, {source.n_features})")
    if args.scheme == "sugiyama" and args.test_size is None:
        raise UsageError("bias --scheme sugiyama needs --test-size")
    spec = ds.BiasSpec(_BIAS_SCHEME[args.scheme], args.train_size, args.test_size,
                       args.feature, args.direction, args.seed)
    train, target, info = ds.apply_bias(source, spec)
    ds.write_labeled_csv(train, _out_path(args.out_train))
    ds.write_target_csv(target, _out_path(args.out_target))
    if args.out_target_labels:
        ds.write_labeled_csv(ds.LabeledDataset(target.features, target.labels),
                             _out_path(args.out_target_labels))
    _note(f"bias {args.scheme}: feature={info.get('feature')} direction={info.get('direction')} "
          f"train={train.n_samples} target={target.n_samples}")


def _build_v(kind, train, target, c):
    if kind in ("empirical", "multiplicative"):
        return vm.empirical_v(train.features, _require_target(target))
    if kind == "additive":
        return vm.empirical_v_additive(train.features, _require_target(target))
    if kind in ("analytic", "analytic-uniform"):
        return vm.analytic_v_uniform(train.features, c)
    if kind == "analytic-gaussian":
        return vm.analytic_v_gaussian(train.features)
    if kind == "identity":
        return vm.identity_v(train.n_samples)
    raise UsageError(f"unknown V kind {kind}")


def _require_target(target):
    if target is None:
        raise UsageError("this V-matrix needs --target")
    return target


def _load_target(path):
    return None if path is None else ds.load_target_csv(path)


def cmd_vmatrix(args):
    train = ds.load_csv(args.train, args.label_column)
    V = _build_v(args.kind, train, _load_target(args.target), args.c)
    if args.out:
        V.to_csv(_out_path(args.out))
    else:
        for row in V.entries:
            print(",".join(f"{v:.17g}" for v in row))
    _note(f"{V.kind} V-matrix, {V.size}x{V.size}")


def cmd_train(args):
    train = ds.load_csv(args.train, args.label_column)
    target = _load_target(args.target)
    kernel = vsvm.KernelConfig(args.kernel, args.width)
    if args.method == "vsvm":
        model = vsvm.fit(train, _build_v(args.v, train, target, args.c), kernel, args.gamma)
    elif args.method == "unweighted":
        model = vsvm.fit(train, vm.identity_v(train.n_samples), kernel, args.gamma)
    elif args.method == "weighted":
        w = baselines.importance_weights(train.features, _require_target(target),
                                         args.bandwidth, args.scheme, args.tau)
        if args.out_weights:
            w.to_csv(_out_path(args.out_weights))
        model = baselines.fit_weighted(train, w, kernel, args.gamma)
    else:
        params = vboost.BoostParams(args.trees, args.depth, args.reg_lambda, args.gamma_tree,
                                    args.learning_rate, args.min_leaf)
        model = vboost.fit_boost(train, _build_v(args.v, train, target, args.c), params)
    _emit(model.to_json(), args.out)
    _note(f"trained {args.method} on {train.n_samples} points")


def load_model(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = d.get("model_type", "vsvm")
    if kind == "vboost":
        return vboost.BoostModel.from_dict(d)
    return vsvm.VsvmModel.from_dict(d)


def cmd_predict(args):
    model = load_model(args.model)
    if args.label_column is not None:
        X = ds.load_csv(args.input, args.label_column).features
    else:
        X = ds.load_target_csv(args.input).features
    raw = model.decision_function(X)
    lines = ["probability,label"]
    lines += [f"{float(np.clip(r, 0, 1))!r},{int(r >= 0.5)}" for r in raw]
    _emit("\n".join(lines), args.out)


def cmd_experiment(args):
    if args.which == "synthetic":
        methods = args.methods or harness.SYNTHETIC_METHODS
        report = harness.run_experiment_synthetic(
            n_train=tuple(args.n_train), n_target=args.n_target, trials=args.trials or 50,
            seed=args.seed, methods=methods, kernel=args.kernel, width=args.width,
            gamma=args.gamma, bandwidth=args.bandwidth, tau=args.tau, jobs=args.jobs)
        if args.dump_predictions:
            rows = harness.robustness_curves(args.n_train[0], args.n_target, args.seed,
                                             kernel=args.kernel, width=args.width,
                                             gamma=args.gamma, bandwidth=args.bandwidth,
                                             tau=args.tau)
            _out_path(args.dump_predictions).write_text(harness.curves_to_csv(rows), encoding="utf-8")
    elif args.which == "bandwidth-sweep":
        report = harness.run_bandwidth_sweep(
            args.dataset or "ringnorm", args.bandwidths, trials=args.trials or 20, seed=args.seed,
            kernel=args.kernel, width=args.width, gamma=args.gamma,
            direction_policy=args.direction_policy, dataset_size=args.dataset_size,
            jobs=args.jobs)
    else:
        if not args.dataset:
            raise UsageError(f"experiment {args.which} needs --dataset")
        report = harness.run_experiment_bias(
            args.dataset, args.which, trials=args.trials, seed=args.seed,
            methods=args.methods or harness.BIAS_METHODS, kernel=args.kernel, width=args.width,
            gamma=args.gamma, bandwidth=args.bandwidth, tau=args.tau,
            direction_policy=args.direction_policy, test_size=args.test_size,
            dataset_size=args.dataset_size, normalization=args.normalization,
            boost={"num_trees": args.trees, "max_depth": args.depth,
                   "reg_lambda": args.reg_lambda, "gamma_tree": args.gamma_tree,
                   "learning_rate": args.learning_rate, "min_leaf_size": args.min_leaf},
            jobs=args.jobs)
    _emit(report.to_csv(), args.out_csv)
    if args.out_json:
        _out_path(args.out_json).write_text(report.to_json() + "\n", encoding="utf-8")
    for row in report.rows:
        _note(f"{row['method']:>24s} {row.get('bandwidth', row.get('n_train', '')) or ''} "
              f"mean={row['mean']} std={row['std']}")


def cmd_verify(args):
    if args.which == "mvue":
        result = harness.verify_mvue(args.n, args.dim, args.m, args.repeats, args.seed,
                                     mismatch=args.mismatch)
    elif args.which == "theorem-1d":
        result = harness.verify_concentration_1d(args.n, args.m, args.trials, args.seed)
    else:
        result = harness.verify_concentration_nd(args.n, args.dim, args.m, args.delta,
                                                 args.trials, args.seed)
    _emit(result.to_json(), args.out)
    _note(f"{args.which}: fraction={result.fraction} required={result.required} "
          f"pass={result.passed}")


# ---------------------------------------------------------------- parser

def _add_svm_flags(p):
    p.add_argument("--kernel", choices=vsvm.KERNEL_FAMILIES, default="sqrt_gaussian",
                   help="kernel family (default: sqrt_gaussian)")
    p.add_argument("--width", type=_positive_float, default=1.0, help="kernel width (default: 1)")
    p.add_argument("--gamma", type=_positive_float, default=0.1,
                   help="V-SVM regularization constant (default: 0.1)")
    p.add_argument("--bandwidth", type=_positive_float, default=2.0,
                   help="KDE bandwidth for importance weights (default: 2.0)")
    p.add_argument("--tau", type=_unit_float, default=0.5,
                   help="exponent for the exponentiated weights (default: 0.5)")


def _add_boost_flags(p):
    p.add_argument("--trees", type=_positive_int, default=10, help="number of boosting rounds")
    p.add_argument("--depth", type=_positive_int, default=3, help="maximum tree depth")
    p.add_argument("--lambda", dest="reg_lambda", type=_nonneg_float, default=1.0,
                   help="L2 penalty on leaf weights (default: 1.0)")
    p.add_argument("--gamma-tree", type=_nonneg_float, default=0.0,
                   help="penalty per leaf (default: 0)")
    p.add_argument("--learning-rate", type=_rate, default=1.0, help="shrinkage in (0, 1]")
    p.add_argument("--min-leaf", type=_positive_int, default=5, help="minimum points per leaf")


def build_parser():
    parser = _Parser(prog="vshift", description="Covariate-shift learning with V-matrices.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=("sigmoid", "twonorm", "ringnorm"), required=True,
                   help="generator")
    p.add_argument("--n-train", type=_positive_int, default=200, help="training size (sigmoid)")
    p.add_argument("--n-target", type=_positive_int, default=1000, help="target size (sigmoid)")
    p.add_argument("--n", type=_positive_int, default=7400, help="rows (twonorm/ringnorm)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out-train", help="labeled CSV output (sigmoid)")
    p.add_argument("--out-target", help="target CSV output (sigmoid)")
    p.add_argument("--out", help="labeled CSV output (twonorm/ringnorm)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bias", help="split a labeled CSV into biased train and target sets")
    p.add_argument("--scheme", choices=tuple(_BIAS_SCHEME), required=True, help="biasing scheme")
    p.add_argument("--input", required=True, help="labeled source CSV")
    p.add_argument("--label-column", type=int, default=-1, help="label column index (default: last)")
    p.add_argument("--feature", type=_nonneg_int, help="feature to bias on (default: random)")
    p.add_argument("--direction", choices=("up", "down"), help="bias direction (default: random)")
    p.add_argument("--train-size", type=_positive_int, default=100, help="training set size")
    p.add_argument("--test-size", type=_positive_int,
                   help="target size (required for sugiyama; default: all remaining)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip scaling the source to the unit cube")
    p.add_argument("--out-train", required=True, help="labeled training CSV output")
    p.add_argument("--out-target", required=True, help="unlabeled target CSV output")
    p.add_argument("--out-target-labels", help="optional labeled copy of the target set")
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("vmatrix", help="compute a V-matrix and write it as CSV")
    p.add_argument("--kind", required=True,
                   choices=("multiplicative", "additive", "analytic-uniform", "analytic-gaussian",
                            "identity"), help="V-matrix construction")
    p.add_argument("--train", required=True, help="labeled training CSV")
    p.add_argument("--label-column", type=int, default=-1, help="label column index")
    p.add_argument("--target", help="target CSV (empirical kinds)")
    p.add_argument("--c", type=_positive_float, default=1.0,
                   help="half-width of the uniform support (analytic-uniform)")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_vmatrix)

    p = sub.add_parser("train", help="fit a model and write it as JSON")
    p.add_argument("method", choices=("vsvm", "vboost", "weighted", "unweighted"),
                   help="learner")
    p.add_argument("--train", required=True, help="labeled training CSV")
    p.add_argument("--label-column", type=int, default=-1, help="label column index")
    p.add_argument("--target", help="unlabeled target CSV")
    p.add_argument("--v", choices=("empirical", "additive", "analytic", "identity"),
                   default="empirical", help="V-matrix for vsvm/vboost (default: empirical)")
    p.add_argument("--c", type=_positive_float, default=1.0, help="half-width for --v analytic")
    p.add_argument("--scheme", choices=("ratio", "exponentiated"), default="ratio",
                   help="importance weighting scheme (weighted)")
    p.add_argument("--out-weights", help="write importance weights CSV (weighted)")
    _add_svm_flags(p)
    _add_boost_flags(p)
    p.add_argument("--out", help="model JSON output (default: stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict probabilities and labels with a saved model")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--input", required=True, help="feature CSV")
    p.add_argument("--label-column", type=int,
                   help="set when the input CSV carries a label column to drop")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="run a reproduction experiment")
    p.add_argument("which", choices=("synthetic", "exp3", "exp4", "exp5", "bandwidth-sweep"),
                   help="experiment")
    p.add_argument("--dataset", help="twonorm, ringnorm, or a labeled CSV path")
    p.add_argument("--dataset-size", type=_positive_int, default=7400,
                   help="rows generated for twonorm/ringnorm")
    p.add_argument("--trials", type=_positive_int, help="trial count (default: per experiment)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel worker processes")
    p.add_argument("--methods", nargs="+", help="methods to run")
    p.add_argument("--n-train", type=_positive_int, nargs="+", default=[200],
                   help="training sizes (synthetic)")
    p.add_argument("--n-target", type=_positive_int, default=1000, help="target size (synthetic)")
    p.add_argument("--test-size", type=_positive_int, help="target size override (exp3-5)")
    p.add_argument("--bandwidths", type=_positive_float, nargs="+",
                   default=[0.1, 0.5, 2.0, 10.0], help="bandwidth grid (bandwidth-sweep)")
    p.add_argument("--direction-policy", choices=("random", "balanced", "up", "down"),
                   default="random", help="bias direction per trial (exp4/exp5)")
    p.add_argument("--normalization", choices=("per_trial", "mean_then_ratio"),
                   default="per_trial", help="how errors are normalized")
    _add_svm_flags(p)
    _add_boost_flags(p)
    p.add_argument("--out-csv", help="summary CSV (default: stdout)")
    p.add_argument("--out-json", help="full per-trial JSON report")
    p.add_argument("--dump-predictions", help="robustness-curve CSV (synthetic)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="Monte-Carlo checks of the estimator guarantees")
    p.add_argument("which", choices=("mvue", "theorem-1d", "theorem-nd"), help="check")
    p.add_argument("--n", type=_positive_int, default=20, help="training points")
    p.add_argument("--dim", type=_positive_int, default=2, help="feature dimension (mvue, theorem-nd)")
    p.add_argument("--m", type=_positive_int, default=100, help="target points per draw")
    p.add_argument("--repeats", type=_positive_int, default=200, help="target draws (mvue)")
    p.add_argument("--trials", type=_positive_int, default=1000, help="trials (theorems)")
    p.add_argument("--delta", type=_positive_float, default=0.1, help="tolerance (theorem-nd)")
    p.add_argument("--mismatch", action="store_true",
                   help="draw targets from the wrong distribution (mvue; should fail)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _note(f"vshift: error: {exc}")
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        _note(f"vshift: data error: {exc}")
        return EXIT_DATA
    except NumericalError as exc:
        _note(f"vshift: numerical failure: {exc}")
        return EXIT_NUMERIC
    except ValueError as exc:
        _note(f"vshift: error: {exc}")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
