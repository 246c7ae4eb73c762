"""Experiment orchestration, error metrics and Monte-Carlo bound checks.

Every trial derives its randomness from ``(master seed, trial index)`` only,
so trials can run in any order or in parallel and reports stay identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines, dataset as ds, vboost, vmatrix as vm, vsvm
from .errors import InsufficientDataError

SYNTHETIC_METHODS = ("empirical", "empirical_second", "analytic_uniform", "identity",
                     "ratio", "exponentiated")
BIAS_METHODS = ("vmatrix", "unweighted", "ratio", "exponentiated")
OPTIONAL_BIAS_METHODS = ("vmatrix_multiplicative", "vboost", "boost")
EXPERIMENTS = {
    "exp3": {"scheme": "sugiyama", "train_size": 100, "test_size": 500, "trials": 100},
    "exp4": {"scheme": "single_feature", "train_size": 100, "test_size": None, "trials": 100},
    "exp5": {"scheme": "norm", "train_size": 100, "test_size": None, "trials": 50},
}
GENERATED_DATASETS = {"twonorm": ds.gen_twonorm, "ringnorm": ds.gen_ringnorm}
RINGNORM_EXP3_FEATURES = 5


# ------------------------------------------------------------------ types

@dataclass
class TrialResult:
    method: str
    error: float
    seed: int
    trial: int
    l2_error: Optional[float] = None
    metadata: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    name: str
    rows: list
    trials: list
    config: dict

    def row(self, method, **match):
        for r in self.rows:
            if r["method"] == method and all(r.get(k) == v for k, v in match.items()):
                return r
        raise KeyError(method)

    def to_csv(self) -> str:
        columns = ["method", "mean", "std", "trials", "excluded", "raw_mean", "raw_std"]
        extra = sorted({k for r in self.rows for k in r} - set(columns))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns + extra)
        for r in self.rows:
            w.writerow([_csv_cell(r.get(c)) for c in columns + extra])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "config": self.config, "summary": self.rows,
                           "trials": self.trials}, sort_keys=True, indent=1,
                          default=_json_default)


@dataclass
class BoundCheckResult:
    trials: int
    fraction: float
    theoretical_min: float
    passed: bool
    required: float = 0.0
    vacuous: bool = False
    statistic: Optional[float] = None
    threshold: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# ---------------------------------------------------------------- metrics

def metric_l2_probability_error(predict, true_conditional, eval_points) -> float:
    """Root-mean-square gap between predicted and true p(y=1|x) over the target points."""
    T = eval_points.features if isinstance(eval_points, ds.TargetSample) else np.asarray(eval_points)
    if T.ndim == 1:
        T = T[:, None]
    if T.shape[0] < 1:
        raise ValueError("need at least one evaluation point")
    pred = np.asarray(predict(T), dtype=float).ravel()
    truth = np.asarray(true_conditional(T[:, 0] if T.shape[1] == 1 else T), dtype=float).ravel()
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def metric_normalized(method_error, unweighted_error):
    """Ratio to the unweighted error, or ``None`` when that error is zero."""
    if unweighted_error == 0:
        return None
    return method_error / unweighted_error


def _summarize(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def aggregate(per_trial, methods, reference, normalization="per_trial"):
    """Summary rows from ``per_trial`` = list of {method: error} dicts."""
    rows = []
    ref = [t[reference] for t in per_trial]
    for m in methods:
        raw = [t[m] for t in per_trial]
        raw_mean, raw_std = _summarize(raw)
        if normalization == "per_trial":
            ratios = [metric_normalized(a, b) for a, b in zip(raw, ref)]
            mean, std = _summarize(ratios)
            excluded = sum(r is None for r in ratios)
        elif normalization == "mean_then_ratio":
            mean = metric_normalized(raw_mean, float(np.mean(ref)))
            std = None
            excluded = 0
        else:
            raise ValueError(f"unknown normalization {normalization!r}")
        rows.append({"method": m, "mean": mean, "std": std, "trials": len(raw),
                     "excluded": excluded, "raw_mean": raw_mean, "raw_std": raw_std})
    return rows


def _map_trials(fn, items, jobs):
    if jobs is None or jobs <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _trial_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ----------------------------------------------------- synthetic problems

def _synthetic_models(train, target, second_target, kernel, gamma, bandwidth, tau, methods):
    N = train.n_samples
    builders = {
        "empirical": lambda: vm.empirical_v(train.features, target),
        "empirical_second": lambda: vm.empirical_v(train.features, second_target),
        "analytic_uniform": lambda: vm.analytic_v_uniform(train.features, 1.0),
        "identity": lambda: vm.identity_v(N),
        "ratio": lambda: vm.diagonal_v(baselines.importance_weights(
            train.features, target, bandwidth, "ratio").values),
        "exponentiated": lambda: vm.diagonal_v(baselines.importance_weights(
            train.features, target, bandwidth, "exponentiated", tau).values),
    }
    return {m: vsvm.fit(train, builders[m](), kernel, gamma) for m in methods}


def _synthetic_trial(cfg, item):
    n_train, trial = item
    seed = _trial_seed(cfg["seed"], trial, n_train)
    train, target, truth = ds.gen_sigmoid_synthetic(n_train, cfg["n_target"], seed)
    second = ds.TargetSample(_second_target_draw(cfg["n_second_target"], seed))
    kernel = vsvm.KernelConfig(cfg["kernel"], cfg["width"])
    models = _synthetic_models(train, target, second, kernel, cfg["gamma"], cfg["bandwidth"],
                               cfg["tau"], cfg["methods"])
    errors = {m: metric_l2_probability_error(model.predict_proba, truth, target)
              for m, model in models.items()}
    return {"trial": trial, "n_train": n_train, "seed": seed, "errors": errors}


def _second_target_draw(M, seed):
    rng = np.random.default_rng([seed, 1])
    right = rng.random(M) < 0.3
    return np.where(right, rng.uniform(0.0, 1.0, M), rng.uniform(-1.0, 0.0, M))[:, None]


def run_experiment_synthetic(n_train=(200,), n_target=1000, trials=50, seed=0,
                             methods=SYNTHETIC_METHODS, kernel="sqrt_gaussian", width=1.0,
                             gamma=0.1, bandwidth=2.0, tau=0.5, n_second_target=500,
                             jobs=1) -> ExperimentReport:
    """L2 error of the predicted conditional on the 1-d sigmoid problem.

    ``empirical_second`` builds its V-matrix from an independent target draw
    of ``n_second_target`` points; errors are always measured on the main
    target sample.  Normalized errors are relative to ``identity``.
    """
    if isinstance(n_train, int):
        n_train = (n_train,)
    methods = list(methods)
    if "identity" not in methods:
        methods.append("identity")
    cfg = {"n_train": list(n_train), "n_target": n_target, "trials": trials, "seed": seed,
           "methods": methods, "kernel": kernel, "width": width, "gamma": gamma,
           "bandwidth": bandwidth, "tau": tau, "n_second_target": n_second_target}
    items = [(N, t) for N in n_train for t in range(trials)]
    results = _map_trials(partial(_synthetic_trial, cfg), items, jobs)

    rows = []
    for N in n_train:
        per_trial = [r["errors"] for r in results if r["n_train"] == N]
        for row in aggregate(per_trial, methods, "identity"):
            row["n_train"] = N
            rows.append(row)
    records = [asdict(TrialResult(m, e, r["seed"], r["trial"], l2_error=e,
                                  metadata={"n_train": r["n_train"]}))
               for r in results for m, e in r["errors"].items()]
    return ExperimentReport("synthetic", rows, records, cfg)


def robustness_curves(n_train=200, n_target=1000, seed=0, grid_size=201,
                      methods=("empirical", "analytic_uniform", "identity", "ratio", "exponentiated"),
                      kernel="sqrt_gaussian", width=1.0, gamma=0.1, bandwidth=2.0, tau=0.5):
    """Single-run predicted p(y=1|x) on a dense grid of [-1, 1]; rows of (x, method, p)."""
    train, target, truth = ds.gen_sigmoid_synthetic(n_train, n_target, seed)
    models = _synthetic_models(train, target, None, vsvm.KernelConfig(kernel, width), gamma,
                               bandwidth, tau, [m for m in methods if m != "empirical_second"])
    grid = np.linspace(-1.0, 1.0, grid_size)
    rows = [(float(x), "truth", float(p)) for x, p in zip(grid, truth(grid))]
    for m, model in models.items():
        rows.extend((float(x), m, float(p)) for x, p in zip(grid, model.predict_proba(grid[:, None])))
    return rows


def curves_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "method", "probability"])
    for x, m, p in rows:
        w.writerow([repr(x), m, repr(p)])
    return buf.getvalue()


# --------------------------------------------------------- biased datasets

def load_source(dataset_name, size=7400, seed=0, label_column=-1):
    """Generated twonorm/ringnorm, or a user CSV, scaled to the unit cube."""
    if dataset_name in GENERATED_DATASETS:
        raw = GENERATED_DATASETS[dataset_name](size, seed)
    else:
        raw = ds.load_csv(dataset_name, label_column)
    source, _ = ds.normalize_dataset(raw)
    return source


def _bias_models(train, target, cfg, methods):
    kernel = vsvm.KernelConfig(cfg["kernel"], cfg["width"])
    gamma = cfg["gamma"]
    N = train.n_samples
    models = {}
    for m in methods:
        if m == "vmatrix":
            models[m] = vsvm.fit(train, vm.empirical_v_additive(train.features, target), kernel, gamma)
        elif m == "vmatrix_multiplicative":
            models[m] = vsvm.fit(train, vm.empirical_v(train.features, target), kernel, gamma)
        elif m == "unweighted":
            models[m] = vsvm.fit(train, vm.identity_v(N), kernel, gamma)
        elif m in ("ratio", "exponentiated"):
            w = baselines.importance_weights(train.features, target, cfg["bandwidth"], m, cfg["tau"])
            models[m] = baselines.fit_weighted(train, w, kernel, gamma)
        elif m in ("vboost", "boost"):
            V = vm.empirical_v_additive(train.features, target) if m == "vboost" else vm.identity_v(N)
            models[m] = vboost.fit_boost(train, V, vboost.BoostParams(**cfg["boost"]))
        else:
            raise ValueError(f"unknown method {m!r}")
    return models


def _bias_trial(source, cfg, trial):
    rng = np.random.default_rng([cfg["seed"], trial])
    meta = {}
    src = source
    if cfg["feature_subset"]:
        cols = np.sort(rng.choice(source.n_features, cfg["feature_subset"], replace=False))
        src = source.select_features(cols)
        meta["columns"] = cols.tolist()
    direction = None
    if cfg["scheme"] != "sugiyama":
        if cfg["direction_policy"] == "balanced":
            direction = "up" if trial % 2 == 0 else "down"
        elif cfg["direction_policy"] in ("up", "down"):
            direction = cfg["direction_policy"]
    spec = ds.BiasSpec(cfg["scheme"], cfg["train_size"], cfg["test_size"],
                       direction=direction, seed=int(rng.integers(2 ** 62)))
    try:
        train, target, info = ds.apply_bias(src, spec)
    except InsufficientDataError as exc:
        return {"trial": trial, "skipped": str(exc), **meta}
    meta["feature"] = info.get("feature")
    if "direction" in info:
        meta["direction"] = info["direction"]

    out = {"trial": trial, "seed": spec.seed, **meta, "errors": {}}
    if cfg.get("bandwidths"):
        for h in cfg["bandwidths"]:
            sub = dict(cfg, bandwidth=h)
            models = _bias_models(train, target, sub, ["ratio"])
            out["errors"][f"ratio@{float(h)!r}"] = _classification_error(models["ratio"], target)
        models = _bias_models(train, target, cfg, ["unweighted"])
        out["errors"]["unweighted"] = _classification_error(models["unweighted"], target)
        return out
    for m, model in _bias_models(train, target, cfg, cfg["methods"]).items():
        out["errors"][m] = _classification_error(model, target)
    return out


def _trial_records(results):
    records = []
    for r in results:
        meta = {k: v for k, v in r.items() if k not in ("errors", "trial", "seed")}
        if "errors" not in r:
            records.append({"trial": r["trial"], "metadata": meta})
            continue
        records.extend(asdict(TrialResult(m, e, r["seed"], r["trial"], metadata=meta))
                       for m, e in r["errors"].items())
    return records


def _classification_error(model, target):
    return float(np.mean(model.predict_label(target.features) != target.labels))


def _bias_config(dataset_name, experiment, trials, seed, methods, kernel, width, gamma,
                 bandwidth, tau, direction_policy, test_size, dataset_size, boost, normalization):
    proto = EXPERIMENTS[experiment]
    feature_subset = (RINGNORM_EXP3_FEATURES
                      if experiment == "exp3" and dataset_name == "ringnorm" else 0)
    return {"dataset": str(dataset_name), "experiment": experiment, "scheme": proto["scheme"],
            "train_size": proto["train_size"],
            "test_size": proto["test_size"] if test_size is None else test_size,
            "trials": proto["trials"] if trials is None else trials, "seed": seed,
            "methods": list(methods), "kernel": kernel, "width": width, "gamma": gamma,
            "bandwidth": bandwidth, "tau": tau, "direction_policy": direction_policy,
            "feature_subset": feature_subset, "dataset_size": dataset_size,
            "boost": dict(boost or {}), "normalization": normalization}


def run_experiment_bias(dataset_name, experiment="exp4", trials=None, seed=0,
                        methods=BIAS_METHODS, kernel="sqrt_gaussian", width=1.0, gamma=0.1,
                        bandwidth=2.0, tau=0.5, direction_policy="random", test_size=None,
                        dataset_size=7400, boost=None, normalization="per_trial",
                        jobs=1) -> ExperimentReport:
    """Classification error under a biasing protocol, normalized by the unweighted V-SVM.

    ``vmatrix`` is the V-SVM with the additive empirical V-matrix.
    ``direction_policy`` is ``random`` (per trial), ``balanced`` (alternating),
    ``up`` or ``down``.
    """
    methods = list(methods)
    if "unweighted" not in methods:
        methods.append("unweighted")
    cfg = _bias_config(dataset_name, experiment, trials, seed, methods, kernel, width, gamma,
                       bandwidth, tau, direction_policy, test_size, dataset_size, boost,
                       normalization)
    source = load_source(dataset_name, dataset_size, seed)
    results = _map_trials(partial(_bias_trial, source, cfg), range(cfg["trials"]), jobs)
    done = [r for r in results if "errors" in r]
    rows = aggregate([r["errors"] for r in done], methods, "unweighted", normalization)
    cfg["skipped_trials"] = len(results) - len(done)
    return ExperimentReport(experiment, rows, _trial_records(results), cfg)


def run_bandwidth_sweep(dataset_name, bandwidths=(0.1, 0.5, 2.0, 10.0), trials=20, seed=0,
                        kernel="sqrt_gaussian", width=1.0, gamma=0.1, direction_policy="random",
                        dataset_size=7400, jobs=1) -> ExperimentReport:
    """Experiment-4 protocol with the ratio-weighted V-SVM at each KDE bandwidth."""
    bandwidths = [float(h) for h in bandwidths]
    if any(h <= 0 for h in bandwidths):
        raise ValueError("bandwidths must be positive")
    cfg = _bias_config(dataset_name, "exp4", trials, seed, ["ratio"], kernel, width, gamma,
                       None, 1.0, direction_policy, None, dataset_size, None, "per_trial")
    cfg["bandwidths"] = bandwidths
    source = load_source(dataset_name, dataset_size, seed)
    results = _map_trials(partial(_bias_trial, source, cfg), range(cfg["trials"]), jobs)
    done = [r for r in results if "errors" in r]
    keys = [f"ratio@{float(h)!r}" for h in bandwidths]
    rows = aggregate([r["errors"] for r in done], keys, "unweighted")
    for row, h in zip(rows, bandwidths):
        row["method"] = "ratio"
        row["bandwidth"] = h
    cfg["skipped_trials"] = len(results) - len(done)
    return ExperimentReport("bandwidth_sweep", rows, _trial_records(results), cfg)


# ------------------------------------------------------ bound verification

def _coverage_required(floor, trials):
    p = min(max(floor, 0.0), 1.0)
    return floor - 3.0 * math.sqrt(p * (1.0 - p) / trials)


def rho2(residuals, V) -> float:
    l = np.asarray(residuals, dtype=float)
    V = V.entries if isinstance(V, vm.VMatrix) else V
    return float(l @ V @ l) / l.size ** 2


def verify_mvue(N=5, n=2, M=500, repeats=200, seed=0, c=1.0, mismatch=False) -> BoundCheckResult:
    """Average the empirical V over ``repeats`` target draws and compare to the analytic V.

    Targets come from U[-c, c]^n, or U[0, c]^n with ``mismatch`` (which should fail).
    Passes when every entry is within 4 * sqrt(1 / (4 R M)) of the analytic value.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-c, c, size=(N, n))
    truth = vm.analytic_v_uniform(X, c).entries
    low = 0.0 if mismatch else -c
    counts = np.zeros((N, N), dtype=np.int64)
    for _ in range(repeats):
        T = rng.uniform(low, c, size=(M, n))
        counts += vm.dominance_counts(X, T)
    mean_v = counts / (repeats * M)
    deviation = np.abs(mean_v - truth)
    band = 4.0 * math.sqrt(1.0 / (4.0 * repeats * M))
    within = float(np.mean(deviation <= band))
    return BoundCheckResult(trials=repeats, fraction=within, theoretical_min=1.0,
                            passed=bool(deviation.max() <= band), required=1.0,
                            statistic=float(deviation.max()), threshold=band)


def verify_concentration_1d(N=20, M=100, trials=1000, seed=0, residual_scale=1.0
                            ) -> BoundCheckResult:
    """Coverage of |rho2(V) - rho2(V_hat)| <= sqrt(log M / M) * sum|l_i l_j| / N^2 in 1-d.

    Training points are fixed, targets are U[-1, 1], residuals U[-1, 1] per trial.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(N, 1))
    V_true = vm.analytic_v_uniform(x, 1.0).entries
    eps = math.sqrt(math.log(M) / M)
    held = 0
    for _ in range(trials):
        l = residual_scale * rng.uniform(-1.0, 1.0, size=N)
        V_hat = vm.empirical_v(x, rng.uniform(-1.0, 1.0, size=(M, 1))).entries
        gap = abs(rho2(l, V_true) - rho2(l, V_hat))
        bound = eps * np.abs(np.outer(l, l)).sum() / N ** 2
        held += gap <= bound
    floor = 1.0 - 2.0 / M ** 2
    required = _coverage_required(floor, trials)
    fraction = held / trials
    return BoundCheckResult(trials=trials, fraction=fraction, theoretical_min=floor,
                            passed=bool(fraction >= required), required=required)


def verify_concentration_nd(N=10, n=3, M=2000, delta=0.1, trials=1000, seed=0
                            ) -> BoundCheckResult:
    """Coverage of |rho2(V) - rho2(V_hat)| <= delta * max|l_i l_j| on U[-1, 1]^n."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    floor = 1.0 - N * (N + 1) * math.exp(-2.0 * M * delta ** 2)
    if floor <= 0:
        return BoundCheckResult(trials=0, fraction=1.0, theoretical_min=floor, passed=True,
                                required=floor, vacuous=True)
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(N, n))
    V_true = vm.analytic_v_uniform(X, 1.0).entries
    held = 0
    for _ in range(trials):
        l = rng.uniform(-1.0, 1.0, size=N)
        V_hat = vm.empirical_v(X, rng.uniform(-1.0, 1.0, size=(M, n))).entries
        gap = abs(rho2(l, V_true) - rho2(l, V_hat))
        held += gap <= delta * np.abs(np.outer(l, l)).max()
    required = _coverage_required(floor, trials)
    fraction = held / trials
    return BoundCheckResult(trials=trials, fraction=fraction, theoretical_min=floor,
                            passed=bool(fraction >= required), required=required)


def write_text(path, text):
    Path(path).write_text(text, encoding="utf-8")
