"""Datasets, CSV ingestion, unit-cube scaling, synthetic generators and the
sampling-bias schemes used to manufacture covariate shift.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (DimensionError, InsufficientDataError, ParseError,
                     SchemaError)

BIAS_FACTOR = 4.0


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=float, copy=True)
        y = np.array(self.labels, dtype=np.int64, copy=True).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise SchemaError(f"features must be a non-empty 2-d array, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise SchemaError(f"{y.shape[0]} labels for {X.shape[0]} feature rows")
        if not np.isin(y, (0, 1)).all():
            raise SchemaError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.features[index], self.labels[index])

    def select_features(self, columns) -> "LabeledDataset":
        return LabeledDataset(self.features[:, columns], self.labels)


@dataclass(frozen=True)
class TargetSample:
    """Unlabeled draw from the target distribution.

    ``labels`` is only populated by the generators and biasing schemes, which
    keep the ground truth aside so that experiments can score predictions.
    Learners never read it.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        T = np.array(self.features, dtype=float, copy=True)
        if T.ndim == 1:
            T = T[:, None]
        if T.ndim != 2 or T.shape[0] < 1 or T.shape[1] < 1:
            raise SchemaError(f"target sample must be a non-empty 2-d array, got shape {T.shape}")
        T.setflags(write=False)
        object.__setattr__(self, "features", T)
        if self.labels is not None:
            y = np.array(self.labels, dtype=np.int64, copy=True).ravel()
            if y.shape[0] != T.shape[0]:
                raise SchemaError("held-out labels do not match target rows")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def select_features(self, columns) -> "TargetSample":
        labels = self.labels
        return TargetSample(self.features[:, columns], labels)


@dataclass(frozen=True)
class NormalizationParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        span = self.maximum - self.minimum
        out = np.zeros_like(X)
        ok = span > 0
        out[:, ok] = (X[:, ok] - self.minimum[ok]) / span[ok]
        return out


@dataclass(frozen=True)
class BiasSpec:
    scheme: str
    train_size: int
    test_size: Optional[int] = None
    feature: Optional[int] = None
    direction: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("sugiyama", "single_feature", "norm"):
            raise ValueError(f"unknown bias scheme {self.scheme!r}")
        if self.direction not in (None, "up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")
        if self.train_size < 1:
            raise ValueError("train_size must be positive")
        if self.test_size is not None and self.test_size < 1:
            raise ValueError("test_size must be positive")


# ---------------------------------------------------------------- CSV I/O

def _is_numeric_row(row):
    try:
        [float(cell) for cell in row]
    except ValueError:
        return False
    return True


def load_csv(path, label_column: int = -1) -> LabeledDataset:
    """Read a numeric CSV whose ``label_column`` holds a two-valued label.

    A first row that does not parse as numbers is treated as a header.
    The smaller of the two raw label values maps to 0.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not _is_numeric_row(rows[0]):
        rows = rows[1:]
        offset = 1
    else:
        offset = 0
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: row {i + offset} has {len(row)} cells, expected {width}",
                             row=i + offset)
        try:
            values[i] = [float(c) for c in row]
        except ValueError:
            raise ParseError(f"{path}: non-numeric cell in row {i + offset}", row=i + offset) from None
    if width < 2:
        raise SchemaError(f"{path}: need at least one feature column plus the label")

    col = label_column % width
    raw = values[:, col]
    levels = np.unique(raw)
    if levels.size != 2:
        raise SchemaError(f"{path}: label column has {levels.size} distinct values, expected 2")
    labels = (raw == levels[1]).astype(np.int64)
    features = np.delete(values, col, axis=1)
    return LabeledDataset(features, labels)


def load_target_csv(path) -> TargetSample:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    offset = 0
    if rows and not _is_numeric_row(rows[0]):
        rows, offset = rows[1:], 1
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width or not _is_numeric_row(row):
            raise ParseError(f"{path}: malformed row {i + offset}", row=i + offset)
        values[i] = [float(c) for c in row]
    return TargetSample(values)


def _fmt(v):
    return repr(float(v))


def write_labeled_csv(dataset: LabeledDataset, path):
    n = dataset.n_features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{k}" for k in range(n)] + ["label"])
        for row, y in zip(dataset.features, dataset.labels):
            w.writerow([_fmt(v) for v in row] + [int(y)])


def write_target_csv(target: TargetSample, path):
    n = target.n_features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{k}" for k in range(n)])
        for row in target.features:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------- normalization

def fit_minmax(X) -> NormalizationParams:
    X = np.asarray(X, dtype=float)
    return NormalizationParams(X.min(axis=0), X.max(axis=0))


def normalize_unit_cube(train: LabeledDataset, target: TargetSample):
    """Scale both samples into [0, 1]^n using min/max over their union."""
    if train.n_features != target.n_features:
        raise DimensionError(
            f"train has {train.n_features} features, target has {target.n_features}")
    params = fit_minmax(np.vstack([train.features, target.features]))
    return (LabeledDataset(params.apply(train.features), train.labels),
            TargetSample(params.apply(target.features), target.labels),
            params)


def normalize_dataset(dataset: LabeledDataset):
    params = fit_minmax(dataset.features)
    return LabeledDataset(params.apply(dataset.features), dataset.labels), params


# ------------------------------------------------------------- generators

def sigmoid_conditional(x):
    """p(y=1 | x) = 1 / (1 + exp(5x)) for the 1-d synthetic problem."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 - np.tanh(2.5 * x))


def gen_sigmoid_synthetic(N: int, M: int, seed: int
                          ) -> tuple[LabeledDataset, TargetSample, Callable]:
    """Training x ~ U[-1, 1]; target mixes U[0, 1] (weight 0.3) with U[-1, 0]."""
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=N)
    y = (rng.random(N) < sigmoid_conditional(x)).astype(np.int64)
    right = rng.random(M) < 0.3
    t = np.where(right, rng.uniform(0.0, 1.0, size=M), rng.uniform(-1.0, 0.0, size=M))
    ty = (rng.random(M) < sigmoid_conditional(t)).astype(np.int64)
    return LabeledDataset(x[:, None], y), TargetSample(t[:, None], ty), sigmoid_conditional


_BREIMAN_DIM = 20
_BREIMAN_SHIFT = 2.0 / np.sqrt(_BREIMAN_DIM)


def _balanced_labels(N, rng):
    labels = np.zeros(N, dtype=np.int64)
    labels[N // 2:] = 1
    return rng.permutation(labels)


def gen_twonorm(N: int, seed: int) -> LabeledDataset:
    """Class 0 ~ N(+a 1, I), class 1 ~ N(-a 1, I), a = 2/sqrt(20)."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(N, rng)
    X = rng.standard_normal((N, _BREIMAN_DIM))
    X += np.where(y == 0, _BREIMAN_SHIFT, -_BREIMAN_SHIFT)[:, None]
    return LabeledDataset(X, y)


def gen_ringnorm(N: int, seed: int) -> LabeledDataset:
    """Class 0 ~ N(0, 4I), class 1 ~ N(a 1, I), a = 2/sqrt(20)."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(N, rng)
    Z = rng.standard_normal((N, _BREIMAN_DIM))
    X = np.where((y == 0)[:, None], 2.0 * Z, Z + _BREIMAN_SHIFT)
    return LabeledDataset(X, y)


# ---------------------------------------------------------------- biasing

def sugiyama_acceptance(value):
    return np.minimum(1.0, 4.0 * np.asarray(value, dtype=float) ** 2)


def _choose_feature(spec, n, rng):
    if spec.feature is None:
        return int(rng.integers(n))
    if not 0 <= spec.feature < n:
        raise ValueError(f"feature index {spec.feature} outside [0, {n})")
    return spec.feature


def bias_sugiyama(source: LabeledDataset, spec: BiasSpec):
    """Rejection-sample a target set on one feature, then draw train uniformly.

    Points are visited in random order; each is accepted into the target set
    with probability min(1, 4 x_c^2) and leaves the pool either way.
    Returns ``(train, target, info)``.
    """
    rng = np.random.default_rng(spec.seed)
    c = _choose_feature(spec, source.n_features, rng)
    if spec.test_size is None:
        raise ValueError("sugiyama scheme needs an explicit test_size")

    order = rng.permutation(source.n_samples)
    accept_prob = sugiyama_acceptance(source.features[order, c])
    coins = rng.random(order.size)
    accepted = np.flatnonzero(coins < accept_prob)
    if accepted.size < spec.test_size:
        raise InsufficientDataError(
            f"pool exhausted after {accepted.size} of {spec.test_size} target points")
    last = accepted[spec.test_size - 1]
    target_idx = order[accepted[:spec.test_size]]
    pool = order[last + 1:]
    if pool.size < spec.train_size:
        raise InsufficientDataError(
            f"{pool.size} points left for a training set of {spec.train_size}")
    train_idx = rng.choice(pool, size=spec.train_size, replace=False)

    train = source.subset(train_idx)
    target = TargetSample(source.features[target_idx], source.labels[target_idx])
    info = {"feature": c, "train_index": train_idx, "target_index": target_idx}
    return train, target, info


def weighted_sample_without_replacement(weights, k, rng):
    """Sequential weighted sampling without replacement (Efraimidis-Spirakis keys)."""
    weights = np.asarray(weights, dtype=float)
    keys = np.log(rng.random(weights.size)) / weights
    return np.argsort(-keys, kind="stable")[:k]


def _bias_by_statistic(source, spec, stat, rng):
    direction = spec.direction or ("up" if rng.random() < 0.5 else "down")
    above = stat > np.median(stat)
    hi, lo = (BIAS_FACTOR, 1.0) if direction == "up" else (1.0, BIAS_FACTOR)
    if spec.train_size > source.n_samples:
        raise InsufficientDataError(
            f"{source.n_samples} points for a training set of {spec.train_size}")
    train_idx = weighted_sample_without_replacement(np.where(above, hi, lo), spec.train_size, rng)
    rest = np.setdiff1d(np.arange(source.n_samples), train_idx)
    if spec.test_size is None:
        target_idx = rest
    else:
        if spec.test_size > rest.size:
            raise InsufficientDataError(f"{rest.size} points left for a target of {spec.test_size}")
        target_idx = np.sort(rng.choice(rest, size=spec.test_size, replace=False))
    if target_idx.size == 0:
        raise InsufficientDataError("no points left for the target sample")
    train = source.subset(train_idx)
    target = TargetSample(source.features[target_idx], source.labels[target_idx])
    info = {"direction": direction, "train_index": train_idx, "target_index": target_idx,
            "above_median": above}
    return train, target, info


def bias_single_feature(source: LabeledDataset, spec: BiasSpec):
    """Points above the feature median are 4x more (up) or less (down) likely to be trained on."""
    rng = np.random.default_rng(spec.seed)
    c = _choose_feature(spec, source.n_features, rng)
    train, target, info = _bias_by_statistic(source, spec, source.features[:, c], rng)
    info["feature"] = c
    return train, target, info


def bias_norm(source: LabeledDataset, spec: BiasSpec):
    """Like :func:`bias_single_feature`, biasing on the Euclidean norm of each row."""
    rng = np.random.default_rng(spec.seed)
    # burn the feature draw so that 1-d data matches bias_single_feature exactly
    _choose_feature(spec, source.n_features, rng)
    train, target, info = _bias_by_statistic(
        source, spec, np.linalg.norm(source.features, axis=1), rng)
    info["feature"] = None
    return train, target, info


BIAS_SCHEMES = {
    "sugiyama": bias_sugiyama,
    "single_feature": bias_single_feature,
    "norm": bias_norm,
}


def apply_bias(source: LabeledDataset, spec: BiasSpec):
    return BIAS_SCHEMES[spec.scheme](source, spec)
