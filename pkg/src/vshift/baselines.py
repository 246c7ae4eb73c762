"""Density-ratio importance weighting with Gaussian KDE."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .dataset import LabeledDataset, TargetSample
from .errors import DimensionError, SchemaError
from .vmatrix import diagonal_v
from . import vsvm

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300
_LOG_FLOOR = np.log(DENSITY_FLOOR)


@dataclass(frozen=True)
class KdeModel:
    sample: np.ndarray
    bandwidth: float = 2.0

    def __post_init__(self):
        S = np.asarray(self.sample, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if S.shape[0] < 1:
            raise SchemaError("KDE needs a nonempty sample")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "sample", S)

    def log_density(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if X.size == self.sample.shape[1] else X[:, None]
        if X.shape[1] != self.sample.shape[1]:
            raise DimensionError("query and sample dimensions differ")
        m, n = self.sample.shape
        h = self.bandwidth
        log_norm = np.log(m) + 0.5 * n * np.log(2 * np.pi) + n * np.log(h)
        return logsumexp(-cdist(X, self.sample, "sqeuclidean") / (2 * h * h), axis=1) - log_norm

    def density(self, X) -> np.ndarray:
        return np.exp(self.log_density(X))


def kde_density(model: KdeModel, x):
    return model.density(x)


@dataclass(frozen=True)
class ImportanceWeights:
    values: np.ndarray
    scheme: str = "ratio"
    tau: float = 1.0

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for v in self.values:
                fh.write(f"{float(v)!r}\n")


def importance_weights(train_features, target, bandwidth=2.0, scheme="ratio",
                       tau=0.5) -> ImportanceWeights:
    """Weights q(x_i)/p(x_i) from KDEs of target (q) and training (p) features.

    ``scheme="exponentiated"`` raises the ratio to ``tau``; ``"ratio"`` ignores it.
    The training density is floored at 1e-300 before dividing.
    """
    X = np.asarray(train_features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T = target.features if isinstance(target, TargetSample) else np.asarray(target, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if T.shape[0] < 1:
        raise SchemaError("empty target sample")
    if T.shape[1] != X.shape[1]:
        raise DimensionError("train and target dimensions differ")
    if scheme not in ("ratio", "exponentiated"):
        raise ValueError(f"unknown weighting scheme {scheme!r}")
    if scheme == "exponentiated" and not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")

    log_p = KdeModel(X, bandwidth).log_density(X)
    log_q = KdeModel(T, bandwidth).log_density(X)
    floored = log_p < _LOG_FLOOR
    if floored.any():
        log.warning("training density floored at %g for %d points", DENSITY_FLOOR, floored.sum())
        log_p = np.maximum(log_p, _LOG_FLOOR)
    log_w = log_q - log_p
    if scheme == "exponentiated":
        log_w = tau * log_w
    else:
        tau = 1.0
    return ImportanceWeights(np.exp(log_w), scheme, float(tau))


def fit_weighted(train: LabeledDataset, weights, kernel=vsvm.KernelConfig(), gamma=0.1):
    """V-SVM with a diagonal V holding the importance weights."""
    values = weights.values if isinstance(weights, ImportanceWeights) else np.asarray(weights)
    if values.size != train.n_samples:
        raise DimensionError(f"{values.size} weights for {train.n_samples} training points")
    return vsvm.fit(train, diagonal_v(values), kernel, gamma)
