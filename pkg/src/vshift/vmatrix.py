"""V-matrix construction.

A V-matrix couples the residuals of training points i and j in the L2 loss
between the two CDF-like functions the learner tries to match.  Entry (i, j)
is the mass, under some measure, of the orthant dominating both x_i and x_j.
Empirical variants take that measure from an unlabeled target sample;
analytic variants use a closed-form product measure.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .dataset import TargetSample
from .errors import DimensionError, DomainError

KINDS = ("empirical_multiplicative", "empirical_additive", "analytic_uniform",
         "analytic_gaussian", "identity", "diagonal")

# rows of the target sample processed per block in the multiplicative count
_CHUNK = 2048


@dataclass(frozen=True)
class VMatrix:
    entries: np.ndarray
    kind: str

    def __post_init__(self):
        V = np.array(self.entries, dtype=float, copy=True)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise DimensionError(f"V must be square, got shape {V.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown V kind {self.kind!r}")
        V.setflags(write=False)
        object.__setattr__(self, "entries", V)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in self.entries:
                w.writerow([f"{v:.17g}" for v in row])


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _check_pair(X, T):
    if X.shape[1] != T.shape[1]:
        raise DimensionError(f"training points have {X.shape[1]} features, target has {T.shape[1]}")
    if T.shape[0] < 1:
        raise DimensionError("empty target sample")


def _target_array(target):
    if isinstance(target, TargetSample):
        return target.features
    return _as_matrix(target)


def dominance_counts(train_features, target) -> np.ndarray:
    """Integer matrix of #{q : t_q >= max(x_i, x_j) componentwise}."""
    X = _as_matrix(train_features)
    T = _target_array(target)
    _check_pair(X, T)
    N = X.shape[0]
    counts = np.zeros((N, N), dtype=np.int64)
    for start in range(0, T.shape[0], _CHUNK):
        block = T[start:start + _CHUNK]
        Z = (block[:, None, :] >= X[None, :, :]).all(axis=2).astype(np.int64)
        counts += Z.T @ Z
    return counts


def per_dimension_counts(train_features, target) -> np.ndarray:
    """Integer matrix summing, over features k, #{q : t_q^k >= max(x_i^k, x_j^k)}."""
    X = _as_matrix(train_features)
    T = _target_array(target)
    _check_pair(X, T)
    M = T.shape[0]
    counts = np.zeros((X.shape[0], X.shape[0]), dtype=np.int64)
    for k in range(X.shape[1]):
        t_sorted = np.sort(T[:, k])
        # number of targets >= x_i^k; the count at max(x_i, x_j) is the min of the two
        ge = M - np.searchsorted(t_sorted, X[:, k], side="left")
        counts += np.minimum.outer(ge, ge)
    return counts


def empirical_v(train_features, target) -> VMatrix:
    """Multiplicative empirical V: fraction of targets dominating both points."""
    T = _target_array(target)
    counts = dominance_counts(train_features, T)
    return VMatrix(counts / T.shape[0], "empirical_multiplicative")


def empirical_v_additive(train_features, target) -> VMatrix:
    """Per-feature empirical V averaged over features.

    Better conditioned than the product form when n is large, since a single
    coordinate no longer zeroes out an entry.
    """
    X = _as_matrix(train_features)
    T = _target_array(target)
    counts = per_dimension_counts(X, T)
    return VMatrix(counts / (X.shape[1] * T.shape[0]), "empirical_additive")


def analytic_v_uniform(train_features, c) -> VMatrix:
    """V under the uniform product measure on prod_k [-c_k, c_k]."""
    X = _as_matrix(train_features)
    c = np.broadcast_to(np.asarray(c, dtype=float), (X.shape[1],))
    if np.any(c <= 0):
        raise ValueError("half-widths c must be positive")
    if np.any(np.abs(X) > c):
        raise DomainError("training coordinates fall outside [-c, c]")
    V = np.ones((X.shape[0], X.shape[0]))
    for k in range(X.shape[1]):
        V *= (c[k] - np.maximum.outer(X[:, k], X[:, k])) / (2.0 * c[k])
    return VMatrix(V, "analytic_uniform")


def analytic_v_gaussian(train_features) -> VMatrix:
    """V under a standard normal measure in one dimension: 1 - Phi(max(x_i, x_j))."""
    X = _as_matrix(train_features)
    if X.shape[1] != 1:
        raise DimensionError("the Gaussian V-matrix is only defined for one feature")
    m = np.maximum.outer(X[:, 0], X[:, 0])
    return VMatrix(0.5 * erfc(m / np.sqrt(2.0)), "analytic_gaussian")


def identity_v(N: int) -> VMatrix:
    if N < 1:
        raise ValueError("N must be positive")
    return VMatrix(np.eye(N), "identity")


def diagonal_v(weights) -> VMatrix:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size < 1:
        raise ValueError("need at least one weight")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return VMatrix(np.diag(w), "diagonal")
