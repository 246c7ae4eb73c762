"""Closed-form V-SVM.

The model is f(x) = A^T k(x) + c with k(x)_i = K(x_i, x).  For a given
V-matrix the coefficients solve

    (VK + gamma I) A_b = V Y,      (VK + gamma I) A_c = V 1,
    c = 1^T V (K A_b - Y) / 1^T V (K A_c - 1),      A = A_b - c A_c,

which is the stationary point of  r^T V r + gamma A^T K A  with
r = K A + c 1 - Y.  With V = I this is kernel ridge regression with an
unpenalized intercept.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial.distance import cdist

from .dataset import LabeledDataset
from .errors import DimensionError, NumericalError
from .vmatrix import VMatrix

log = logging.getLogger(__name__)

KERNEL_FAMILIES = ("gaussian", "sqrt_gaussian")
DEGENERATE_DENOMINATOR = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    family: str = "sqrt_gaussian"
    width: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.width > 0:
            raise ValueError("kernel width must be positive")


def kernel_matrix(config: KernelConfig, X, Y=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"kernel arguments have {X.shape[1]} and {Y.shape[1]} features")
    if config.family == "gaussian":
        return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * config.width ** 2))
    return np.exp(-cdist(X, Y, "euclidean") / config.width)


def kernel_eval(config: KernelConfig, x, x_prime) -> float:
    """gaussian: exp(-|x-x'|^2 / 2h^2);  sqrt_gaussian: exp(-|x-x'| / h)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise DimensionError("kernel arguments differ in dimension")
    return float(kernel_matrix(config, x[None, :], x_prime[None, :])[0, 0])


@dataclass(frozen=True)
class VsvmModel:
    coefficients: np.ndarray
    intercept: float
    kernel: KernelConfig
    train_features: np.ndarray
    gamma: float
    degenerate_intercept: bool = field(default=False, compare=False)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if X.size == self.train_features.shape[1] else X[:, None]
        if X.shape[1] != self.train_features.shape[1]:
            raise DimensionError(
                f"model trained on {self.train_features.shape[1]} features, got {X.shape[1]}")
        return kernel_matrix(self.kernel, X, self.train_features) @ self.coefficients + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.decision_function(X), 0.0, 1.0)

    def predict_label(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.5).astype(np.int64)

    def to_dict(self):
        return {
            "model_type": "vsvm",
            "kernel": {"family": self.kernel.family, "width": self.kernel.width},
            "gamma": self.gamma,
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "train_features": self.train_features.tolist(),
            "degenerate_intercept": self.degenerate_intercept,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            intercept=float(d["intercept"]),
            kernel=KernelConfig(d["kernel"]["family"], float(d["kernel"]["width"])),
            train_features=np.asarray(d["train_features"], dtype=float).reshape(
                len(d["coefficients"]), -1),
            gamma=float(d["gamma"]),
            degenerate_intercept=bool(d.get("degenerate_intercept", False)),
        )

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def predict_proba(model: VsvmModel, x):
    return model.predict_proba(x)


def predict_label(model: VsvmModel, x):
    return model.predict_label(x)


def solve_closed_form(K, V, Y, gamma):
    """Return (A, c, degenerate) for a precomputed kernel matrix."""
    N = K.shape[0]
    VK = V @ K
    lu, piv = lu_factor(VK + gamma * np.eye(N), check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * N:
        cond = np.linalg.cond(VK + gamma * np.eye(N))
        raise NumericalError(f"VK + gamma I is singular (condition estimate {cond:.3g})")
    ones = np.ones(N)
    A_b = lu_solve((lu, piv), V @ Y)
    A_c = lu_solve((lu, piv), V @ ones)
    num = ones @ V @ (K @ A_b - Y)
    den = ones @ V @ (K @ A_c - ones)
    degenerate = bool(abs(den) < DEGENERATE_DENOMINATOR)
    if degenerate:
        c = float(np.mean(Y))
    else:
        c = float(num / den)
    return A_b - c * A_c, c, degenerate


def fit(train: LabeledDataset, V: VMatrix, kernel: KernelConfig = KernelConfig(),
        gamma: float = 0.1) -> VsvmModel:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    Vm = V.entries if isinstance(V, VMatrix) else np.asarray(V, dtype=float)
    N = train.n_samples
    if Vm.shape != (N, N):
        raise DimensionError(f"V is {Vm.shape}, training set has {N} points")
    X = train.features
    Y = train.labels.astype(float)
    K = kernel_matrix(kernel, X)
    A, c, degenerate = solve_closed_form(K, Vm, Y, gamma)
    if degenerate:
        msg = "intercept denominator vanished; falling back to c = mean(Y)"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return VsvmModel(A, c, kernel, X.copy(), float(gamma), degenerate)


def objective(A, c, K, V, Y, gamma) -> float:
    """(1/N^2) r^T V r + (gamma/N^2) A^T K A, with r = K A + c - Y.

    This is the V-weighted L2 distance plus the RKHS penalty, with the
    penalty constant expressed on the same 1/N^2 scale so that the closed
    form above is its exact minimizer.
    """
    N = K.shape[0]
    r = K @ A + c - Y
    return float((r @ V @ r + gamma * (A @ K @ A)) / N ** 2)
