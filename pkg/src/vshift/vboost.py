"""Gradient boosting under the V-coupled squared loss.

The boosting objective is  sum_ij (y_i - yhat_i)(y_j - yhat_j) V_ij  plus the
usual tree complexity  gamma_tree * T + lambda/2 * |w|^2.  Because V couples
every pair of points, the leaf weights of a tree are no longer independent:
they solve the T x T system D w = U with

    C_lm = sum_{i in I_l} sum_{j in I_m} V_ij
    D    = C + C^T + lambda I
    U_k  = -(A_k + B_k),  A_k = sum_i g_i sum_{j in I_k} V_ij,
                          B_k = sum_j g_j sum_{i in I_k} V_ij

where g = yhat - y.  Trees are grown greedily, scoring each candidate
partition by the optimal objective  -1/2 U^T D^-1 U + gamma_tree * T
(symmetric V) or its general counterpart.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dataset import LabeledDataset
from .errors import DimensionError, NumericalError
from .vmatrix import VMatrix


@dataclass(frozen=True)
class BoostParams:
    num_trees: int = 10
    max_depth: int = 3
    reg_lambda: float = 1.0
    gamma_tree: float = 0.0
    learning_rate: float = 1.0
    min_leaf_size: int = 5

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be at least 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be at least 1")
        if self.reg_lambda < 0 or self.gamma_tree < 0:
            raise ValueError("penalties must be nonnegative")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")


@dataclass
class RegressionTree:
    """Flat node list; internal nodes route x[feature] <= threshold to ``left``."""

    nodes: list = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if "weight" in n)

    def apply(self, X) -> np.ndarray:
        """Node index of the leaf each row falls into."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node_id, rows = stack.pop()
            node = self.nodes[node_id]
            if "weight" in node:
                out[rows] = node_id
                continue
            go_left = X[rows, node["feature"]] <= node["threshold"]
            stack.append((node["left"], rows[go_left]))
            stack.append((node["right"], rows[~go_left]))
        return out

    def predict(self, X) -> np.ndarray:
        weights = np.array([n.get("weight", 0.0) for n in self.nodes])
        return weights[self.apply(X)]


@dataclass
class BoostModel:
    trees: list
    params: BoostParams
    base_score: float
    n_features: int

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if X.size == self.n_features else X[:, None]
        if X.shape[1] != self.n_features:
            raise DimensionError(f"model trained on {self.n_features} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.decision_function(X), 0.0, 1.0)

    def predict_label(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.5).astype(np.int64)

    def to_dict(self):
        return {
            "model_type": "vboost",
            "params": asdict(self.params),
            "base_score": self.base_score,
            "n_features": self.n_features,
            "trees": [t.nodes for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        trees = [RegressionTree([dict(n) for n in nodes]) for nodes in d["trees"]]
        return cls(trees, BoostParams(**d["params"]), float(d["base_score"]), int(d["n_features"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------ leaf algebra

def _indicator(assignment, T):
    Z = np.zeros((assignment.size, T))
    Z[np.arange(assignment.size), assignment] = 1.0
    return Z


def leaf_sums(assignment, g, V):
    """Return (A, B, C) for a point-to-leaf assignment with leaves 0..T-1."""
    assignment = np.asarray(assignment, dtype=np.int64)
    g = np.asarray(g, dtype=float)
    V = V.entries if isinstance(V, VMatrix) else np.asarray(V, dtype=float)
    T = int(assignment.max()) + 1
    if np.bincount(assignment, minlength=T).min() == 0:
        raise ValueError("every leaf must hold at least one point")
    Z = _indicator(assignment, T)
    A = Z.T @ (V.T @ g)
    B = Z.T @ (V @ g)
    C = Z.T @ V @ Z
    return A, B, C


def leaf_system(assignment, g, V, reg_lambda):
    """Return (D, U) of the leaf-weight system D w = U."""
    A, B, C = leaf_sums(assignment, g, V)
    D = C + C.T + reg_lambda * np.eye(C.shape[0])
    U = -(A + B)
    return D, U


def solve_leaf_weights(D, U) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    U = np.asarray(U, dtype=float)
    try:
        factor = cho_factor(D)
    except LinAlgError:
        raise NumericalError(
            "leaf system D is not positive definite; use reg_lambda > 0") from None
    return cho_solve(factor, U)


def tree_objective(D, U, gamma_tree, T, C=None, reg_lambda=None) -> float:
    """Optimal tree objective up to a constant.

    With ``C`` omitted V is taken as symmetric and the value is
    -1/2 U^T D^-1 U + gamma_tree * T.  Passing ``C`` (and ``reg_lambda``)
    evaluates the general form  -U^T w + w^T C^T w + lambda/2 w^T w + gamma_tree * T
    at w = D^-1 U, which does not assume C = C^T.
    """
    w = solve_leaf_weights(D, U)
    U = np.asarray(U, dtype=float)
    if C is None:
        return float(-0.5 * U @ w + gamma_tree * T)
    C = np.asarray(C, dtype=float)
    lam = 0.0 if reg_lambda is None else reg_lambda
    return float(-U @ w + w @ C.T @ w + 0.5 * lam * (w @ w) + gamma_tree * T)


def coupled_loss(y, yhat, V) -> float:
    """sum_ij (y_i - yhat_i)(y_j - yhat_j) V_ij."""
    V = V.entries if isinstance(V, VMatrix) else np.asarray(V, dtype=float)
    r = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    return float(r @ V @ r)


# ------------------------------------------------------------ tree growth

def _batched_objective(C, U, reg_lambda, gamma_tree, symmetric):
    T = C.shape[-1]
    D = C + np.swapaxes(C, -1, -2) + reg_lambda * np.eye(T)
    try:
        w = np.linalg.solve(D, U[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise NumericalError(
            "singular leaf system during split search; use reg_lambda > 0") from None
    if symmetric:
        return -0.5 * np.einsum("st,st->s", U, w) + gamma_tree * T
    quad = np.einsum("st,sut,su->s", w, C, w)  # w^T C^T w
    return (-np.einsum("st,st->s", U, w) + quad
            + 0.5 * reg_lambda * np.einsum("st,st->s", w, w) + gamma_tree * T)


class _Grower:
    def __init__(self, X, g, V, params, symmetric):
        self.X = X
        self.V = V
        self.params = params
        self.symmetric = symmetric
        self.Vg = V @ g
        self.VTg = V.T @ g

    def partition_objective(self, members):
        assignment = np.empty(self.X.shape[0], dtype=np.int64)
        for k, idx in enumerate(members):
            assignment[idx] = k
        T = len(members)
        Z = _indicator(assignment, T)
        C = Z.T @ self.V @ Z
        U = -(Z.T @ (self.Vg + self.VTg))
        return float(_batched_objective(C[None], U[None], self.params.reg_lambda,
                                        self.params.gamma_tree, self.symmetric)[0])

    def best_split(self, members, pos):
        """Best (objective, feature, threshold, left_idx, right_idx) for leaf ``pos``."""
        p = self.params
        idx_all = members[pos]
        n_leaf = idx_all.size
        if n_leaf < 2 * p.min_leaf_size:
            return None
        T = len(members)
        assignment = np.empty(self.X.shape[0], dtype=np.int64)
        for k, idx in enumerate(members):
            assignment[idx] = k
        Z = _indicator(assignment, T)
        VZ = self.V @ Z
        ZTV = Z.T @ self.V
        C0 = Z.T @ VZ
        U0 = -(Z.T @ (self.Vg + self.VTg))
        others = [m for m in range(T) if m != pos]
        best = None

        for f in range(self.X.shape[1]):
            order = np.argsort(self.X[idx_all, f], kind="stable")
            idx = idx_all[order]
            vals = self.X[idx, f]
            s = np.arange(p.min_leaf_size, n_leaf - p.min_leaf_size + 1)
            s = s[vals[s - 1] < vals[s]]
            if s.size == 0:
                continue
            P = self.V[np.ix_(idx, idx)]
            cs = P.cumsum(axis=0).cumsum(axis=1)
            c_ll = cs[s - 1, s - 1]
            c_l_leaf = np.cumsum(P.sum(axis=1))[s - 1]
            c_leaf_l = np.cumsum(P.sum(axis=0))[s - 1]
            c_lr = c_l_leaf - c_ll
            c_rl = c_leaf_l - c_ll
            c_rr = C0[pos, pos] - c_ll - c_lr - c_rl
            u_l = -np.cumsum(self.Vg[idx] + self.VTg[idx])[s - 1]

            S = s.size
            C = np.zeros((S, T + 1, T + 1))
            C[:, :T, :T] = C0
            C[:, pos, pos] = c_ll
            C[:, pos, T] = c_lr
            C[:, T, pos] = c_rl
            C[:, T, T] = c_rr
            if others:
                o = np.array(others)
                c_l_m = np.cumsum(VZ[idx][:, o], axis=0)[s - 1]
                c_m_l = np.cumsum(ZTV[o][:, idx], axis=1)[:, s - 1].T
                C[:, pos, o] = c_l_m
                C[:, T, o] = C0[pos, o] - c_l_m
                C[:, o, pos] = c_m_l
                C[:, o, T] = C0[o, pos] - c_m_l
            U = np.zeros((S, T + 1))
            U[:, :T] = U0
            U[:, pos] = u_l
            U[:, T] = U0[pos] - u_l

            obj = _batched_objective(C, U, p.reg_lambda, p.gamma_tree, self.symmetric)
            k = int(np.argmin(obj))
            if best is None or obj[k] < best[0]:
                cut = s[k]
                threshold = 0.5 * (vals[cut - 1] + vals[cut])
                best = (float(obj[k]), f, float(threshold), np.sort(idx[:cut]), np.sort(idx[cut:]))
        return best


def _improves(new, current):
    return new < current - 1e-12 * max(1.0, abs(current))


def grow_tree(X, g, V, params: BoostParams, symmetric=None):
    """Grow one tree level by level and return (tree, leaf member lists, leaf node ids)."""
    X = np.asarray(X, dtype=float)
    V = V.entries if isinstance(V, VMatrix) else np.asarray(V, dtype=float)
    if symmetric is None:
        symmetric = bool(np.array_equal(V, V.T))
    grower = _Grower(X, np.asarray(g, dtype=float), V, params, symmetric)

    nodes = [{"weight": 0.0}]
    members = [np.arange(X.shape[0])]
    leaf_nodes = [0]
    current = grower.partition_objective(members)
    frontier = [0]
    for _ in range(params.max_depth):
        next_frontier = []
        for node_id in frontier:
            pos = leaf_nodes.index(node_id)
            found = grower.best_split(members, pos)
            if found is None or not _improves(found[0], current):
                continue
            current, feature, threshold, left_idx, right_idx = found
            left_id, right_id = len(nodes), len(nodes) + 1
            nodes[node_id] = {"feature": feature, "threshold": threshold,
                              "left": left_id, "right": right_id}
            nodes.extend([{"weight": 0.0}, {"weight": 0.0}])
            members[pos] = left_idx
            leaf_nodes[pos] = left_id
            members.append(right_idx)
            leaf_nodes.append(right_id)
            next_frontier.extend([left_id, right_id])
        if not next_frontier:
            break
        frontier = next_frontier
    return RegressionTree(nodes), members, leaf_nodes


def fit_boost(train: LabeledDataset, V: VMatrix, params: BoostParams = BoostParams()
              ) -> BoostModel:
    Vm = V.entries if isinstance(V, VMatrix) else np.asarray(V, dtype=float)
    N = train.n_samples
    if Vm.shape != (N, N):
        raise DimensionError(f"V is {Vm.shape}, training set has {N} points")
    X = train.features
    y = train.labels.astype(float)
    symmetric = bool(np.array_equal(Vm, Vm.T))
    base = float(y.mean())
    yhat = np.full(N, base)
    trees = []
    for _ in range(params.num_trees):
        g = yhat - y
        tree, members, leaf_nodes = grow_tree(X, g, Vm, params, symmetric)
        assignment = np.empty(N, dtype=np.int64)
        for k, idx in enumerate(members):
            assignment[idx] = k
        D, U = leaf_system(assignment, g, Vm, params.reg_lambda)
        w = solve_leaf_weights(D, U)
        for k, node_id in enumerate(leaf_nodes):
            tree.nodes[node_id]["weight"] = float(w[k])
        yhat = yhat + params.learning_rate * w[assignment]
        trees.append(tree)
    return BoostModel(trees, params, base, X.shape[1])


def predict_boost(model: BoostModel, x):
    return model.decision_function(x)
