"""Independent reference implementations shared by the unit and acceptance tests."""
import numpy as np


def naive_counts(X, T, additive=False):
    """Loop transcription of the indicator sums, integer counts only."""
    N, n = X.shape
    counts = np.zeros((N, N), dtype=np.int64)
    for i in range(N):
        for j in range(N):
            total = 0
            for t in T:
                hits = [t[k] >= max(X[i, k], X[j, k]) for k in range(n)]
                total += sum(hits) if additive else all(hits)
            counts[i, j] = total
    return counts


def classical_boost(X, y, params):
    """Plain squared-loss gradient boosting with exact leaf weights.

    Leaf weight -G/(n + lambda/2) and leaf score -2G^2/(2n + lambda), where
    G is the sum of residual gradients yhat - y in the leaf.
    """
    lam, gam = params.reg_lambda, params.gamma_tree

    def score(g):
        return -2 * g.sum() ** 2 / (2 * g.size + lam) + gam

    N, n = X.shape
    yhat = np.full(N, y.mean())
    trees = []
    for _ in range(params.num_trees):
        g = yhat - y
        leaves = [np.arange(N)]
        total = score(g)
        frontier = [0]
        splits = []
        for _ in range(params.max_depth):
            nxt = []
            for li in frontier:
                idx = leaves[li]
                best = None
                for f in range(n):
                    vals = np.unique(X[idx, f])
                    for a, b in zip(vals[:-1], vals[1:]):
                        thr = 0.5 * (a + b)
                        left, right = idx[X[idx, f] <= thr], idx[X[idx, f] > thr]
                        if min(left.size, right.size) < params.min_leaf_size:
                            continue
                        new = total - score(g[idx]) + score(g[left]) + score(g[right])
                        if best is None or new < best[0]:
                            best = (new, f, thr, left, right)
                if best is None or not best[0] < total - 1e-12 * max(1, abs(total)):
                    continue
                total = best[0]
                leaves[li] = best[3]
                leaves.append(best[4])
                splits.append((li, best[1], best[2], len(leaves) - 1))
                nxt.extend([li, len(leaves) - 1])
            if not nxt:
                break
            frontier = nxt
        weights = [-g[idx].sum() / (idx.size + lam / 2) for idx in leaves]
        trees.append((splits, weights))
        for idx, w in zip(leaves, weights):
            yhat[idx] += params.learning_rate * w
    return y.mean(), trees


def classical_predict(model, X, lr):
    base, trees = model
    out = np.full(X.shape[0], base)
    for splits, weights in trees:
        leaf = np.zeros(X.shape[0], dtype=int)
        for li, f, thr, right in splits:
            move = (leaf == li) & (X[:, f] > thr)
            leaf[move] = right
        out += lr * np.asarray(weights)[leaf]
    return out


def ridge_with_intercept(K, Y, gamma):
    """Kernel ridge regression with a free intercept, as one bordered linear system.

    [[K + gamma I, 1], [1^T K, N]] [A; c] = [Y; 1^T Y]
    """
    N = K.shape[0]
    block = np.zeros((N + 1, N + 1))
    block[:N, :N] = K + gamma * np.eye(N)
    block[:N, N] = 1
    block[N, :N] = K.sum(axis=0)
    block[N, N] = N
    sol = np.linalg.solve(block, np.append(Y, Y.sum()))
    return sol[:N], sol[N]
