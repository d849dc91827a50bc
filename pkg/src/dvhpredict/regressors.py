"""Per-dose-bin regression models and the whole-curve training wrapper.

Every algorithm fits one independent single-output predictor per dose bin
(642 on the canonical grid); cross-bin coherence is restored afterwards by
monotone projection.  Linear/MLP models consume standardized features, tree
models consume raw features (they are invariant to affine rescaling).

All fits are deterministic given (data, hyperparameters, seed).
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    CumulativeDVH,
    DoseGrid,
    FeatureVector,
    N_FEATURES,
    Organ,
    PatientRecord,
    feature_matrix,
    monotone_projection,
    target_matrix,
)
from .errors import (
    BinFitError,
    ConstantFeature,
    DivergedLoss,
    EmptyTrainingSet,
    NotConverged,
    SingularSystem,
    TooFewRecords,
)


class AlgorithmId(str, Enum):
    LR = "LR"
    EN = "EN"
    DT = "DT"
    RF = "RF"
    GBR = "GBR"
    MLP = "MLP"
    FRBP = "FRBP"
    ENSEMBLE3 = "Ensemble3"
    ENSEMBLE6 = "Ensemble6"


#: single-model algorithms, i.e. everything trainable by train_dvh_model
BASE_ALGORITHMS = (
    AlgorithmId.LR,
    AlgorithmId.EN,
    AlgorithmId.DT,
    AlgorithmId.RF,
    AlgorithmId.GBR,
    AlgorithmId.MLP,
    AlgorithmId.FRBP,
)

#: algorithms whose per-bin models consume standardized inputs
STANDARDIZED_INPUT = frozenset({AlgorithmId.LR, AlgorithmId.EN, AlgorithmId.MLP})

DEFAULT_PARAMS: dict[AlgorithmId, dict] = {
    AlgorithmId.LR: {},
    AlgorithmId.EN: {"l1_ratio": 0.5, "lam": 0.01, "tol": 1e-6, "max_iter": 10000},
    AlgorithmId.DT: {"max_depth": 4, "min_leaf": 2},
    AlgorithmId.RF: {"n_trees": 20, "max_depth": 5, "min_leaf": 2, "bootstrap": True, "mtry": None},
    AlgorithmId.GBR: {"n_stages": 50, "learning_rate": 0.1, "max_depth": 2, "min_leaf": 2},
    AlgorithmId.MLP: {"hidden": (8,), "epochs": 800, "learning_rate": 0.05},
    AlgorithmId.FRBP: {"max_depth": 3, "r_a": 0.5, "kappa": None, "min_weight": 1e-3},
}

# desk-scale tuning grids; values per key are tried in declaration order
DEFAULT_GRIDS: dict[AlgorithmId, dict] = {
    AlgorithmId.LR: {},
    AlgorithmId.EN: {"lam": [1e-3, 1e-2, 1e-1, 1.0], "l1_ratio": [0.1, 0.5, 0.9]},
    AlgorithmId.DT: {"max_depth": [2, 3, 4]},
    AlgorithmId.RF: {"n_trees": [50, 200], "max_depth": [3, 5]},
    AlgorithmId.GBR: {"n_stages": [50, 200], "learning_rate": [0.05, 0.1]},
    AlgorithmId.MLP: {"hidden": [(8,), (16,)]},
    AlgorithmId.FRBP: {"max_depth": [2, 3]},
}


def resolve_params(algorithm: AlgorithmId, params: dict | None) -> dict:
    merged = dict(DEFAULT_PARAMS[algorithm])
    if params:
        unknown = set(params) - set(merged)
        if unknown:
            raise ValueError(f"unknown hyperparameter(s) for {algorithm.value}: {sorted(unknown)}")
        merged.update(params)
    _validate_params(algorithm, merged)
    return merged


def _validate_params(algorithm: AlgorithmId, p: dict) -> None:
    if algorithm is AlgorithmId.EN:
        if not 0.0 <= p["l1_ratio"] <= 1.0:
            raise ValueError("l1_ratio must lie in [0, 1]")
        if p["lam"] < 0:
            raise ValueError("lam must be >= 0")
    elif algorithm in (AlgorithmId.DT, AlgorithmId.RF, AlgorithmId.GBR):
        if p["max_depth"] < 1:
            raise ValueError("max_depth must be >= 1")
        if p["min_leaf"] < 1:
            raise ValueError("min_leaf must be >= 1")
        if algorithm is AlgorithmId.RF and p["n_trees"] < 1:
            raise ValueError("n_trees must be >= 1")
        if algorithm is AlgorithmId.GBR:
            if p["n_stages"] < 1:
                raise ValueError("n_stages must be >= 1")
            if not 0.0 < p["learning_rate"] <= 1.0:
                raise ValueError("learning_rate must lie in (0, 1]")
    elif algorithm is AlgorithmId.MLP:
        hidden = tuple(p["hidden"])
        if len(hidden) < 1 or any(h < 1 for h in hidden):
            raise ValueError("hidden must name at least one layer of width >= 1")
        if p["epochs"] < 0:
            raise ValueError("epochs must be >= 0")
        if p["learning_rate"] <= 0:
            raise ValueError("learning_rate must be > 0")
    elif algorithm is AlgorithmId.FRBP:
        if p["max_depth"] < 0:
            raise ValueError("max_depth must be >= 0")
        if p["r_a"] <= 0:
            raise ValueError("r_a must be > 0")


# --- standardizer -----------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def standardize_fit(X: np.ndarray) -> Standardizer:
    """Per-feature mean/stddev (sample convention, n-1).  Constant features
    are rejected: downstream penalized/gradient fits need unit-scale inputs."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 samples")
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    for j, s in enumerate(std):
        if s <= 0.0 or not np.isfinite(s):
            raise ConstantFeature(j)
    return Standardizer(mean, std)


# --- linear models ----------------------------------------------------------

@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    intercept: float

    def predict(self, x: np.ndarray) -> float:
        return float(x @ self.weights + self.intercept)

    def to_jsonable(self) -> dict:
        return {"w": [float(v) for v in self.weights], "b": float(self.intercept)}

    @classmethod
    def from_jsonable(cls, d: dict) -> "LinearModel":
        return cls(np.asarray(d["w"], dtype=float), float(d["b"]))


def _ols_multi(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Normal-equation OLS with intercept for one or many target columns.
    Returns (p+1, m) coefficients, intercept last."""
    n, p = X.shape
    if n <= p:
        raise EmptyTrainingSet(f"OLS needs more rows ({n}) than columns ({p})")
    A = np.hstack([X, np.ones((n, 1))])
    G = A.T @ A
    B = A.T @ Y
    try:
        coef = np.linalg.solve(G, B)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        try:
            coef = np.linalg.solve(G + 1e-10 * np.eye(p + 1), B)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("normal equations singular even after jitter") from exc
        if not np.all(np.isfinite(coef)):
            raise SingularSystem("normal equations singular even after jitter")
    return coef


def fit_ols(X: np.ndarray, y: np.ndarray) -> LinearModel:
    """Least-squares linear fit via the normal equations (ridge jitter 1e-10
    applied only if the Gram matrix is singular)."""
    coef = _ols_multi(np.asarray(X, dtype=float), np.asarray(y, dtype=float).reshape(-1, 1))
    return LinearModel(coef[:-1, 0].copy(), float(coef[-1, 0]))


def _elastic_net_multi(
    X: np.ndarray,
    Y: np.ndarray,
    l1_ratio: float,
    lam: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate descent on (1/2n)*RSS + lam*(l1*|w|_1 + (1-l1)/2*|w|_2^2),
    run simultaneously for every target column.  Columns are independent, so
    this is exactly per-column coordinate descent.  Returns (W (p, m), b (m,))."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, p = X.shape
    m = Y.shape[1]
    col_sq = (X * X).sum(axis=0) / n
    W = np.zeros((p, m))
    b = Y.mean(axis=0)
    R = Y - b  # residual  y - b - Xw  (w = 0 initially)
    l1_pen = lam * l1_ratio
    l2_pen = lam * (1.0 - l1_ratio)
    for _ in range(max_iter):
        delta = 0.0
        for j in range(p):
            xj = X[:, j]
            rho = (xj @ R) / n + col_sq[j] * W[j]
            w_new = np.sign(rho) * np.maximum(np.abs(rho) - l1_pen, 0.0) / (col_sq[j] + l2_pen)
            diff = w_new - W[j]
            step = np.abs(diff).max()
            if step > 0.0:
                R -= np.outer(xj, diff)
                W[j] = w_new
                delta = max(delta, step)
        b_step = R.mean(axis=0)
        b += b_step
        R -= b_step
        delta = max(delta, np.abs(b_step).max())
        if delta < tol:
            return W, b
    raise NotConverged(max_iter)


def fit_elastic_net(
    X: np.ndarray,
    y: np.ndarray,
    l1_ratio: float = 0.5,
    lam: float = 0.01,
    tol: float = 1e-6,
    max_iter: int = 10000,
) -> LinearModel:
    if not 0.0 <= l1_ratio <= 1.0:
        raise ValueError("l1_ratio must lie in [0, 1]")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    W, b = _elastic_net_multi(X, np.asarray(y, dtype=float).reshape(-1, 1), l1_ratio, lam, tol, max_iter)
    return LinearModel(W[:, 0].copy(), float(b[0]))


def elastic_net_objective(X, y, model: LinearModel, l1_ratio: float, lam: float) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    r = y - X @ model.weights - model.intercept
    w = model.weights
    return float(
        (r @ r) / (2 * len(y))
        + lam * (l1_ratio * np.abs(w).sum() + 0.5 * (1 - l1_ratio) * (w @ w))
    )


# --- CART regression trees --------------------------------------------------

class CartTree:
    """Regression tree in flat-array form.  feature[i] == -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    def predict(self, x: np.ndarray) -> float:
        i = 0
        feature = self.feature
        while feature[i] >= 0:
            i = self.left[i] if x[feature[i]] <= self.threshold[i] else self.right[i]
        return self.value[i]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_jsonable(self) -> dict:
        return {
            "f": self.feature,
            "t": self.threshold,
            "l": self.left,
            "r": self.right,
            "v": self.value,
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "CartTree":
        return cls(list(d["f"]), list(d["t"]), list(d["l"]), list(d["r"]), list(d["v"]))


def _scan_splits(xs, ys, min_leaf, total):
    """Scan one presorted feature for the best split position.

    Minimizing total child SSE is equivalent (up to the node constant) to
    maximizing sl^2/nl + sr^2/nr, so only the running left sum is needed.
    The first maximum wins, which is the lowest threshold.
    """
    m = len(ys)
    best_crit = -np.inf
    best_i = -1
    sl = 0.0
    upper = m - min_leaf
    for i in range(m - 1):
        sl += ys[i]
        nl = i + 1
        if nl < min_leaf or nl > upper:
            continue
        if xs[i] < xs[i + 1]:
            sr = total - sl
            crit = sl * sl / nl + sr * sr / (m - nl)
            if crit > best_crit:
                best_crit = crit
                best_i = i
    return best_crit, best_i


def fit_cart(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int = 4,
    min_leaf: int = 2,
    rng: np.random.Generator | None = None,
    mtry: int | None = None,
) -> CartTree:
    """Greedy binary regression tree; split score is total child SSE
    (equivalently, weighted child variance).  Ties break to the lowest feature
    index, then the lowest threshold.  With rng/mtry set, each split searches
    a random feature subset (used by random forests)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise EmptyTrainingSet("cannot fit a tree on an empty set")
    n, p = X.shape
    # presorted row order per feature, partitioned down the tree as lists
    orders = [np.argsort(X[:, f], kind="stable").tolist() for f in range(p)]
    cols = [X[:, f].tolist() for f in range(p)]
    yl = y.tolist()

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def grow(node_orders, depth: int) -> int:
        node = new_node()
        rows = node_orders[0]
        m = len(rows)
        ysub = [yl[i] for i in rows]
        if max(ysub) == min(ysub):
            value[node] = ysub[0]  # exact for constant nodes
            return node
        total = sum(ysub)
        value[node] = total / m
        if depth >= max_depth or m < 2 * min_leaf:
            return node
        if mtry is not None and mtry < p:
            feats = sorted(int(f) for f in rng.choice(p, size=mtry, replace=False))
        else:
            feats = range(p)
        best = None  # (crit, feature, threshold)
        for f in feats:
            rows_f = node_orders[f]
            col = cols[f]
            crit, i = _scan_splits([col[r] for r in rows_f], [yl[r] for r in rows_f], min_leaf, total)
            if i >= 0 and (best is None or crit > best[0]):
                best = (crit, f, 0.5 * (col[rows_f[i]] + col[rows_f[i + 1]]))
        if best is None:
            return node
        _, f, thr = best
        col = cols[f]
        go_left = [col[r] <= thr for r in range(n)]
        left_orders = [[r for r in ord_f if go_left[r]] for ord_f in node_orders]
        right_orders = [[r for r in ord_f if not go_left[r]] for ord_f in node_orders]
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(left_orders, depth + 1)
        right[node] = grow(right_orders, depth + 1)
        return node

    grow(orders, 0)
    return CartTree(feature, threshold, left, right, value)


class Forest:
    __slots__ = ("trees",)

    def __init__(self, trees):
        self.trees = list(trees)

    def predict(self, x: np.ndarray) -> float:
        return sum(t.predict(x) for t in self.trees) / len(self.trees)

    def to_jsonable(self) -> dict:
        return {"trees": [t.to_jsonable() for t in self.trees]}

    @classmethod
    def from_jsonable(cls, d: dict) -> "Forest":
        return cls([CartTree.from_jsonable(t) for t in d["trees"]])


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 20,
    max_depth: int = 5,
    min_leaf: int = 2,
    bootstrap: bool = True,
    mtry: int | None = None,
    seed: int | np.random.SeedSequence = 0,
) -> Forest:
    """Bagged CART ensemble: bootstrap resamples plus per-split random feature
    subsets of size ceil(p/3) (override via mtry).  Reproducible from seed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise EmptyTrainingSet("cannot fit a forest on an empty set")
    p = X.shape[1]
    if mtry is None:
        mtry = int(np.ceil(p / 3))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    trees = []
    for child in ss.spawn(n_trees):
        rng = np.random.default_rng(child)
        if bootstrap:
            rows = rng.integers(0, len(y), size=len(y))
            Xb, yb = X[rows], y[rows]
        else:
            Xb, yb = X, y
        trees.append(fit_cart(Xb, yb, max_depth=max_depth, min_leaf=min_leaf, rng=rng, mtry=mtry))
    return Forest(trees)


class Boosted:
    __slots__ = ("base", "learning_rate", "trees")

    def __init__(self, base, learning_rate, trees):
        self.base = base
        self.learning_rate = learning_rate
        self.trees = list(trees)

    def predict(self, x: np.ndarray) -> float:
        out = self.base
        for t in self.trees:
            out += self.learning_rate * t.predict(x)
        return out

    def to_jsonable(self) -> dict:
        return {
            "base": float(self.base),
            "lr": float(self.learning_rate),
            "trees": [t.to_jsonable() for t in self.trees],
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "Boosted":
        return cls(float(d["base"]), float(d["lr"]), [CartTree.from_jsonable(t) for t in d["trees"]])


def fit_gbr(
    X: np.ndarray,
    y: np.ndarray,
    n_stages: int = 50,
    learning_rate: float = 0.1,
    max_depth: int = 2,
    min_leaf: int = 2,
) -> Boosted:
    """Stagewise least-squares boosting: start from mean(y), repeatedly fit a
    shallow CART to the residuals and take an eta-scaled step."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise EmptyTrainingSet("cannot boost on an empty set")
    base = float(y.mean())
    resid = y - base
    trees = []
    for _ in range(n_stages):
        tree = fit_cart(X, resid, max_depth=max_depth, min_leaf=min_leaf)
        step = np.array([tree.predict(x) for x in X])
        resid = resid - learning_rate * step
        trees.append(tree)
    return Boosted(base, learning_rate, trees)


# --- MLP ---------------------------------------------------------------------

class Mlp:
    """Small tanh feed-forward network with a linear output unit."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float)) for W, b in layers]

    def predict(self, x: np.ndarray) -> float:
        a = np.asarray(x, dtype=float)
        for W, b in self.layers[:-1]:
            a = np.tanh(a @ W + b)
        W, b = self.layers[-1]
        return float((a @ W + b)[0])

    def to_jsonable(self) -> dict:
        return {
            "layers": [
                {"W": [[float(v) for v in row] for row in W], "b": [float(v) for v in b]}
                for W, b in self.layers
            ]
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "Mlp":
        return cls([(np.asarray(l["W"], dtype=float), np.asarray(l["b"], dtype=float)) for l in d["layers"]])


def _mlp_init(hidden: tuple, d_in: int, seeds) -> list:
    """Seeded init for a batch of identical-architecture nets.
    Returns [(W (m, fan_in, fan_out), b (m, fan_out)), ...]."""
    dims = [d_in, *hidden, 1]
    m = len(seeds)
    per_model = [np.random.default_rng(s) for s in seeds]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = np.stack([r.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)) for r in per_model])
        b = np.zeros((m, fan_out))
        layers.append([W, b])
    return layers


def _mlp_forward(X, layers):
    """Forward pass for a batch of nets sharing input X (n, d).
    Returns (activations list, output (m, n))."""
    acts = []
    W0, b0 = layers[0]
    a = np.tanh(np.einsum("nd,mdh->mnh", X, W0) + b0[:, None, :])
    acts.append(a)
    for W, b in layers[1:-1]:
        a = np.tanh(np.einsum("mnh,mhk->mnk", a, W) + b[:, None, :])
        acts.append(a)
    Wl, bl = layers[-1]
    out = np.einsum("mnh,mhk->mnk", a, Wl) + bl[:, None, :]
    return acts, out[:, :, 0]


def _mlp_loss_and_grads(X, Y, layers):
    """Mean-squared-error loss and its gradients for a batch of nets.
    Y is (m, n); returns (loss (m,), grads shaped like layers)."""
    n = X.shape[0]
    acts, out = _mlp_forward(X, layers)
    err = out - Y  # (m, n)
    loss = (err * err).mean(axis=1)
    d = (2.0 / n) * err[:, :, None]  # dL/d(out), (m, n, 1)
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        a_prev = acts[i - 1] if i > 0 else None
        if i > 0:
            gW = np.einsum("mnh,mnk->mhk", a_prev, d)
        else:
            gW = np.einsum("nd,mnk->mdk", X, d)
        gb = d.sum(axis=1)
        grads.append((gW, gb))
        if i > 0:
            W = layers[i][0]
            da = np.einsum("mnk,mhk->mnh", d, W)
            d = da * (1.0 - a_prev * a_prev)
    grads.reverse()
    return loss, grads


def _fit_mlp_batched(X, Y, hidden, epochs, learning_rate, seeds):
    """Train m independent single-output nets by full-batch gradient descent.
    X is shared (n, d); Y is (m, n).  Raises DivergedLoss on non-finite loss."""
    layers = _mlp_init(tuple(hidden), X.shape[1], seeds)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            loss, grads = _mlp_loss_and_grads(X, Y, layers)
            if not np.all(np.isfinite(loss)):
                bad = int(np.flatnonzero(~np.isfinite(loss))[0])
                raise DivergedLoss(f"loss diverged (model index {bad})")
            for (W, b), (gW, gb) in zip(layers, grads):
                W -= learning_rate * gW
                b -= learning_rate * gb
    return [Mlp([(W[i], b[i]) for W, b in layers]) for i in range(len(seeds))]


def fit_mlp(
    X: np.ndarray,
    y: np.ndarray,
    hidden: tuple = (8,),
    epochs: int = 1500,
    learning_rate: float = 0.03,
    seed: int | np.random.SeedSequence = 0,
) -> Mlp:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return _fit_mlp_batched(X, y[None, :], hidden, epochs, learning_rate, [ss])[0]


def mlp_loss_and_grad(X, y, layers_2d):
    """Loss and flattened gradient for one net given as [(W, b), ...] 2-D
    arrays; used by finite-difference checks."""
    layers = [[W[None, :, :].copy(), b[None, :].copy()] for W, b in layers_2d]
    loss, grads = _mlp_loss_and_grads(np.asarray(X, dtype=float), np.asarray(y, dtype=float)[None, :], layers)
    flat = np.concatenate([g.ravel() for gW, gb in grads for g in (gW[0], gb[0])])
    return float(loss[0]), flat


def mlp_loss(X, y, layers_2d) -> float:
    layers = [[W[None, :, :], b[None, :]] for W, b in layers_2d]
    _, out = _mlp_forward(np.asarray(X, dtype=float), layers)
    err = out[0] - np.asarray(y, dtype=float)
    return float((err * err).mean())


# --- whole-curve wrapper ------------------------------------------------------

_PREDICTOR_KINDS = {
    "linear": LinearModel,
    "cart": CartTree,
    "forest": Forest,
    "boosted": Boosted,
    "mlp": Mlp,
}


def _predictor_kind(model) -> str:
    for kind, cls in _PREDICTOR_KINDS.items():
        if isinstance(model, cls):
            return kind
    from . import frbp  # late import; frbp depends on this module

    if isinstance(model, frbp.FdtPredictor):
        return "fdt"
    raise TypeError(f"unknown per-bin predictor {type(model)!r}")


@dataclass(frozen=True)
class TrainedDvhModel:
    """One algorithm's fitted per-bin predictors for one organ."""

    algorithm: AlgorithmId
    organ: Organ
    grid: DoseGrid
    standardizer: Standardizer
    per_bin_models: tuple
    hyperparams: dict
    training_fingerprint: str

    def __post_init__(self):
        if len(self.per_bin_models) != self.grid.n_bins:
            raise ValueError("need exactly one per-bin model per grid bin")

    def predict_curve(self, features: FeatureVector) -> CumulativeDVH:
        x = features.as_array()
        if self.algorithm in STANDARDIZED_INPUT:
            x = self.standardizer.transform(x)
        raw = np.array([m.predict(x) for m in self.per_bin_models])
        raw = np.clip(raw, 0.0, 100.0)
        return CumulativeDVH(self.grid, monotone_projection(raw))

    def to_payload(self) -> dict:
        payload = {
            "algorithm": self.algorithm.value,
            "organ": self.organ.value,
            "grid": self.grid.to_dict(),
            "standardizer": self.standardizer.to_dict(),
            "hyperparams": _jsonable_params(self.hyperparams),
            "fingerprint": self.training_fingerprint,
        }
        if self.algorithm is AlgorithmId.FRBP:
            from . import frbp

            payload["kind"] = "fdt"
            payload["shared"] = frbp.partitions_to_jsonable(self.per_bin_models[0].partitions)
            payload["per_bin"] = [m.tree_to_jsonable() for m in self.per_bin_models]
        else:
            payload["kind"] = _predictor_kind(self.per_bin_models[0])
            payload["per_bin"] = [m.to_jsonable() for m in self.per_bin_models]
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "TrainedDvhModel":
        kind = payload["kind"]
        if kind == "fdt":
            from . import frbp

            partitions = frbp.partitions_from_jsonable(payload["shared"])
            per_bin = tuple(
                frbp.FdtPredictor.from_tree_jsonable(t, partitions) for t in payload["per_bin"]
            )
        else:
            cls_ = _PREDICTOR_KINDS[kind]
            per_bin = tuple(cls_.from_jsonable(d) for d in payload["per_bin"])
        hyper = payload["hyperparams"]
        if "hidden" in hyper:
            hyper = dict(hyper, hidden=tuple(hyper["hidden"]))
        return cls(
            algorithm=AlgorithmId(payload["algorithm"]),
            organ=Organ(payload["organ"]),
            grid=DoseGrid.from_dict(payload["grid"]),
            standardizer=Standardizer.from_dict(payload["standardizer"]),
            per_bin_models=per_bin,
            hyperparams=hyper,
            training_fingerprint=payload["fingerprint"],
        )


def predict_dvh(model: TrainedDvhModel, features: FeatureVector) -> CumulativeDVH:
    """Predict a whole curve: per-bin raw outputs, clamp to [0, 100], then
    monotone projection, so the result is always a valid cumulative DVH."""
    return model.predict_curve(features)


def _jsonable_params(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def training_fingerprint(
    algorithm: AlgorithmId, organ: Organ, cohort: Sequence[PatientRecord], params: dict, seed: int
) -> str:
    """Digest of everything that determines a fit: data, config, seed."""
    h = hashlib.sha256()
    h.update(algorithm.value.encode())
    h.update(organ.value.encode())
    h.update(json.dumps(_jsonable_params(params), sort_keys=True).encode())
    h.update(str(seed).encode())
    for rec in cohort:
        h.update(rec.case_id.encode())
        h.update(rec.features.as_array().tobytes())
        h.update(np.asarray(rec.dvh[organ].volume_pct).tobytes())
    return h.hexdigest()


def _map_bins(fn, n_bins: int, n_jobs: int):
    if n_jobs == 1:
        return [fn(b) for b in range(n_bins)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(b) for b in range(n_bins))


def train_dvh_model(
    algorithm: AlgorithmId,
    organ: Organ,
    cohort: Sequence[PatientRecord],
    params: dict | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> TrainedDvhModel:
    """Fit one independent single-output model per dose bin (shared
    standardizer, shared seed stream).  Deterministic given inputs."""
    if algorithm not in BASE_ALGORITHMS:
        raise ValueError(f"{algorithm.value} is not directly trainable")
    if len(cohort) < N_FEATURES + 1:
        raise TooFewRecords(
            f"need at least {N_FEATURES + 1} records, got {len(cohort)}"
        )
    params = resolve_params(algorithm, params)
    grid = cohort[0].dvh[organ].grid
    X = feature_matrix(cohort)
    Y = target_matrix(cohort, organ)  # (n, n_bins)
    n_bins = grid.n_bins
    standardizer = standardize_fit(X)
    Xs = standardizer.transform(X)

    if algorithm is AlgorithmId.LR:
        coef = _ols_multi(Xs, Y)
        per_bin = [LinearModel(coef[:-1, b].copy(), float(coef[-1, b])) for b in range(n_bins)]
    elif algorithm is AlgorithmId.EN:
        W, b = _elastic_net_multi(
            Xs, Y, params["l1_ratio"], params["lam"], params["tol"], params["max_iter"]
        )
        per_bin = [LinearModel(W[:, i].copy(), float(b[i])) for i in range(n_bins)]
    elif algorithm is AlgorithmId.DT:
        def fit_bin(b):
            try:
                return fit_cart(X, Y[:, b], max_depth=params["max_depth"], min_leaf=params["min_leaf"])
            except Exception as exc:  # pragma: no cover - defensive
                raise BinFitError(b, exc) from exc

        per_bin = _map_bins(fit_bin, n_bins, n_jobs)
    elif algorithm is AlgorithmId.RF:
        bin_seeds = np.random.SeedSequence(seed).spawn(n_bins)

        def fit_bin(b):
            try:
                return fit_random_forest(
                    X,
                    Y[:, b],
                    n_trees=params["n_trees"],
                    max_depth=params["max_depth"],
                    min_leaf=params["min_leaf"],
                    bootstrap=params["bootstrap"],
                    mtry=params["mtry"],
                    seed=bin_seeds[b],
                )
            except Exception as exc:  # pragma: no cover - defensive
                raise BinFitError(b, exc) from exc

        per_bin = _map_bins(fit_bin, n_bins, n_jobs)
    elif algorithm is AlgorithmId.GBR:
        def fit_bin(b):
            try:
                return fit_gbr(
                    X,
                    Y[:, b],
                    n_stages=params["n_stages"],
                    learning_rate=params["learning_rate"],
                    max_depth=params["max_depth"],
                    min_leaf=params["min_leaf"],
                )
            except Exception as exc:  # pragma: no cover - defensive
                raise BinFitError(b, exc) from exc

        per_bin = _map_bins(fit_bin, n_bins, n_jobs)
    elif algorithm is AlgorithmId.MLP:
        bin_seeds = np.random.SeedSequence(seed).spawn(n_bins)
        per_bin = _fit_mlp_batched(
            Xs, Y.T, params["hidden"], params["epochs"], params["learning_rate"], bin_seeds
        )
    elif algorithm is AlgorithmId.FRBP:
        from . import frbp

        per_bin = frbp.fit_frbp_bins(X, Y, params, n_jobs=n_jobs)
    else:  # pragma: no cover
        raise AssertionError(algorithm)

    return TrainedDvhModel(
        algorithm=algorithm,
        organ=organ,
        grid=grid,
        standardizer=standardizer,
        per_bin_models=tuple(per_bin),
        hyperparams=params,
        training_fingerprint=training_fingerprint(algorithm, organ, cohort, params, seed),
    )


def expand_grid(param_grid: dict) -> list[dict]:
    """Expand a {name: [values]} grid in declaration order."""
    if not param_grid:
        return [{}]
    keys = list(param_grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(param_grid[k] for k in keys))]


def grid_search_cv(
    algorithm: AlgorithmId,
    organ: Organ,
    cohort: Sequence[PatientRecord],
    param_grid: dict,
    k: int = 5,
    seed: int = 0,
    n_jobs: int = 1,
) -> dict:
    """Exhaustive grid search scored by k-fold CV mean of per-patient
    full-range MAE.  Ties keep the first grid entry in declaration order."""
    from .evaluation import DoseBand, median_abs_error

    if k < 2:
        raise ValueError("need at least 2 folds")
    candidates = expand_grid(param_grid)
    if not candidates:
        raise ValueError("empty parameter grid")
    n = len(cohort)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, k)

    best_params = None
    best_score = np.inf
    for cand in candidates:
        fold_scores = []
        for fold in folds:
            hold = set(int(i) for i in fold)
            train = [cohort[i] for i in range(n) if i not in hold]
            test = [cohort[i] for i in sorted(hold)]
            model = train_dvh_model(algorithm, organ, train, cand, seed=seed, n_jobs=n_jobs)
            maes = [
                median_abs_error(rec.dvh[organ], model.predict_curve(rec.features), DoseBand.FULL)
                for rec in test
            ]
            fold_scores.append(float(np.mean(maes)))
        score = float(np.mean(fold_scores))
        if score < best_score:
            best_score = score
            best_params = cand
    return resolve_params(algorithm, best_params)
