"""Sample-weight-aware base learners and their hyperparameter search spaces.

Every learner accepts per-row weights and an optional relabeling, which is
the cost-sensitive oracle interface the reduction mitigators call. Weights
are normalized to mean one before fitting, so rescaling them by a positive
constant leaves the fitted model unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .dataset import Dataset

GBT = "gbt"
LOGISTIC = "lr"
TREE = "dt"
LEARNERS = (GBT, LOGISTIC, TREE)

MODEL_FORMAT = "fairautoml-model"
MODEL_VERSION = 1

_MAX_BINS = 64


@dataclass(frozen=True)
class ParamRange:
    name: str
    low: float
    high: float
    log: bool = False
    integer: bool = False
    cost_driving: bool = False

    def __post_init__(self):
        if not self.low <= self.high:
            raise ValueError(f"empty range for {self.name}: [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise ValueError(f"log-scaled range for {self.name} must be strictly positive")

    def contains(self, value: float) -> bool:
        if self.integer and value != int(value):
            return False
        return self.low <= value <= self.high

    def normalize(self, value: float) -> float:
        if self.high == self.low:
            return 0.0
        if self.log:
            u = (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        else:
            u = (value - self.low) / (self.high - self.low)
        return min(1.0, max(0.0, u))

    def denormalize(self, u: float) -> float | int:
        u = min(1.0, max(0.0, float(u)))
        if self.log:
            value = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        else:
            value = self.low + u * (self.high - self.low)
        if self.integer:
            return int(min(self.high, max(self.low, round(value))))
        return min(self.high, max(self.low, value))


@dataclass(frozen=True)
class SearchSpace:
    learners: tuple[str, ...]
    params: Mapping[str, tuple[ParamRange, ...]]

    def __post_init__(self):
        if not self.learners:
            raise ValueError("search space needs at least one learner")
        for learner in self.learners:
            if learner not in self.params:
                raise ValueError(f"no parameter ranges declared for learner {learner!r}")

    def ranges(self, learner: str) -> tuple[ParamRange, ...]:
        return self.params[learner]

    def contains(self, config: "ConfigPoint") -> bool:
        if config.learner not in self.learners:
            return False
        ranges = {r.name: r for r in self.ranges(config.learner)}
        if set(ranges) != set(config.params):
            return False
        return all(ranges[k].contains(v) for k, v in config.params.items())


@dataclass(frozen=True)
class ConfigPoint:
    learner: str
    params: Mapping[str, Any]

    @property
    def key(self) -> str:
        return f"{self.learner}:" + json.dumps(dict(self.params), sort_keys=True, separators=(",", ":"))

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, ConfigPoint) and self.key == other.key

    def to_dict(self) -> dict:
        return {"learner": self.learner, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ConfigPoint":
        return cls(data["learner"], dict(data["params"]))


def default_space(mode: str = "single") -> SearchSpace:
    """``single`` tunes boosted trees only; ``multi`` adds logistic regression and a tree."""
    gbt = (
        ParamRange("n_estimators", 4, 512, log=True, integer=True, cost_driving=True),
        ParamRange("learning_rate", 0.01, 1.0, log=True),
        ParamRange("max_depth", 1, 10, integer=True, cost_driving=True),
        ParamRange("min_leaf", 1, 64, log=True, integer=True),
    )
    if mode == "single":
        return SearchSpace((GBT,), {GBT: gbt})
    if mode != "multi":
        raise ValueError(f"unknown space mode {mode!r}")
    lr = (
        ParamRange("l2_reg", 1e-6, 1e2, log=True),
        ParamRange("iterations", 50, 2000, log=True, integer=True, cost_driving=True),
    )
    dt = (
        ParamRange("max_depth", 1, 12, integer=True, cost_driving=True),
        ParamRange("min_leaf", 1, 64, log=True, integer=True),
    )
    return SearchSpace((GBT, LOGISTIC, TREE), {GBT: gbt, LOGISTIC: lr, TREE: dt})


# ---------------------------------------------------------------------------
# models


class TrainedModel:
    """Base class; ``scores`` maps a feature matrix to values in [0, 1]."""

    kind = "base"
    mitigated = False
    degenerate = False
    needs_groups = False
    n_features: int = 0
    work = 0.0

    def scores(self, X: np.ndarray, groups: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def expected_decisions(self, X: np.ndarray, groups: np.ndarray | None = None) -> np.ndarray:
        """Probability of a positive decision per row (hard 0/1 for plain models)."""
        return (self.scores(X, groups) >= 0.5).astype(float)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _header(self) -> dict:
        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "mitigated": self.mitigated,
            "degenerate": self.degenerate,
        }


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


class ConstantModel(TrainedModel):
    kind = "constant"

    def __init__(self, value: float, n_features: int, degenerate: bool = True):
        self.value = float(value)
        self.n_features = n_features
        self.degenerate = degenerate

    def scores(self, X, groups=None):
        return np.full(X.shape[0], self.value)

    def to_dict(self):
        return {**self._header(), "value": self.value}


class LogisticModel(TrainedModel):
    kind = LOGISTIC

    def __init__(self, coef, intercept, mean, scale, iterations=0, grad_norm=0.0):
        self.coef = np.asarray(coef, dtype=float)
        self.intercept = float(intercept)
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.n_features = self.coef.shape[0]
        self.iterations = iterations
        self.grad_norm = grad_norm

    def decision_function(self, X):
        return ((X - self.mean) / self.scale) @ self.coef + self.intercept

    def scores(self, X, groups=None):
        return _sigmoid(self.decision_function(X))

    def to_dict(self):
        return {
            **self._header(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }


@dataclass
class Tree:
    """Flat binary tree; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    impurity: np.ndarray
    depth: int

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "impurity": self.impurity.tolist(),
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
            np.array(d["impurity"], dtype=float),
            int(d["depth"]),
        )


class TreeModel(TrainedModel):
    kind = TREE

    def __init__(self, tree: Tree, n_features: int):
        self.tree = tree
        self.n_features = n_features

    def scores(self, X, groups=None):
        return self.tree.predict(X)

    def to_dict(self):
        return {**self._header(), "tree": self.tree.to_dict()}


class BoostedModel(TrainedModel):
    kind = GBT

    def __init__(self, base: float, learning_rate: float, trees: list[Tree], n_features: int):
        self.base = float(base)
        self.learning_rate = float(learning_rate)
        self.trees = trees
        self.n_features = n_features

    def decision_function(self, X):
        F = np.full(X.shape[0], self.base)
        for tree in self.trees:
            F += self.learning_rate * tree.predict(X)
        return F

    def scores(self, X, groups=None):
        return _sigmoid(self.decision_function(X))

    def to_dict(self):
        return {
            **self._header(),
            "base": self.base,
            "learning_rate": self.learning_rate,
            "trees": [t.to_dict() for t in self.trees],
        }


class MixtureModel(TrainedModel):
    """Randomized classifier: member ``k`` is used with probability ``weights[k]``.

    Its score is the expected positive decision, so it is never sampled.
    """

    kind = "mixture"

    def __init__(self, members: Sequence[TrainedModel], weights: Sequence[float], mitigated=True):
        w = np.asarray(weights, dtype=float)
        if len(members) != len(w) or not len(w):
            raise ValueError("mixture needs one weight per member")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be a probability vector")
        self.members = list(members)
        self.weights = w / w.sum()
        self.mitigated = mitigated
        self.n_features = members[0].n_features
        self.needs_groups = any(m.needs_groups for m in members)

    def scores(self, X, groups=None):
        out = np.zeros(X.shape[0])
        for w, member in zip(self.weights, self.members):
            out += w * member.expected_decisions(X, groups)
        return out

    def expected_decisions(self, X, groups=None):
        return self.scores(X, groups)

    def to_dict(self):
        return {
            **self._header(),
            "weights": self.weights.tolist(),
            "members": [m.to_dict() for m in self.members],
        }


class GroupThresholdModel(TrainedModel):
    """Per-group randomized threshold rule on top of a base model's scores.

    Group ``g`` predicts positive with probability
    ``p_g * 1{s >= lo_g} + (1 - p_g) * 1{s >= hi_g}``.
    """

    kind = "group_threshold"
    needs_groups = True

    def __init__(self, base: TrainedModel, low, high, mix, mitigated=True, feasible=True):
        self.base = base
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.mix = np.asarray(mix, dtype=float)
        self.mitigated = mitigated
        self.feasible = feasible
        self.n_features = base.n_features

    def scores(self, X, groups=None):
        if groups is None:
            raise ValueError("group-threshold model needs the sensitive attribute at prediction time")
        groups = np.asarray(groups, dtype=np.int64)
        s = self.base.scores(X)
        lo, hi, p = self.low[groups], self.high[groups], self.mix[groups]
        return p * (s >= lo) + (1.0 - p) * (s >= hi)

    def expected_decisions(self, X, groups=None):
        return self.scores(X, groups)

    def to_dict(self):
        return {
            **self._header(),
            "feasible": self.feasible,
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "mix": self.mix.tolist(),
            "base": self.base.to_dict(),
        }


def model_to_json(model: TrainedModel) -> str:
    return json.dumps({"format": MODEL_FORMAT, "version": MODEL_VERSION, "model": model.to_dict()})


def _model_from_dict(d: Mapping) -> TrainedModel:
    kind = d["kind"]
    n_features = int(d["n_features"])
    if kind == "constant":
        model = ConstantModel(d["value"], n_features, d["degenerate"])
    elif kind == LOGISTIC:
        model = LogisticModel(d["coef"], d["intercept"], d["mean"], d["scale"])
    elif kind == TREE:
        model = TreeModel(Tree.from_dict(d["tree"]), n_features)
    elif kind == GBT:
        model = BoostedModel(d["base"], d["learning_rate"], [Tree.from_dict(t) for t in d["trees"]], n_features)
    elif kind == "mixture":
        model = MixtureModel([_model_from_dict(m) for m in d["members"]], d["weights"])
    elif kind == "group_threshold":
        model = GroupThresholdModel(_model_from_dict(d["base"]), d["low"], d["high"], d["mix"],
                                    feasible=d["feasible"])
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model.mitigated = bool(d["mitigated"])
    model.degenerate = bool(d["degenerate"])
    return model


def model_from_json(text: str) -> TrainedModel:
    payload = json.loads(text)
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError("not a serialized model")
    if payload.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model format version {payload.get('version')}")
    return _model_from_dict(payload["model"])


# ---------------------------------------------------------------------------
# prediction


def _check_columns(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-d")
    if X.shape[1] != model.n_features:
        raise ValueError(f"dimension mismatch: model has {model.n_features} features, input has {X.shape[1]}")
    return X


def predict_scores(model: TrainedModel, X: np.ndarray, groups: np.ndarray | None = None) -> np.ndarray:
    X = _check_columns(model, X)
    if X.shape[0] == 0:
        return np.zeros(0)
    return model.scores(X, groups)


def predict(model: TrainedModel, X: np.ndarray, threshold: float = 0.5,
            groups: np.ndarray | None = None) -> np.ndarray:
    """Hard decisions; a score equal to the threshold is a positive."""
    return (predict_scores(model, X, groups) >= threshold).astype(np.int64)


def expected_decisions(model: TrainedModel, X: np.ndarray, groups: np.ndarray | None = None) -> np.ndarray:
    X = _check_columns(model, X)
    if X.shape[0] == 0:
        return np.zeros(0)
    return model.expected_decisions(X, groups)


# ---------------------------------------------------------------------------
# training


def _bin_features(X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Map each column to small integer bins; return codes and split thresholds.

    Columns with at most ``_MAX_BINS`` distinct values split between every
    pair of neighbours, otherwise at quantiles.
    """
    n, d = X.shape
    codes = np.zeros((n, d), dtype=np.int64)
    edges = []
    for j in range(d):
        col = X[:, j]
        uniq = np.unique(col)
        if len(uniq) <= _MAX_BINS:
            cut = (uniq[:-1] + uniq[1:]) / 2.0
        else:
            qs = np.quantile(col, np.linspace(0, 1, _MAX_BINS + 1)[1:-1])
            cut = np.unique(qs)
        codes[:, j] = np.searchsorted(cut, col, side="left")
        edges.append(cut)
    return codes, edges


def _grow_tree(codes, edges, stat_a, stat_b, counts_w, max_depth, min_leaf, criterion, reg=1.0):
    """Level-wise tree growth on binned features.

    ``criterion == "gini"``: ``stat_a`` is positive weight, ``stat_b`` total weight.
    ``criterion == "newton"``: ``stat_a`` is weighted gradient, ``stat_b`` weighted hessian.
    """
    n, d = codes.shape
    nb = _MAX_BINS
    offsets = (np.arange(d) * nb)[None, :]
    flat_codes = codes + offsets        # n x d

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    node_a = [float(stat_a.sum())]
    node_b = [float(stat_b.sum())]
    impurity = [0.0]
    node_of = np.zeros(n, dtype=np.int64)
    frontier = [0]
    live = counts_w > 0
    levels = 0

    def impurity_of(a, b):
        if criterion == "gini":
            return 0.0 if b <= 0 else 2.0 * (a / b) * (1.0 - a / b)
        return 0.0

    impurity[0] = impurity_of(node_a[0], node_b[0])
    work = 0.0

    for depth in range(max_depth):
        if not frontier:
            break
        levels += 1
        work += n * d
        m = len(frontier)
        slot = np.full(len(feature), -1, dtype=np.int64)
        slot[frontier] = np.arange(m)
        row_slot = slot[node_of]
        active = (row_slot >= 0) & live
        rs = row_slot[active]
        idx = (rs[:, None] * (d * nb) + flat_codes[active]).ravel()
        size = m * d * nb
        A = np.bincount(idx, weights=np.repeat(stat_a[active], d), minlength=size).reshape(m, d, nb)
        B = np.bincount(idx, weights=np.repeat(stat_b[active], d), minlength=size).reshape(m, d, nb)
        C = np.bincount(idx, minlength=size).reshape(m, d, nb).astype(float)
        AL, BL, CL = A.cumsum(axis=2), B.cumsum(axis=2), C.cumsum(axis=2)
        At, Bt, Ct = AL[:, :, -1:], BL[:, :, -1:], CL[:, :, -1:]
        AR, BR, CR = At - AL, Bt - BL, Ct - CL
        with np.errstate(divide="ignore", invalid="ignore"):
            if criterion == "gini":
                imp = lambda a, b: np.where(b > 0, 2.0 * a * (b - a) / np.where(b > 0, b, 1.0), 0.0)
                gain = imp(At, Bt) - imp(AL, BL) - imp(AR, BR)
            else:
                score = lambda g, h: g * g / (h + reg)
                gain = score(AL, BL) + score(AR, BR) - score(At, Bt)
        valid = (CL >= min_leaf) & (CR >= min_leaf)
        for j in range(d):
            valid[:, j, len(edges[j]):] = False
        gain = np.where(valid, gain, -np.inf)
        flat = gain.reshape(m, -1)
        best = np.argmax(flat, axis=1)
        best_gain = flat[np.arange(m), best]

        next_frontier = []
        split_feature = np.full(len(feature), -1, dtype=np.int64)
        split_bin = np.zeros(len(feature), dtype=np.int64)
        for k, node in enumerate(frontier):
            if not np.isfinite(best_gain[k]) or best_gain[k] <= 1e-12:
                continue
            j, b = divmod(int(best[k]), nb)
            feature[node] = j
            threshold[node] = float(edges[j][b])
            for side_a, side_b in ((AL[k, j, b], BL[k, j, b]), (AR[k, j, b], BR[k, j, b])):
                child = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                node_a.append(float(side_a))
                node_b.append(float(side_b))
                impurity.append(impurity_of(float(side_a), float(side_b)))
                next_frontier.append(child)
            left[node], right[node] = len(feature) - 2, len(feature) - 1
            split_feature[node] = j
            split_bin[node] = b
        if not next_frontier:
            break
        f = split_feature[node_of]
        moving = f >= 0
        if moving.any():
            rows = np.flatnonzero(moving)
            go_left = codes[rows, f[rows]] <= split_bin[node_of[rows]]
            left_arr = np.asarray(left)
            right_arr = np.asarray(right)
            node_of[rows] = np.where(go_left, left_arr[node_of[rows]], right_arr[node_of[rows]])
        frontier = next_frontier

    a = np.asarray(node_a)
    b = np.asarray(node_b)
    if criterion == "gini":
        value = np.where(b > 0, a / np.where(b > 0, b, 1.0), 0.5)
    else:
        value = -a / (b + reg)
    tree = Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        value,
        np.asarray(impurity, dtype=float),
        levels,
    )
    return tree, work


def _fit_logistic(X, y, w, l2_reg, iterations, tol=1e-6):
    """Batch gradient descent with Armijo backtracking on weighted log-loss."""
    n, d = X.shape
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = np.hstack([(X - mean) / scale, np.ones((n, 1))])
    wn = w / w.sum()
    reg = np.full(d + 1, l2_reg)
    reg[-1] = 0.0

    def objective(beta):
        z = Z @ beta
        return float(wn @ (np.logaddexp(0.0, z) - y * z) + 0.5 * reg @ (beta * beta))

    def gradient(beta):
        return Z.T @ (wn * (_sigmoid(Z @ beta) - y)) + reg * beta

    beta = np.zeros(d + 1)
    f = objective(beta)
    step = 1.0
    it = 0
    g = gradient(beta)
    gnorm = float(np.linalg.norm(g))
    while it < iterations and gnorm >= tol:
        it += 1
        step = min(step * 2.0, 1e4)
        while True:
            candidate = beta - step * g
            fc = objective(candidate)
            if fc <= f - 0.5 * step * gnorm * gnorm or step < 1e-12:
                break
            step *= 0.5
        beta, f = candidate, fc
        g = gradient(beta)
        gnorm = float(np.linalg.norm(g))
    model = LogisticModel(beta[:-1], beta[-1], mean, scale, iterations=it, grad_norm=gnorm)
    model.work = float(it * n * d * 3)
    return model


def train(
    config: ConfigPoint,
    d: Dataset,
    weights: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> TrainedModel:
    """Fit the learner named by ``config`` minimizing weighted training loss.

    Rows with zero weight are ignored. If only one class carries weight the
    result is a constant predictor flagged ``degenerate``.
    """
    X = np.asarray(d.features, dtype=float)
    if np.isnan(X).any():
        raise ValueError("features contain missing values; impute before training")
    y = np.asarray(d.labels if targets is None else targets, dtype=float)
    n, n_features = X.shape
    if y.shape != (n,):
        raise ValueError("targets must have one entry per row")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or (w < 0).any():
            raise ValueError("weights must be non-negative with one entry per row")
        if not w.sum() > 0:
            raise ValueError("weights are all zero")
    keep = w > 0
    if not keep.all():
        X, y, w = X[keep], y[keep], w[keep]
    w = w * (len(w) / w.sum())
    classes = np.unique(y)
    if len(classes) < 2:
        model = ConstantModel(float(classes[0]) if len(classes) else 0.0, n_features)
        model.work = float(n)
        return model

    p = config.params
    if config.learner == LOGISTIC:
        model = _fit_logistic(X, y, w, float(p["l2_reg"]), int(p["iterations"]))
    elif config.learner == TREE:
        codes, edges = _bin_features(X)
        tree, work = _grow_tree(codes, edges, w * y, w, w, int(p["max_depth"]), int(p["min_leaf"]), "gini")
        model = TreeModel(tree, n_features)
        model.work = work
    elif config.learner == GBT:
        model = _fit_boosted(X, y, w, int(p["n_estimators"]), float(p["learning_rate"]),
                             int(p["max_depth"]), int(p["min_leaf"]))
    else:
        raise ValueError(f"unknown learner {config.learner!r}")
    return model


def _fit_boosted(X, y, w, n_estimators, learning_rate, max_depth, min_leaf):
    """Gradient boosting on log-loss with Newton leaf values."""
    codes, edges = _bin_features(X)
    rate = float(np.clip((w @ y) / w.sum(), 1e-6, 1 - 1e-6))
    base = math.log(rate / (1.0 - rate))
    F = np.full(X.shape[0], base)
    trees = []
    work = 0.0
    rows = np.arange(X.shape[0])
    for _ in range(n_estimators):
        prob = _sigmoid(F)
        grad = w * (prob - y)
        hess = w * prob * (1.0 - prob)
        tree, tw = _grow_tree(codes, edges, grad, hess, w, max_depth, min_leaf, "newton")
        work += tw + X.shape[0]
        trees.append(tree)
        # locate leaves on binned codes; thresholds are bin edges so this matches X
        F += learning_rate * tree.value[_apply_binned(tree, codes, edges, rows)]
    model = BoostedModel(base, learning_rate, trees, X.shape[1])
    model.work = work
    return model


def _apply_binned(tree: Tree, codes, edges, rows):
    node = np.zeros(codes.shape[0], dtype=np.int64)
    # bin index of each internal node's threshold, per feature
    bins = np.zeros(len(tree.feature), dtype=np.int64)
    for k, (f, t) in enumerate(zip(tree.feature, tree.threshold)):
        if f >= 0:
            bins[k] = int(np.searchsorted(edges[f], t))
    for _ in range(tree.depth):
        f = tree.feature[node]
        internal = f >= 0
        if not internal.any():
            break
        go_left = codes[rows, np.where(internal, f, 0)] <= bins[node]
        node = np.where(internal, np.where(go_left, tree.left[node], tree.right[node]), node)
    return node


def gini(labels: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Weighted Gini impurity ``1 - sum_k p_k^2`` of a binary label vector."""
    labels = np.asarray(labels, dtype=float)
    w = np.ones_like(labels) if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        return 0.0
    p = float(w @ labels) / total
    return 2.0 * p * (1.0 - p)


def simulated_cost(model: TrainedModel) -> float:
    """Deterministic cost proxy in abstract units (1 unit = 1e6 row-feature operations)."""
    return 1e-3 + _total_work(model) * 1e-6


def _total_work(model: TrainedModel) -> float:
    total = float(model.work)
    if isinstance(model, MixtureModel):
        total += sum(_total_work(m) for m in model.members)
    if isinstance(model, GroupThresholdModel):
        total += _total_work(model.base)
    return total
