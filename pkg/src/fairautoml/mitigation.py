"""Unfairness mitigation procedures producing a fairness-pushed model.

The two reductions turn the constrained problem into a sequence of
cost-sensitive learner calls on reweighted, relabeled data; the
post-processor picks per-group thresholds on a fitted model's scores.
Everything is fitted on training data only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import product

import numpy as np

from .dataset import Dataset
from .fairness import DP, EO, FairnessSpec, check_cells, disparity, expected_loss
from .learners import (
    ConfigPoint,
    GroupThresholdModel,
    MixtureModel,
    TrainedModel,
    expected_decisions,
    train,
)

log = logging.getLogger(__name__)

EG = "eg"
GRID = "grid"
POST = "post"
MITIGATORS = (EG, GRID, POST)


@dataclass(frozen=True)
class MitigatorKind:
    """Mitigation method and its knobs.

    ``eg_bound`` and ``grid_bound`` cap the Lagrange multipliers of the two
    reductions; ``nu`` is the slack allowed when picking the final model.
    """

    name: str = EG
    iterations: int = 50
    eg_bound: float = 100.0
    eta: float = 2.0
    grid_size: int = 21
    grid_bound: float = 1.0
    resolution: float = 0.01
    nu: float = 0.01

    def __post_init__(self):
        if self.name not in MITIGATORS:
            raise ValueError(f"unknown mitigator {self.name!r}; expected one of {MITIGATORS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.eg_bound <= 0 or self.grid_bound <= 0:
            raise ValueError("multiplier bounds must be positive")
        if self.grid_size < 3 or self.grid_size % 2 == 0:
            raise ValueError("grid_size must be an odd integer >= 3")
        if not 0.0 < self.resolution <= 0.5:
            raise ValueError("resolution must lie in (0, 0.5]")


@dataclass
class MitigationOutcome:
    model: TrainedModel
    disparity: float
    violation: float
    oracle_calls: int
    feasible: bool = True


class Moments:
    """Signed-axis parity constraints ``mean(h | cell) - mean(h | reference) <= bound``.

    For DP a cell is a group and the reference is the whole sample; for EO
    a cell is a (label, group) pair and the reference is that label's rows.
    ``gradient[:, k]`` is the derivative of constraint ``k`` with respect to
    each row's decision, scaled by ``n`` to match the per-row error cost.
    """

    def __init__(self, metric: str, labels: np.ndarray, groups: np.ndarray, group_count: int):
        self.metric = metric
        labels = np.asarray(labels, dtype=np.int64)
        groups = np.asarray(groups, dtype=np.int64)
        n = len(labels)
        cells = []
        columns = []
        if metric == DP:
            for g in range(group_count):
                in_g = groups == g
                p = in_g.mean()
                cells.append((None, g))
                columns.append(in_g / p - 1.0)
        elif metric == EO:
            for y in (0, 1):
                with_y = labels == y
                n_y = with_y.sum()
                for g in range(group_count):
                    in_cell = with_y & (groups == g)
                    p = in_cell.sum() / n_y
                    cells.append((y, g))
                    columns.append(with_y * (n / n_y) * (in_cell / p - 1.0))
        else:
            raise ValueError(f"unknown fairness metric {metric!r}")
        self.cells = cells
        self.gradient = np.column_stack(columns)
        self._labels = labels
        self._groups = groups

    @property
    def count(self) -> int:
        return len(self.cells)

    def gamma(self, decisions: np.ndarray) -> np.ndarray:
        """Signed gap of each cell's mean decision from its reference mean."""
        decisions = np.asarray(decisions, dtype=float)
        out = np.empty(self.count)
        for k, (y, g) in enumerate(self.cells):
            ref = np.ones(len(decisions), dtype=bool) if y is None else self._labels == y
            out[k] = decisions[ref & (self._groups == g)].mean() - decisions[ref].mean()
        return out


def cost_adjustment(moments: Moments, signed_multipliers: np.ndarray) -> np.ndarray:
    """Per-row change in the cost of predicting 1 implied by the multipliers."""
    return moments.gradient @ np.asarray(signed_multipliers, dtype=float)


def best_response(config: ConfigPoint, d: Dataset, adjustment: np.ndarray) -> TrainedModel:
    """Cost-sensitive oracle call: weights |c1 - c0|, targets 1{c1 < c0}."""
    y = d.labels
    cost1 = (y == 0).astype(float) + adjustment
    cost0 = (y == 1).astype(float)
    diff = cost1 - cost0
    weights = np.abs(diff)
    if not weights.sum() > 0:
        weights = np.ones_like(weights)
    return train(config, d, weights=weights, targets=(diff < 0).astype(np.int64))


def _train_disparity(metric, decisions, d: Dataset) -> float:
    return disparity(metric, decisions, d.labels, d.sensitive, d.group_count, d.group_names)


def _select(losses, gaps, limit) -> int:
    """Lowest loss within ``limit``; otherwise the smallest gap. Earliest wins ties."""
    losses = np.asarray(losses)
    gaps = np.asarray(gaps)
    ok = np.flatnonzero(gaps <= limit)
    if ok.size:
        return int(ok[np.argmin(losses[ok])])
    return int(np.argmin(gaps))


def _multipliers(theta: np.ndarray, bound: float) -> np.ndarray:
    # bound * exp(theta) / (1 + sum exp(theta)), computed stably
    top = max(0.0, float(theta.max()))
    e = np.exp(theta - top)
    return bound * e / (np.exp(-top) + e.sum())


def eg_reduce(
    config: ConfigPoint,
    d: Dataset,
    spec: FairnessSpec,
    iterations: int = 50,
    bound: float = 100.0,
    eta: float = 2.0,
    nu: float = 0.01,
) -> MitigationOutcome:
    """Exponentiated-gradient reduction returning a uniform mixture of best responses.

    Each signed constraint is held to ``delta / 2`` against its reference
    mean, which keeps every pairwise gap within ``delta``. The returned
    mixture is the prefix average with the lowest training loss whose gap is
    within ``delta + nu`` (or the least-violating prefix).
    """
    check_cells(spec.metric, d)
    moments = Moments(spec.metric, d.labels, d.sensitive, d.group_count)
    k = moments.count
    target = spec.delta / 2.0
    theta = np.zeros(2 * k)
    members: list[TrainedModel] = []
    total = np.zeros(d.rows)
    losses, gaps = [], []
    magnitude = first = 0.0
    for t in range(1, iterations + 1):
        lam = _multipliers(theta, bound)
        h = best_response(config, d, cost_adjustment(moments, lam[:k] - lam[k:]))
        members.append(h)
        dec = expected_decisions(h, d.features, d.sensitive)
        total += dec
        avg = total / t
        losses.append(expected_loss(avg, d.labels))
        gaps.append(_train_disparity(spec.metric, avg, d))
        gamma = moments.gamma(dec)
        excess = np.concatenate([gamma, -gamma]) - target
        # the step grows as the running mean violation shrinks below its first value
        magnitude += (float(np.abs(excess).max()) - magnitude) / t
        if t == 1:
            first = magnitude
        theta += (eta / bound) * excess * (first / max(magnitude, 1e-3))
    best = _select(losses, gaps, spec.delta + nu)
    chosen = members[: best + 1]
    model = MixtureModel(chosen, np.full(len(chosen), 1.0 / len(chosen)))
    gap = float(gaps[best])
    log.debug("eg: %d rounds, prefix %d chosen, train gap %.4f", iterations, best + 1, gap)
    return MitigationOutcome(model, gap, max(0.0, gap - spec.delta), iterations, gap <= spec.delta + nu)


def grid_points(size: int, bound: float, axes: int) -> np.ndarray:
    line = np.linspace(-bound, bound, size)
    line[size // 2] = 0.0
    return np.array(list(product(line, repeat=axes)))


def grid_reduce(
    config: ConfigPoint,
    d: Dataset,
    spec: FairnessSpec,
    size: int = 21,
    bound: float = 1.0,
    nu: float = 0.01,
) -> MitigationOutcome:
    """Grid search over the multiplier of the first group's constraint(s).

    Binary sensitive attributes only. DP searches one axis; EO searches the
    (label 0, label 1) plane.
    """
    if d.group_count != 2:
        raise ValueError("grid reduction needs a binary sensitive attribute")
    check_cells(spec.metric, d)
    moments = Moments(spec.metric, d.labels, d.sensitive, d.group_count)
    # group-0 cells: DP -> column 0; EO -> (y=0, g=0) and (y=1, g=0)
    cols = [0] if spec.metric == DP else [0, 2]
    gradient = moments.gradient[:, cols]
    points = grid_points(size, bound, len(cols))
    models, losses, gaps = [], [], []
    for point in points:
        h = best_response(config, d, gradient @ point)
        dec = expected_decisions(h, d.features, d.sensitive)
        models.append(h)
        losses.append(expected_loss(dec, d.labels))
        gaps.append(_train_disparity(spec.metric, dec, d))
    best = _select(losses, gaps, spec.delta + nu)
    model = models[best]
    model.mitigated = True
    gap = float(gaps[best])
    return MitigationOutcome(model, gap, max(0.0, gap - spec.delta), len(points), gap <= spec.delta + nu)


def threshold_grid(resolution: float) -> np.ndarray:
    steps = int(round(1.0 / resolution))
    grid = np.arange(steps + 1) * resolution
    grid[-1] = 1.0
    return np.unique(np.minimum(grid, 1.0))


def _dp_thresholds(scores, labels, groups, group_count, delta, grid):
    """Exact search over per-group thresholds whose selection rates lie in a window of width delta."""
    sel = scores[:, None] >= grid[None, :]                     # n x T
    rates = np.zeros((group_count, len(grid)))
    correct = np.zeros((group_count, len(grid)))
    for g in range(group_count):
        m = groups == g
        rates[g] = sel[m].mean(axis=0)
        y = labels[m][:, None]
        correct[g] = np.where(y == 1, sel[m], ~sel[m]).sum(axis=0)
    best_total, best_choice = -np.inf, None
    for low in np.unique(rates):
        inside = (rates >= low - 1e-12) & (rates <= low + delta + 1e-12)
        if not inside.any(axis=1).all():
            continue
        masked = np.where(inside, correct, -np.inf)
        choice = masked.argmax(axis=1)
        total = masked[np.arange(group_count), choice].sum()
        if total > best_total + 1e-9:
            best_total, best_choice = total, choice
    if best_choice is None:
        # identical-rate fallback: threshold zero everywhere always satisfies any delta
        return np.zeros(group_count, dtype=np.int64), False
    return best_choice, True


def _eo_rules(scores, labels, grid, resolution):
    """Enumerate two-threshold randomized rules for one group.

    Returns (low index, high index, mix, tpr, fpr, expected correct).
    """
    sel = (scores[:, None] >= grid[None, :]).astype(float)
    pos = labels == 1
    n_pos, n_neg = max(pos.sum(), 1), max((~pos).sum(), 1)
    tpr_t = sel[pos].sum(axis=0) / n_pos
    fpr_t = sel[~pos].sum(axis=0) / n_neg
    correct_t = sel[pos].sum(axis=0) + (1.0 - sel[~pos]).sum(axis=0)
    lo, hi = np.triu_indices(len(grid))
    mixes = threshold_grid(resolution)
    p = np.repeat(mixes[None, :], len(lo), axis=0).ravel()
    lo_r = np.repeat(lo, len(mixes))
    hi_r = np.repeat(hi, len(mixes))
    tpr = p * tpr_t[lo_r] + (1 - p) * tpr_t[hi_r]
    fpr = p * fpr_t[lo_r] + (1 - p) * fpr_t[hi_r]
    correct = p * correct_t[lo_r] + (1 - p) * correct_t[hi_r]
    return lo_r, hi_r, p, tpr, fpr, correct


def _window_max(cell_best: np.ndarray, width: int) -> np.ndarray:
    """Max over each ``width x width`` block anchored at (a, b)."""
    out = np.full_like(cell_best, -np.inf)
    na, nb = cell_best.shape
    for da in range(width):
        for db in range(width):
            out[: na - da, : nb - db] = np.maximum(out[: na - da, : nb - db], cell_best[da:, db:])
    return out


def _eo_thresholds(scores, labels, groups, group_count, delta, grid, resolution):
    split = 4
    cell = delta / split
    cells_per_axis = int(np.floor(1.0 / cell)) + 1
    per_group = []
    window_total = np.zeros((cells_per_axis, cells_per_axis))
    for g in range(group_count):
        m = groups == g
        rules = _eo_rules(scores[m], labels[m], grid, resolution)
        tpr, fpr, correct = rules[3], rules[4], rules[5]
        a = np.minimum((tpr / cell).astype(np.int64), cells_per_axis - 1)
        b = np.minimum((fpr / cell).astype(np.int64), cells_per_axis - 1)
        flat = a * cells_per_axis + b
        best = np.full(cells_per_axis * cells_per_axis, -np.inf)
        np.maximum.at(best, flat, correct)
        window = _window_max(best.reshape(cells_per_axis, cells_per_axis), split)
        window_total = window_total + window
        per_group.append((rules, a, b))
    if np.isfinite(window_total).any():
        wa, wb = np.unravel_index(int(np.argmax(window_total)), window_total.shape)
        feasible = True
    else:
        wa = wb = None
        feasible = False
    chosen = []
    for rules, a, b in per_group:
        lo_r, hi_r, p, tpr, fpr, correct = rules
        if feasible:
            inside = (a >= wa) & (a < wa + split) & (b >= wb) & (b < wb + split)
            idx = int(np.flatnonzero(inside)[np.argmax(correct[inside])])
        else:
            idx = int(np.argmax(correct))
        chosen.append((grid[lo_r[idx]], grid[hi_r[idx]], p[idx]))
    return chosen, feasible


def threshold_postprocess(
    config: ConfigPoint,
    d: Dataset,
    spec: FairnessSpec,
    resolution: float = 0.01,
    nu: float = 0.01,
) -> MitigationOutcome:
    """Fit the plain model, then per-group decision rules on its training scores.

    DP uses one threshold per group; EO uses a per-group randomized mix of
    two thresholds. The rule maximizing expected training accuracy among
    those meeting the constraint is kept.
    """
    check_cells(spec.metric, d)
    base = train(config, d)
    scores = base.scores(d.features)
    grid = threshold_grid(resolution)
    labels, groups, count = d.labels, d.sensitive, d.group_count
    if spec.metric == DP:
        choice, feasible = _dp_thresholds(scores, labels, groups, count, spec.delta, grid)
        low = high = grid[choice]
        mix = np.ones(count)
    else:
        rules, feasible = _eo_thresholds(scores, labels, groups, count, spec.delta, grid, resolution)
        low = np.array([r[0] for r in rules])
        high = np.array([r[1] for r in rules])
        mix = np.array([r[2] for r in rules])
    model = GroupThresholdModel(base, low, high, mix, feasible=feasible)
    dec = expected_decisions(model, d.features, d.sensitive)
    gap = _train_disparity(spec.metric, dec, d)
    return MitigationOutcome(model, gap, max(0.0, gap - spec.delta), 1, feasible)


def mitigate(kind: MitigatorKind, config: ConfigPoint, d: Dataset, spec: FairnessSpec) -> MitigationOutcome:
    if kind.name == EG:
        return eg_reduce(config, d, spec, kind.iterations, kind.eg_bound, kind.eta, kind.nu)
    if kind.name == GRID:
        return grid_reduce(config, d, spec, kind.grid_size, kind.grid_bound, kind.nu)
    if kind.name == POST:
        return threshold_postprocess(config, d, spec, kind.resolution, kind.nu)
    raise ValueError(f"unknown mitigator {kind.name!r}")
