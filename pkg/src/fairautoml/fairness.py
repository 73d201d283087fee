"""Group-fairness metrics and the fairness indicator.

All metrics take *expected* decisions in [0, 1], so randomized classifiers
are scored in expectation rather than by sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .learners import TrainedModel, expected_decisions

DP = "dp"
EO = "eo"
METRICS = (DP, EO)
DEFAULT_THRESHOLDS = (0.05, 0.01)


class FairnessError(ValueError):
    """A metric's group or (group, label) cell is empty."""


@dataclass(frozen=True)
class FairnessSpec:
    metric: str = DP
    sensitive: str = "group"
    delta: float = 0.05

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown fairness metric {self.metric!r}; expected one of {METRICS}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class FairnessReport:
    disparity: float
    fair: bool
    selection_rate: dict = field(default_factory=dict)
    tpr: dict = field(default_factory=dict)
    fpr: dict = field(default_factory=dict)


def _group_ids(groups, group_count):
    groups = np.asarray(groups, dtype=np.int64)
    if group_count is None:
        group_count = int(groups.max()) + 1 if groups.size else 0
    return groups, group_count


def _name(g, names):
    return names[g] if names is not None else g


def group_rates(decisions, groups, group_count=None, names=None) -> np.ndarray:
    decisions = np.asarray(decisions, dtype=float)
    groups, count = _group_ids(groups, group_count)
    if decisions.shape != groups.shape:
        raise ValueError("decisions and groups must have equal length")
    sizes = np.bincount(groups, minlength=count)
    for g in range(count):
        if sizes[g] == 0:
            raise FairnessError(f"empty group {_name(g, names)}")
    return np.bincount(groups, weights=decisions, minlength=count) / sizes


def _max_gap(rates: np.ndarray) -> float:
    return float(rates.max() - rates.min()) if rates.size else 0.0


def dp_difference(decisions, groups, group_count=None, names=None) -> float:
    """Largest pairwise gap in mean (expected) positive decision across groups."""
    return _max_gap(group_rates(decisions, groups, group_count, names))


def conditional_rates(decisions, labels, groups, group_count=None, names=None) -> np.ndarray:
    """``rates[y, g] = mean(decision | label y, group g)``."""
    decisions = np.asarray(decisions, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    groups, count = _group_ids(groups, group_count)
    if not decisions.shape == labels.shape == groups.shape:
        raise ValueError("decisions, labels and groups must have equal length")
    rates = np.zeros((2, count))
    for y in (0, 1):
        mask = labels == y
        sizes = np.bincount(groups[mask], minlength=count)
        for g in range(count):
            if sizes[g] == 0:
                raise FairnessError(f"empty cell ({_name(g, names)}, {y})")
        rates[y] = np.bincount(groups[mask], weights=decisions[mask], minlength=count) / sizes
    return rates


def eo_difference(decisions, labels, groups, group_count=None, names=None) -> float:
    """Largest pairwise gap in TPR or FPR across groups."""
    rates = conditional_rates(decisions, labels, groups, group_count, names)
    return max(_max_gap(rates[0]), _max_gap(rates[1]))


def disparity(metric: str, decisions, labels, groups, group_count=None, names=None) -> float:
    if metric == DP:
        return dp_difference(decisions, groups, group_count, names)
    if metric == EO:
        return eo_difference(decisions, labels, groups, group_count, names)
    raise ValueError(f"unknown fairness metric {metric!r}")


def check_cells(metric: str, d: Dataset) -> None:
    """Raise :class:`FairnessError` if ``d`` lacks a cell the metric needs."""
    zeros = np.zeros(d.rows)
    disparity(metric, zeros, d.labels, d.sensitive, d.group_count, d.group_names)


def decisions_on(model: TrainedModel, d: Dataset) -> np.ndarray:
    return expected_decisions(model, d.features, d.sensitive)


def expected_loss(decisions, labels) -> float:
    """``1 - expected accuracy``; equals ``1 - accuracy`` for hard decisions."""
    s = np.asarray(decisions, dtype=float)
    y = np.asarray(labels)
    if s.size == 0:
        return 0.0
    correct = np.where(y == 1, s, 1.0 - s)
    return float(1.0 - correct.mean())


def loss(model: TrainedModel, d: Dataset) -> float:
    return expected_loss(decisions_on(model, d), d.labels)


def report_from_decisions(decisions, d: Dataset, spec: FairnessSpec) -> FairnessReport:
    names = d.group_names
    rates = group_rates(decisions, d.sensitive, d.group_count, names)
    selection = {str(names[g]): float(r) for g, r in enumerate(rates)}
    tpr = fpr = {}
    if spec.metric == EO:
        cond = conditional_rates(decisions, d.labels, d.sensitive, d.group_count, names)
        fpr = {str(names[g]): float(r) for g, r in enumerate(cond[0])}
        tpr = {str(names[g]): float(r) for g, r in enumerate(cond[1])}
        value = max(_max_gap(cond[0]), _max_gap(cond[1]))
    else:
        value = _max_gap(rates)
    return FairnessReport(value, is_fair(value, spec.delta), selection, tpr, fpr)


def is_fair(value: float, delta: float) -> bool:
    return bool(value <= delta)


def assess(model: TrainedModel, d: Dataset, spec: FairnessSpec) -> FairnessReport:
    """Disparity of the model's expected decisions on ``d`` and the fairness indicator."""
    return report_from_decisions(decisions_on(model, d), d, spec)

