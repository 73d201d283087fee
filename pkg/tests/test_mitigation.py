from __future__ import annotations

import numpy as np
import pytest

from fairautoml.dataset import Dataset, make_synthetic_biased
from fairautoml.fairness import FairnessError, FairnessSpec, assess, dp_difference
from fairautoml.learners import ConfigPoint, ConstantModel, expected_decisions, train
from fairautoml.mitigation import (
    MitigatorKind,
    Moments,
    best_response,
    cost_adjustment,
    eg_reduce,
    grid_points,
    grid_reduce,
    mitigate,
    threshold_grid,
    threshold_postprocess,
    _dp_thresholds,
)

LR = ConfigPoint("lr", {"l2_reg": 1e-4, "iterations": 300})
DP05 = FairnessSpec("dp", "group", 0.05)


@pytest.fixture(scope="module")
def biased():
    return make_synthetic_biased(1000, 0.3, seed=0)


def test_dp_gradient_example():
    groups = np.array([0, 0, 1, 1])
    moments = Moments("dp", np.array([0, 1, 0, 1]), groups, 2)
    adj = cost_adjustment(moments, np.array([0.2, 0.0]))
    assert adj.tolist() == pytest.approx([0.2, 0.2, -0.2, -0.2], abs=1e-12)


def test_zero_multipliers_reproduce_plain_training(biased):
    moments = Moments("dp", biased.labels, biased.sensitive, 2)
    adj = cost_adjustment(moments, np.zeros(moments.count))
    assert np.array_equal(adj, np.zeros(biased.rows))
    plain = train(LR, biased)
    h = best_response(LR, biased, adj)
    assert np.array_equal(expected_decisions(plain, biased.features), expected_decisions(h, biased.features))


@pytest.mark.parametrize("kind", ["eg", "grid", "post"])
def test_each_mitigator_reduces_training_dp(biased, kind):
    plain_dp = assess(train(LR, biased), biased, DP05).disparity
    out = mitigate(MitigatorKind(kind), LR, biased, DP05)
    assert out.model.mitigated
    assert plain_dp > 0.15
    assert out.disparity <= 0.05 + 0.01
    assert assess(out.model, biased, DP05).disparity == pytest.approx(out.disparity, abs=1e-12)
    assert out.violation >= 0


def test_eg_mixture_and_oracle_calls(biased):
    out = eg_reduce(LR, biased, DP05, iterations=7)
    assert out.oracle_calls == 7
    assert abs(out.model.weights.sum() - 1.0) <= 1e-12


def test_eg_single_round_is_plain_training(biased):
    out = eg_reduce(LR, biased, DP05, iterations=1)
    plain = train(LR, biased)
    assert len(out.model.members) == 1
    assert np.array_equal(expected_decisions(out.model, biased.features),
                          expected_decisions(plain, biased.features))


def test_already_fair_data_stays_fair():
    d = make_synthetic_biased(600, 0.0, seed=3)
    X = d.features[:, :3]  # drop the group proxy so the plain model is near parity
    d = Dataset(X, d.labels, d.sensitive, d.feature_names[:3], d.group_names)
    plain = assess(train(LR, d), d, DP05).disparity
    for kind in ("eg", "grid", "post"):
        out = mitigate(MitigatorKind(kind), LR, d, DP05)
        assert out.disparity <= max(plain, 0.05) + 0.01


def test_eo_empty_cell_rejected():
    X = np.zeros((4, 1))
    d = Dataset(X, np.array([1, 0, 0, 0]), np.array([0, 0, 1, 1]), ("x",), ("a", "b"))
    for kind in ("eg", "grid", "post"):
        with pytest.raises(FairnessError):
            mitigate(MitigatorKind(kind), LR, d, FairnessSpec("eo", "group", 0.05))


def test_grid_construction():
    assert grid_points(3, 1.0, 1).ravel().tolist() == [-1.0, 0.0, 1.0]
    assert grid_points(5, 2.0, 2).shape == (25, 2)
    assert (grid_points(21, 1.0, 1) == 0).sum() == 1


def test_grid_needs_binary_groups():
    X = np.zeros((6, 1))
    d = Dataset(X, np.array([0, 1] * 3), np.array([0, 0, 1, 1, 2, 2]), ("x",), ("a", "b", "c"))
    with pytest.raises(ValueError, match="binary"):
        grid_reduce(LR, d, DP05)


def test_threshold_grid_resolution():
    assert threshold_grid(0.5).tolist() == [0.0, 0.5, 1.0]
    assert len(threshold_grid(0.01)) == 101


def test_postprocess_median_thresholds():
    scores = np.array([0.9, 0.7, 0.4, 0.1, 0.8, 0.6, 0.3, 0.2])
    labels = np.array([1, 1, 0, 0, 1, 1, 0, 0])
    groups = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    choice, feasible = _dp_thresholds(scores, labels, groups, 2, 0.0, threshold_grid(0.05))
    thresholds = threshold_grid(0.05)[choice]
    picked = np.array([scores[i] >= thresholds[groups[i]] for i in range(8)])
    assert feasible
    assert picked.sum() == 4
    assert dp_difference(picked.astype(float), groups) == 0.0


def test_postprocess_keeps_fair_base():
    d = make_synthetic_biased(400, 0.0, seed=1)
    out = threshold_postprocess(LR, d, FairnessSpec("dp", "group", 0.5))
    assert out.disparity <= 0.5


def test_mitigator_kind_validation():
    with pytest.raises(ValueError):
        MitigatorKind("eg", iterations=0)
    with pytest.raises(ValueError):
        MitigatorKind("grid", grid_size=4)
    with pytest.raises(ValueError):
        MitigatorKind("post", resolution=0.7)
    with pytest.raises(ValueError):
        MitigatorKind("eg", eg_bound=0)


def test_eo_mitigation_reduces_gap(biased):
    spec = FairnessSpec("eo", "group", 0.05)
    plain = assess(train(LR, biased), biased, spec).disparity
    for kind in ("eg", "post"):
        out = mitigate(MitigatorKind(kind), LR, biased, spec)
        assert out.disparity < plain
        assert out.disparity <= 0.06


def test_degenerate_best_response():
    d = Dataset(np.zeros((4, 1)), np.array([1, 1, 1, 0]), np.array([0, 1, 0, 1]), ("x",), ("a", "b"))
    h = best_response(LR, d, np.array([0.0, 0.0, 0.0, -2.0]))
    assert isinstance(h, ConstantModel)
