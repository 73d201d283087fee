from __future__ import annotations

import math

import pytest

from fairautoml.dataset import make_synthetic_biased, split
from fairautoml.fairness import FairnessSpec
from fairautoml.hpsearch import ScriptedSearcher, SearcherKind, make_searcher
from fairautoml.learners import ConfigPoint, default_space
from fairautoml.mitigation import MitigatorKind
from fairautoml.runner import (
    FAILED_COST,
    Budget,
    DataEvaluator,
    PostStrategy,
    SimEntry,
    SimTable,
    TableError,
    TableEvaluator,
    breakdown,
    classify,
    load_table,
    make_strategy,
    run,
    save_table,
    scenario_table,
    table_from_dict,
    table_searcher,
)
from fairautoml.scheduler import TrialRecord


def table(rows, order=()):
    return SimTable(tuple(SimEntry(f"c{i}", *row) for i, row in enumerate(rows)), tuple(order))


def run_table(t, strategy, budget, seed=0, delta=0.05, workers=1):
    return run(TableEvaluator(t, delta), make_strategy(strategy, table_searcher(t, seed)), budget, workers)


def test_budget_overshoot_example():
    t = table([(0.2, 0.0, 40, 0.2, 0.0, 50), (0.2, 0.0, 35, 0.2, 0.0, 50), (0.2, 0.0, 30, 0.2, 0.0, 50)],
              order=[0, 1, 2])
    r = run_table(t, "hpo", 100)
    assert [e.record.cost for e in r.events] == [40, 35, 30]
    assert r.budget.consumed == 105
    assert r.budget.consumed - r.budget.total <= r.events[-1].record.cost


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget(0)
    with pytest.raises(ValueError):
        run_table(scenario_table("s1"), "fair", 10, workers=0)


def rec(i, name, m, cost, loss, fair):
    return TrialRecord(i, ConfigPoint("sim", {"id": name}), m, cost, loss, 0.0 if fair else 0.2, fair)


def test_breakdown_example():
    records = [rec(0, "a", 0, 3.0, 0.3, False), rec(1, "a", 1, 9.0, 0.32, True), rec(2, "b", 1, 7.0, 0.25, False)]
    assert classify(records) == ["hpo", "effective", "wasted"]
    b = breakdown(records)
    assert (b.hpo, b.effective, b.wasted) == (3.0, 9.0, 7.0)


def test_breakdown_m1_not_improving_is_wasted():
    records = [rec(0, "a", 0, 1.0, 0.1, True), rec(1, "b", 0, 1.0, 0.2, False), rec(2, "b", 1, 5.0, 0.15, True)]
    assert classify(records) == ["hpo", "hpo", "wasted"]


def test_hpo_only_breakdown():
    r = run_table(scenario_table("s2", seed=1), "hpo", 100)
    assert r.breakdown.effective == r.breakdown.wasted == 0
    assert r.breakdown.hpo == pytest.approx(r.budget.consumed, abs=1e-9)
    assert all(e.record.m == 0 for e in r.events)


def test_malways_pairs_each_suggestion():
    r = run_table(scenario_table("s1", seed=2), "malways", 800)
    recs = [e.record for e in r.events]
    for k in range(0, len(recs) - 1, 2):
        assert (recs[k].m, recs[k + 1].m) == (0, 1)
        assert recs[k].config == recs[k + 1].config


def test_mpost_example():
    strategy = PostStrategy(table_searcher(table([(0.1, 0, 1, 0.1, 0, 1)] * 1), 0))
    for i, (name, loss, fair) in enumerate([("c3", 0.12, False), ("c1", 0.15, False), ("c2", 0.10, True)]):
        strategy.history.append(rec(i, name, 0, 100.0, loss, fair))
    budget = Budget(600, 310)
    config, m, gate = strategy.suggest(budget, budget.left, [])
    assert (config.params["id"], m) == ("c3", 1)
    config, m, _ = strategy.suggest(Budget(600, 200), 400, [])
    assert m == 0


def test_mpost_switches_at_half_budget():
    r = run_table(scenario_table("s2", seed=3), "mpost", 600)
    consumed = 0.0
    for e in r.events:
        if e.record.m == 1:
            assert consumed >= 300
        consumed += e.record.cost


def test_no_fair_entry_reports_none_but_keeps_best():
    t = table([(0.2, 0.3, 1, 0.3, 0.3, 2), (0.1, 0.3, 1, 0.2, 0.3, 2)])
    r = run_table(t, "fair", 30)
    assert not r.found_fair and r.best_fair is None
    assert r.best.loss == 0.1


def test_parallel_ties_resolve_by_issue_index():
    t = table([(0.2, 0.0, 1.0, 0.2, 0.0, 1.0)] * 1 + [(0.3, 0.0, 1.0, 0.3, 0.0, 1.0)] * 5)
    r = run_table(t, "hpo", 10, workers=2)
    issues = [e.record.issue for e in r.events]
    assert issues == sorted(issues)


def test_equal_costs_parallel_accounting():
    t = table([(0.1 + 0.01 * i, 0.0, 2.0, 0.2, 0.0, 2.0) for i in range(8)])
    par = run_table(t, "hpo", 10, workers=2)
    seq = run_table(t, "hpo", 20)
    assert len(par.events) == len(seq.events) == 10
    assert par.budget.consumed == seq.budget.consumed == 20.0


def test_fair_never_mitigates_unseen_config():
    for seed in range(5):
        r = run_table(scenario_table("s2", seed=seed), "fair", 400, seed=seed, workers=2)
        seen = set()
        for e in r.events:  # completion order: a plain result must already be in when (c, 1) completes
            if e.record.m == 1:
                assert e.record.config.key in seen
            else:
                seen.add(e.record.config.key)


def test_sequential_determinism():
    t = scenario_table("s2", seed=4)
    a = [(e.record, e.gate) for e in run_table(t, "fair", 500, seed=4).events]
    b = [(e.record, e.gate) for e in run_table(t, "fair", 500, seed=4).events]
    assert a == b


def test_s1_fair_wastes_less():
    t = scenario_table("s1", seed=0)
    fair = run_table(t, "fair", 2000)
    always = run_table(t, "malways", 2000)
    assert fair.breakdown.wasted <= 0.5 * always.breakdown.wasted


def test_s2_fair_finds_fair_model():
    t = scenario_table("s2", seed=0)
    assert not run_table(t, "hpo", 1000).found_fair
    assert run_table(t, "fair", 1000).found_fair


def test_mashp_uses_both_modes():
    r = run_table(scenario_table("s2", seed=5), "mashp", 2000, seed=5)
    assert {e.record.m for e in r.events} == {0, 1}


def test_table_file_round_trip(tmp_path):
    t = scenario_table("s1", size=5, seed=1)
    t = SimTable(t.entries, (3, 1))
    path = tmp_path / "t.json"
    save_table(t, path)
    assert load_table(path) == t


def test_table_errors(tmp_path):
    with pytest.raises(TableError):
        table_from_dict({"entries": []})
    with pytest.raises(TableError, match="entry 0"):
        table_from_dict({"entries": [{"id": "a", "loss0": 0.1}]})
    with pytest.raises(TableError, match="unknown id"):
        table_from_dict({"entries": [dict(id="a", loss0=0, disparity0=0, cost0=1, loss1=0, disparity1=0, cost1=1)],
                         "order": ["b"]})
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(TableError, match="not valid JSON"):
        load_table(bad)
    with pytest.raises(ValueError):
        scenario_table("s3")


@pytest.fixture(scope="module")
def small_split():
    return split(make_synthetic_biased(400, 0.3, seed=0), 0.3, seed=0)


def test_failed_trial_recorded_and_loop_continues(small_split):
    bad = ConfigPoint("nonexistent", {})
    good = ConfigPoint("lr", {"l2_reg": 1e-3, "iterations": 50})
    searcher = ScriptedSearcher([bad, good], order=[0, 1], seed=0)
    ev = DataEvaluator(small_split, FairnessSpec("dp", "group", 0.05), MitigatorKind("post"), "simulated")
    r = run(ev, make_strategy("hpo", searcher), 0.05)
    first = r.events[0]
    assert first.record.failed and first.record.cost == FAILED_COST
    assert math.isinf(first.record.loss) and "error" in first.gate
    assert len(r.events) >= 2 and not r.events[1].record.failed
    assert r.best.config == good


@pytest.mark.parametrize("strategy", ["fair", "hpo", "malways", "mashp", "mpost"])
def test_data_run_simulated_costs(small_split, strategy):
    ev = DataEvaluator(small_split, FairnessSpec("dp", "group", 0.05), MitigatorKind("eg", iterations=10), "simulated")
    searcher = make_searcher(default_space("single"), SearcherKind("local", 0))
    r = run(ev, make_strategy(strategy, searcher), 0.5)
    assert r.events
    assert r.budget.consumed == pytest.approx(sum(e.record.cost for e in r.events), rel=1e-12)
    assert r.best_model is not None
    if r.found_fair:
        assert r.best_fair_model is not None


def test_unknown_strategy_and_cost_mode(small_split):
    with pytest.raises(ValueError, match="unknown strategy"):
        make_strategy("nope", table_searcher(scenario_table("s1"), 0))
    with pytest.raises(ValueError, match="cost mode"):
        DataEvaluator(small_split, FairnessSpec("dp", "group", 0.05), MitigatorKind("eg"), "cpu")
