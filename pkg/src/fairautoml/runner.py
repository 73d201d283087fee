"""The budgeted trial loop, its strategies, evaluators and resource breakdown.

A run repeatedly asks a strategy for a (config, m) pair, evaluates it, and
feeds the resulting record back, until the budget is spent. Evaluation is
either real (train and validate on a split dataset) or a lookup in a
simulation table. With several workers, trials overlap: a suggestion is made
from whatever results have completed so far.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .dataset import SplitDataset
from .fairness import FairnessSpec, check_cells, decisions_on, expected_loss, report_from_decisions
from .hpsearch import ScriptedSearcher, Searcher, feasibility_rank
from .learners import ConfigPoint, TrainedModel, simulated_cost, train
from .mitigation import MitigatorKind, mitigate
from .scheduler import FairSearcher, TrialHistory, TrialRecord, select_candidate

log = logging.getLogger("fairautoml")

FAIR = "fair"
HPO = "hpo"
MALWAYS = "malways"
MASHP = "mashp"
MPOST = "mpost"
STRATEGIES = (FAIR, HPO, MALWAYS, MASHP, MPOST)

WALL = "wall"
SIMULATED = "simulated"
COST_MODES = (WALL, SIMULATED)

SIM_LEARNER = "sim"
FAILED_COST = 1e-3


class TableError(ValueError):
    pass


@dataclass
class Budget:
    total: float
    consumed: float = 0.0

    def __post_init__(self):
        if not self.total > 0:
            raise ValueError(f"budget must be positive, got {self.total}")

    @property
    def left(self) -> float:
        return self.total - self.consumed

    def spend(self, cost: float) -> None:
        self.consumed += cost


# -- simulation tables ---------------------------------------------------------

@dataclass(frozen=True)
class SimEntry:
    id: str
    loss0: float
    disparity0: float
    cost0: float
    loss1: float
    disparity1: float
    cost1: float

    def __post_init__(self):
        if not (self.cost0 > 0 and self.cost1 > 0):
            raise TableError(f"entry {self.id!r}: costs must be positive")


@dataclass(frozen=True)
class SimTable:
    entries: tuple[SimEntry, ...]
    order: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.entries:
            raise TableError("simulation table has no entries")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise TableError("simulation table config ids must be unique")
        for i in self.order:
            if not 0 <= i < len(self.entries):
                raise TableError(f"order index {i} out of range")

    def config(self, index: int) -> ConfigPoint:
        return ConfigPoint(SIM_LEARNER, {"id": self.entries[index].id})

    def configs(self) -> list[ConfigPoint]:
        return [self.config(i) for i in range(len(self.entries))]

    def to_dict(self) -> dict:
        entries = [dict(e.__dict__) for e in self.entries]
        ids = [e.id for e in self.entries]
        return {"entries": entries, "order": [ids[i] for i in self.order]}


_ENTRY_FIELDS = ("loss0", "disparity0", "cost0", "loss1", "disparity1", "cost1")


def table_from_dict(data: Any) -> SimTable:
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise TableError("simulation table must be an object with an 'entries' list")
    entries = []
    for k, raw in enumerate(data["entries"]):
        if not isinstance(raw, dict) or "id" not in raw:
            raise TableError(f"entry {k}: object with an 'id' expected")
        try:
            values = {f: float(raw[f]) for f in _ENTRY_FIELDS}
        except (KeyError, TypeError, ValueError):
            raise TableError(f"entry {k}: fields {', '.join(_ENTRY_FIELDS)} must be numbers") from None
        entries.append(SimEntry(str(raw["id"]), **values))
    position = {e.id: i for i, e in enumerate(entries)}
    order = []
    for ref in data.get("order", []):
        if str(ref) not in position:
            raise TableError(f"order refers to unknown id {ref!r}")
        order.append(position[str(ref)])
    return SimTable(tuple(entries), tuple(order))


def load_table(path: str | Path) -> SimTable:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TableError(f"{path}: not valid JSON ({exc})") from None
    return table_from_dict(data)


def save_table(table: SimTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(table.to_dict(), indent=1) + "\n", encoding="utf-8")


def scenario_table(scenario: str, size: int = 40, seed: int = 0, delta: float = 0.05) -> SimTable:
    """Random tables for the two stress scenarios.

    ``"s1"``: mitigation never helps (every mitigated entry is unfair and
    worse than any plain loss). ``"s2"``: no plain entry is fair, while
    some mitigated entries are.
    """
    rng = np.random.default_rng(seed)
    loss0 = rng.uniform(0.10, 0.30, size)
    cost0 = rng.uniform(1.0, 10.0, size)
    cost1 = cost0 * rng.uniform(5.0, 30.0, size)
    if scenario == "s1":
        disparity0 = rng.uniform(0.0, 3 * delta, size)
        # a steady accuracy cost that leaves every mitigated loss above every plain loss
        loss1 = loss0 + rng.uniform(0.21, 0.25, size)
        disparity1 = rng.uniform(1.01 * delta, 3 * delta, size)
    elif scenario == "s2":
        disparity0 = rng.uniform(1.5 * delta, 6 * delta, size)
        loss1 = loss0 + rng.uniform(0.0, 0.05, size)
        disparity1 = np.where(rng.random(size) < 0.5, rng.uniform(0.0, delta, size),
                              rng.uniform(1.01 * delta, 3 * delta, size))
    else:
        raise ValueError(f"unknown scenario {scenario!r}; expected 's1' or 's2'")
    entries = tuple(
        SimEntry(f"c{i}", *(float(v) for v in row))
        for i, row in enumerate(zip(loss0, disparity0, cost0, loss1, disparity1, cost1))
    )
    return SimTable(entries)


# -- evaluators ----------------------------------------------------------------

@dataclass
class Outcome:
    loss: float
    disparity: float
    fair: bool
    cost: float
    failed: bool = False
    model: TrainedModel | None = None
    error: str | None = None


class TableEvaluator:
    """Looks trial results up in a simulation table."""

    def __init__(self, table: SimTable, delta: float):
        self.table = table
        self.delta = delta
        self._index = {c.key: i for i, c in enumerate(table.configs())}

    def evaluate(self, config: ConfigPoint, m: int) -> Outcome:
        e = self.table.entries[self._index[config.key]]
        loss, disparity, cost = (e.loss0, e.disparity0, e.cost0) if m == 0 else (e.loss1, e.disparity1, e.cost1)
        return Outcome(loss, disparity, disparity <= self.delta, cost)


class DataEvaluator:
    """Trains (optionally with mitigation) on the train split, scores on validation.

    ``cost_mode`` ``"wall"`` charges elapsed seconds; ``"simulated"`` charges
    deterministic work units so runs are exactly repeatable.
    """

    def __init__(self, data: SplitDataset, spec: FairnessSpec, mitigator: MitigatorKind,
                 cost_mode: str = WALL):
        if cost_mode not in COST_MODES:
            raise ValueError(f"unknown cost mode {cost_mode!r}; expected one of {COST_MODES}")
        check_cells(spec.metric, data.train)
        check_cells(spec.metric, data.val)
        self.data = data
        self.spec = spec
        self.mitigator = mitigator
        self.cost_mode = cost_mode

    def evaluate(self, config: ConfigPoint, m: int) -> Outcome:
        start = time.perf_counter()
        try:
            if m == 0:
                model = train(config, self.data.train)
            else:
                model = mitigate(self.mitigator, config, self.data.train, self.spec).model
            decisions = decisions_on(model, self.data.val)
            loss = expected_loss(decisions, self.data.val.labels)
            report = report_from_decisions(decisions, self.data.val, self.spec)
        except Exception as exc:  # a crashing trial is recorded, not fatal
            elapsed = time.perf_counter() - start
            log.warning("trial %s (m=%d) failed: %s", config.key, m, exc)
            cost = max(elapsed, 1e-9) if self.cost_mode == WALL else FAILED_COST
            return Outcome(math.inf, math.inf, False, cost, failed=True, error=str(exc))
        elapsed = time.perf_counter() - start
        cost = max(elapsed, 1e-9) if self.cost_mode == WALL else simulated_cost(model)
        return Outcome(loss, report.disparity, report.fair, cost, model=model)


# -- strategies ----------------------------------------------------------------

class Strategy:
    """Base: owns the history and the plain searcher."""

    name = ""

    def __init__(self, searcher: Searcher):
        self.searcher = searcher
        self.history = TrialHistory()

    def suggest(self, budget: Budget, left: float, in_flight: Sequence[tuple[ConfigPoint, int]]):
        raise NotImplementedError

    def update(self, record: TrialRecord) -> None:
        self.history.append(record)
        self.searcher.update(self.history.h0)


class FairStrategy(Strategy):
    name = FAIR

    def __init__(self, searcher: Searcher):
        super().__init__(searcher)
        self.fair = FairSearcher(searcher)
        self.history = self.fair.history

    def suggest(self, budget, left, in_flight):
        busy = [c.key for c, m in in_flight if m == 1]
        config, m, gate = self.fair.suggest(left, busy)
        return config, m, gate.to_dict()

    def update(self, record):
        self.fair.update(record)


class HpoStrategy(Strategy):
    name = HPO

    def suggest(self, budget, left, in_flight):
        return self.searcher.suggest(), 0, {"branch": "search"}


class AlwaysStrategy(Strategy):
    """Every plain trial is followed by the mitigated trial of the same config."""

    name = MALWAYS

    def __init__(self, searcher):
        super().__init__(searcher)
        self._pending: ConfigPoint | None = None

    def suggest(self, budget, left, in_flight):
        if self._pending is not None:
            config, self._pending = self._pending, None
            return config, 1, {"branch": "mitigate:paired"}
        config = self.searcher.suggest()
        self._pending = config
        return config, 0, {"branch": "search"}


class JointStrategy(Strategy):
    """Mitigation as one more categorical coordinate, ranked feasibility-first."""

    name = MASHP

    def __init__(self, searcher):
        super().__init__(searcher)
        searcher.rank = feasibility_rank

    def suggest(self, budget, left, in_flight):
        config, m = self.searcher.mashp_suggest()
        return config, m, {"branch": "joint"}

    def update(self, record):
        self.history.append(record)
        self.searcher.update(self.history.records)


class PostStrategy(Strategy):
    """Plain search for the first half of the budget, then mitigate in loss order."""

    name = MPOST

    def suggest(self, budget, left, in_flight):
        if budget.consumed >= budget.total / 2:
            busy = [c.key for c, m in in_flight if m == 1]
            candidate = select_candidate(self.history, busy)
            if candidate is not None:
                return candidate.config, 1, {"branch": "mitigate:post", "candidate": candidate.config.key}
            return self.searcher.suggest(), 0, {"branch": "search:no-candidate"}
        return self.searcher.suggest(), 0, {"branch": "search"}


_STRATEGY_TYPES = {s.name: s for s in (FairStrategy, HpoStrategy, AlwaysStrategy, JointStrategy, PostStrategy)}


def make_strategy(name: str, searcher: Searcher) -> Strategy:
    try:
        return _STRATEGY_TYPES[name](searcher)
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGIES}") from None


def table_searcher(table: SimTable, seed: int) -> ScriptedSearcher:
    return ScriptedSearcher(table.configs(), table.order, seed)


# -- breakdown -----------------------------------------------------------------

HPO_BIN = "hpo"
EFFECTIVE_BIN = "effective"
WASTED_BIN = "wasted"


@dataclass(frozen=True)
class Breakdown:
    hpo: float
    effective: float
    wasted: float

    @property
    def total(self) -> float:
        return self.hpo + self.effective + self.wasted

    def to_dict(self) -> dict:
        return {HPO_BIN: self.hpo, EFFECTIVE_BIN: self.effective, WASTED_BIN: self.wasted}


def classify(records: Iterable) -> list[str]:
    """Bin label for every record, replaying the running best fair loss."""
    best = math.inf
    bins = []
    for r in records:
        fair = r.fair and not r.failed
        if r.m == 0:
            bins.append(HPO_BIN)
        elif fair and r.loss < best:
            bins.append(EFFECTIVE_BIN)
        else:
            bins.append(WASTED_BIN)
        if fair:
            best = min(best, r.loss)
    return bins


def breakdown(records: Iterable) -> Breakdown:
    records = list(records)
    sums = {HPO_BIN: 0.0, EFFECTIVE_BIN: 0.0, WASTED_BIN: 0.0}
    for r, b in zip(records, classify(records)):
        sums[b] += r.cost
    return Breakdown(sums[HPO_BIN], sums[EFFECTIVE_BIN], sums[WASTED_BIN])


# -- the loop ------------------------------------------------------------------

@dataclass
class TrialEvent:
    record: TrialRecord
    gate: dict


@dataclass
class RunResult:
    history: TrialHistory
    events: list[TrialEvent]
    budget: Budget
    breakdown: Breakdown
    best_fair: TrialRecord | None = None
    best: TrialRecord | None = None
    best_fair_model: TrainedModel | None = None
    best_model: TrainedModel | None = None
    workers: int = 1

    @property
    def found_fair(self) -> bool:
        return self.best_fair is not None


@dataclass
class _Loop:
    strategy: Strategy
    budget: Budget
    events: list[TrialEvent] = field(default_factory=list)
    best_fair: TrialRecord | None = None
    best: TrialRecord | None = None
    best_fair_model: TrainedModel | None = None
    best_model: TrainedModel | None = None
    in_flight: dict[int, tuple[ConfigPoint, int, dict]] = field(default_factory=dict)
    issued: int = 0

    def estimate(self) -> float:
        """Projected cost of the trials still running, from completed means per mode."""
        if not self.in_flight:
            return 0.0
        recs = self.strategy.history.records
        means = {}
        for m in (0, 1):
            costs = [r.cost for r in recs if r.m == m]
            means[m] = sum(costs) / len(costs) if costs else None
        overall = sum(r.cost for r in recs) / len(recs) if recs else 0.0
        return sum(means[m] if means[m] is not None else overall for _, m, _ in self.in_flight.values())

    def can_issue(self, workers: int) -> bool:
        return len(self.in_flight) < workers and self.budget.consumed + self.estimate() < self.budget.total

    def issue(self) -> tuple[int, ConfigPoint, int]:
        left = self.budget.total - self.budget.consumed - self.estimate()
        busy = [(c, m) for c, m, _ in self.in_flight.values()]
        config, m, gate = self.strategy.suggest(self.budget, left, busy)
        index = self.issued
        self.issued += 1
        self.in_flight[index] = (config, m, gate)
        return index, config, m

    def complete(self, index: int, outcome: Outcome) -> None:
        config, m, gate = self.in_flight.pop(index)
        record = TrialRecord(
            iteration=len(self.events),
            config=config,
            m=m,
            cost=outcome.cost,
            loss=outcome.loss,
            disparity=outcome.disparity,
            fair=outcome.fair,
            failed=outcome.failed,
            issue=index,
        )
        self.budget.spend(record.cost)
        self.strategy.update(record)
        if not record.failed:
            if self.best is None or record.loss < self.best.loss:
                self.best, self.best_model = record, outcome.model
            if record.fair and (self.best_fair is None or record.loss < self.best_fair.loss):
                self.best_fair, self.best_fair_model = record, outcome.model
        if outcome.error:
            gate = {**gate, "error": outcome.error}
        self.events.append(TrialEvent(record, gate))

    def result(self, workers: int) -> RunResult:
        history = self.strategy.history
        return RunResult(history, self.events, self.budget, breakdown(history.records),
                         self.best_fair, self.best, self.best_fair_model, self.best_model, workers)


def _run_virtual(loop: _Loop, evaluator, workers: int) -> None:
    """Evaluate at issue time and complete on a virtual clock advanced by trial costs."""
    clock = 0.0
    running: list[tuple[float, int, Outcome]] = []
    while True:
        while loop.can_issue(workers):
            index, config, m = loop.issue()
            outcome = evaluator.evaluate(config, m)
            heapq.heappush(running, (clock + outcome.cost, index, outcome))
        if not running:
            return
        clock, index, outcome = heapq.heappop(running)
        loop.complete(index, outcome)


_WORKER_EVALUATOR = None


def _init_worker(evaluator) -> None:
    global _WORKER_EVALUATOR
    _WORKER_EVALUATOR = evaluator


def _evaluate_in_worker(config: ConfigPoint, m: int) -> Outcome:
    return _WORKER_EVALUATOR.evaluate(config, m)


def _run_pool(loop: _Loop, evaluator, workers: int) -> None:
    """Evaluate in worker processes; apply results in completion order."""
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(evaluator,)) as pool:
        futures = {}
        while True:
            while loop.can_issue(workers):
                index, config, m = loop.issue()
                futures[pool.submit(_evaluate_in_worker, config, m)] = index
            if not futures:
                return
            done, _ = wait(futures, return_when=FIRST_COMPLETED)
            for fut in sorted(done, key=futures.get):
                index = futures.pop(fut)
                try:
                    outcome = fut.result()
                except Exception as exc:  # worker crashed outside the evaluator's guard
                    config, m, _ = loop.in_flight[index]
                    outcome = Outcome(math.inf, math.inf, False, FAILED_COST, failed=True, error=str(exc))
                loop.complete(index, outcome)


def run(evaluator, strategy: Strategy, budget: float, workers: int = 1) -> RunResult:
    """Run the trial loop until the budget is spent.

    With ``workers`` > 1 the budget is a pool of ``budget * workers``
    worker-seconds (or cost units), and a new trial is issued whenever a
    worker is free and the consumed resource plus the projected cost of the
    trials in flight is below the pool. Wall-clock evaluators use a process
    pool; deterministic evaluators run on a virtual clock.
    """
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")
    loop = _Loop(strategy, Budget(budget * workers))
    wall = isinstance(evaluator, DataEvaluator) and evaluator.cost_mode == WALL
    if workers > 1 and wall:
        _run_pool(loop, evaluator, workers)
    else:
        _run_virtual(loop, evaluator, workers)
    return loop.result(workers)
