"""The fair searcher: per trial, choose between plain search and mitigation.

Each mode m (0 = plain training, 1 = mitigation) carries an estimate of the
resource it would need to improve the best fair loss (``ecf``). A
mitigation is issued only when there is an unfair, not-yet-mitigated
configuration, mitigation looks cheaper than search, and the projected
post-mitigation loss of that configuration beats the best fair loss so far.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable

from .hpsearch import Searcher, eci
from .learners import ConfigPoint

COLD_COST_RATIO = 10.0
CONFIDENCE_Z = 1.96


class SchedulerError(RuntimeError):
    """Internal bookkeeping inconsistency."""


@dataclass(frozen=True)
class TrialRecord:
    iteration: int
    config: ConfigPoint
    m: int
    cost: float
    loss: float
    disparity: float
    fair: bool
    failed: bool = False
    issue: int = -1

    def __post_init__(self):
        if self.m not in (0, 1):
            raise ValueError(f"mitigation flag must be 0 or 1, got {self.m}")
        if not self.cost > 0:
            raise ValueError(f"trial cost must be positive, got {self.cost}")


class TrialHistory:
    """Append-only trial list with its plain (H0) and mitigated (H1) views."""

    def __init__(self, records: Iterable[TrialRecord] = ()):
        self.records: list[TrialRecord] = []
        self.h0: list[TrialRecord] = []
        self.h1: list[TrialRecord] = []
        self.plain_by_key: dict[str, TrialRecord] = {}
        self.mitigated: set[str] = set()
        for r in records:
            self.append(r)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: TrialRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise SchedulerError("iteration indices must be strictly increasing")
        self.records.append(record)
        if record.m == 0:
            self.h0.append(record)
            self.plain_by_key.setdefault(record.config.key, record)
        else:
            self.h1.append(record)
            self.mitigated.add(record.config.key)

    def plain_record(self, config: ConfigPoint) -> TrialRecord:
        try:
            return self.plain_by_key[config.key]
        except KeyError:
            raise SchedulerError(f"configuration {config.key} was never evaluated unmitigated") from None

    def best_fair(self) -> TrialRecord | None:
        best = None
        for r in self.records:
            if r.fair and not r.failed and (best is None or r.loss < best.loss):
                best = r
        return best

    def best(self) -> TrialRecord | None:
        best = None
        for r in self.records:
            if not r.failed and (best is None or r.loss < best.loss):
                best = r
        return best


def select_candidate(history: TrialHistory, exclude: Iterable[str] = ()) -> TrialRecord | None:
    """Lowest-loss unfair H0 record whose config has not been mitigated.

    ``exclude`` holds extra config keys to skip (mitigations in flight).
    Returns the record so callers have the config together with its loss
    and cost; ties go to the earliest iteration.
    """
    skip = history.mitigated | set(exclude)
    best = None
    for r in history.h0:
        if r.fair or r.failed or r.config.key in skip:
            continue
        if best is None or r.loss < best.loss:
            best = r
    return best


@dataclass
class ModeProgress:
    """Resource markers for one mode's fair-loss improvements."""

    total: float = 0.0
    at_best: float = 0.0
    at_second: float = 0.0
    best: float = math.inf
    second: float = math.inf
    trials: int = 0
    improvements: int = 0

    def record(self, cost: float, loss: float, fair: bool) -> bool:
        self.trials += 1
        self.total += cost
        if fair and loss < self.best:
            self.second, self.at_second = self.best, self.at_best
            self.best, self.at_best = loss, self.total
            self.improvements += 1
            return True
        return False

    @property
    def speed(self) -> float | None:
        """Fair-loss improvement per resource unit across the last two improvements."""
        if self.improvements < 2:
            return None
        return (self.second - self.best) / (self.at_best - self.at_second)


@dataclass
class EcfState:
    modes: tuple[ModeProgress, ModeProgress] = field(default_factory=lambda: (ModeProgress(), ModeProgress()))
    best_fair: float = math.inf

    def record(self, m: int, cost: float, loss: float, fair: bool) -> None:
        self.modes[m].record(cost, loss, fair)
        if fair and loss < self.best_fair:
            self.best_fair = loss


def ecf(m: int, state: EcfState) -> float:
    """Estimated resource for mode ``m`` to improve the best fair loss.

    The max of: resource since the mode's last fair improvement, the
    resource its last improvement took, and twice the resource needed to
    close the gap to the global best at the mode's recent improvement speed.
    An untried mode scores 0.
    """
    p = state.modes[m]
    if p.trials == 0:
        return 0.0
    terms = [p.total - p.at_best, p.at_best - p.at_second]
    speed = p.speed
    if speed is not None and speed > 0:
        terms.append(2.0 * (p.best - state.best_fair) / speed)
    return max(terms)


@dataclass
class MitigationStats:
    degradations: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    outcomes: list[bool] = field(default_factory=list)

    def record(self, plain: TrialRecord, mitigated: TrialRecord) -> None:
        if not mitigated.failed and not plain.failed:
            self.degradations.append(mitigated.loss - plain.loss)
        self.ratios.append(mitigated.cost / plain.cost)
        self.outcomes.append(bool(mitigated.fair and not mitigated.failed))

    @property
    def eta(self) -> float:
        if len(self.degradations) < 2:
            return 0.0
        return statistics.fmean(self.degradations)

    @property
    def radius(self) -> float:
        n = len(self.degradations)
        if n < 2:
            return 0.0
        return CONFIDENCE_Z * statistics.stdev(self.degradations) / math.sqrt(n)

    @property
    def success_rate(self) -> float:
        return q_mitigation(self.outcomes)

    @property
    def mean_ratio(self) -> float:
        return statistics.fmean(self.ratios) if self.ratios else COLD_COST_RATIO


def q_mitigation(outcomes: list[bool]) -> float:
    """Share of mitigations that produced a fair model, floored above zero."""
    if not outcomes:
        return 1.0
    q = sum(outcomes) / len(outcomes)
    return q if q > 0 else 1.0 / (len(outcomes) + 1)


def zeta(stats: MitigationStats, eci_value: float, tau: float, budget_left: float) -> float:
    if eci_value < tau and eci_value + tau < budget_left:
        return stats.eta
    return stats.eta - stats.radius


def projected_loss(plain_loss: float, stats: MitigationStats, eci_value: float, tau: float,
                   budget_left: float) -> float:
    return plain_loss + zeta(stats, eci_value, tau, budget_left)


def projected_mitigation_cost(plain_cost: float, stats: MitigationStats) -> float:
    return plain_cost / stats.success_rate * stats.mean_ratio


@dataclass(frozen=True)
class Gate:
    """Values behind one suggestion, written to the trial log."""

    branch: str
    ecf0: float
    ecf1: float
    best_fair: float
    candidate: str | None = None
    eci: float | None = None
    tau: float | None = None
    zeta: float | None = None
    projected: float | None = None

    def to_dict(self) -> dict:
        return {
            "branch": self.branch,
            "ecf0": self.ecf0,
            "ecf1": self.ecf1,
            "best_fair": self.best_fair,
            "candidate": self.candidate,
            "eci": self.eci,
            "tau": self.tau,
            "zeta": self.zeta,
            "projected": self.projected,
        }


class FairSearcher:
    """Adaptive choice between search and mitigation around a plain searcher."""

    def __init__(self, searcher: Searcher):
        self.searcher = searcher
        self.history = TrialHistory()
        self.state = EcfState()
        self.stats = MitigationStats()

    def suggest(self, budget_left: float, in_flight: Iterable[str] = ()) -> tuple[ConfigPoint, int, Gate]:
        if not budget_left > 0:
            raise ValueError("no budget left to suggest a trial")
        e0, e1 = ecf(0, self.state), ecf(1, self.state)
        best = self.state.best_fair
        candidate = select_candidate(self.history, in_flight)
        if candidate is None:
            return self.searcher.suggest(), 0, Gate("search:no-candidate", e0, e1, best)
        eci_value = eci(self.searcher.eci_state)
        tau = projected_mitigation_cost(candidate.cost, self.stats)
        z = zeta(self.stats, eci_value, tau, budget_left)
        projected = candidate.loss + z
        values = dict(candidate=candidate.config.key, eci=eci_value, tau=tau, zeta=z, projected=projected)
        if e1 < e0 and projected < best:
            return candidate.config, 1, Gate("mitigate", e0, e1, best, **values)
        reason = "search:ecf" if not e1 < e0 else "search:projected-loss"
        return self.searcher.suggest(), 0, Gate(reason, e0, e1, best, **values)

    def update(self, record: TrialRecord) -> None:
        plain = self.history.plain_record(record.config) if record.m == 1 else None
        self.history.append(record)
        loss = math.inf if record.failed else record.loss
        self.state.record(record.m, record.cost, loss, record.fair and not record.failed)
        if plain is not None:
            self.stats.record(plain, record)
        else:
            self.searcher.update(self.history.h0)
