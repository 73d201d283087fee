"""Hyperparameter searchers behind a suggest/update interface.

``RandomSearcher`` samples the normalized space uniformly. ``LocalSearcher``
is a cost-frugal randomized direct search: it starts from the cheapest
corner of the space and moves an incumbent by random unit directions with
an adaptive step size, restarting when the step collapses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .learners import ConfigPoint, SearchSpace

RANDOM = "random"
LOCAL = "local"
SEARCHERS = (RANDOM, LOCAL)


class EciUndefined(ValueError):
    pass


@dataclass(frozen=True)
class SearcherKind:
    name: str = LOCAL
    seed: int = 0
    initial_step: float = 0.1
    shrink: float = 0.5
    restart_below: float = 0.01
    switch_probability: float = 0.1
    mitigation_flip_probability: float = 0.25

    def __post_init__(self):
        if self.name not in SEARCHERS:
            raise ValueError(f"unknown searcher {self.name!r}; expected one of {SEARCHERS}")
        if not 0.0 < self.initial_step <= 1.0:
            raise ValueError("initial_step must lie in (0, 1]")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass(frozen=True)
class NormalizedPoint:
    learner: str
    coords: tuple[float, ...]


def normalize(space: SearchSpace, config: ConfigPoint) -> NormalizedPoint:
    ranges = space.ranges(config.learner)
    return NormalizedPoint(config.learner, tuple(r.normalize(config.params[r.name]) for r in ranges))


def denormalize(space: SearchSpace, point: NormalizedPoint) -> ConfigPoint:
    ranges = space.ranges(point.learner)
    return ConfigPoint(point.learner, {r.name: r.denormalize(u) for r, u in zip(ranges, point.coords)})


def low_cost_point(space: SearchSpace, learner: str) -> NormalizedPoint:
    """Cost-driving parameters at their minimum, the rest at the (log-)midpoint."""
    return NormalizedPoint(
        learner, tuple(0.0 if r.cost_driving else 0.5 for r in space.ranges(learner))
    )


def step(coords: Sequence[float], sigma: float, direction: Sequence[float]) -> tuple[float, ...]:
    """``coords + sigma * direction`` clamped to the unit cube."""
    moved = np.asarray(coords, dtype=float) + sigma * np.asarray(direction, dtype=float)
    return tuple(float(v) for v in np.clip(moved, 0.0, 1.0))


@dataclass
class EciState:
    """Resource bookkeeping over plain (unmitigated) trials."""

    total: float = 0.0
    at_best: float = 0.0
    at_second: float = 0.0
    best_loss: float = math.inf
    second_loss: float = math.inf
    trials: int = 0

    def record(self, loss: float, cost: float) -> None:
        self.trials += 1
        self.total += cost
        if loss < self.best_loss:
            self.second_loss, self.at_second = self.best_loss, self.at_best
            self.best_loss, self.at_best = loss, self.total


def eci(state: EciState) -> float:
    """Estimated resource needed for the next plain-loss improvement."""
    if state.trials == 0:
        raise EciUndefined("ECI undefined: no hyperparameter-search trials recorded")
    return max(state.total - state.at_best, state.at_best - state.at_second)


def plain_rank(record) -> tuple:
    return (record.loss, record.iteration)


def feasibility_rank(record) -> tuple:
    """Fair beats unfair; then lower loss among fair, lower disparity among unfair."""
    if record.fair:
        return (0, record.loss, record.iteration)
    return (1, record.disparity, record.iteration)


class Searcher:
    """Common state: the space, a seeded generator, seen records and ECI."""

    def __init__(self, space: SearchSpace, kind: SearcherKind, rank: Callable = plain_rank):
        self.space = space
        self.kind = kind
        self.rng = np.random.default_rng(kind.seed)
        self.rank = rank
        self.eci_state = EciState()
        self.best = None
        self._seen = 0
        self._last_key: str | None = None

    def random_point(self, learner: str | None = None) -> NormalizedPoint:
        if learner is None:
            learner = self.space.learners[int(self.rng.integers(len(self.space.learners)))]
        dims = len(self.space.ranges(learner))
        return NormalizedPoint(learner, tuple(float(u) for u in self.rng.random(dims)))

    def suggest(self) -> ConfigPoint:
        raise NotImplementedError

    def update(self, records: Sequence) -> None:
        """Consume records appended since the previous call."""
        for record in records[self._seen:]:
            failed = getattr(record, "failed", False)
            if record.m == 0:
                self.eci_state.record(math.inf if failed else record.loss, record.cost)
            if not failed and (self.best is None or self.rank(record) < self.rank(self.best)):
                self.best = record
            self._observe(record, failed)
        self._seen = len(records)

    def _observe(self, record, failed: bool) -> None:
        pass

    def mashp_suggest(self) -> tuple[ConfigPoint, int]:
        raise NotImplementedError


class RandomSearcher(Searcher):
    def suggest(self) -> ConfigPoint:
        for _ in range(100):
            config = denormalize(self.space, self.random_point())
            if config.key != self._last_key:
                break
        self._last_key = config.key
        return config

    def mashp_suggest(self) -> tuple[ConfigPoint, int]:
        return self.suggest(), int(self.rng.integers(2))


class LocalSearcher(Searcher):
    """Randomized direct search around an incumbent with an adaptive step.

    An improving observation moves the incumbent and doubles the step (capped
    at 1); a non-improving one shrinks it. Once the step drops below
    ``restart_below`` the next suggestion is a fresh random point.
    """

    def __init__(self, space: SearchSpace, kind: SearcherKind, rank: Callable = plain_rank):
        super().__init__(space, kind, rank)
        self.sigma = kind.initial_step
        self.incumbent: NormalizedPoint | None = None
        self.incumbent_m = 0
        self.incumbent_record = None
        self.per_learner: dict[str, tuple[tuple, NormalizedPoint]] = {}
        self._restart = False
        self._started = False
        self._pending: dict[str, tuple[NormalizedPoint, int]] = {}

    def _direction(self, dims: int) -> np.ndarray:
        u = self.rng.normal(size=dims)
        norm = np.linalg.norm(u)
        return u / norm if norm > 0 else np.eye(dims)[0]

    def _propose(self) -> NormalizedPoint:
        if not self._started:
            self._started = True
            return low_cost_point(self.space, self.space.learners[0])
        if self._restart or self.incumbent is None:
            self._restart = False
            self.sigma = self.kind.initial_step
            self.incumbent = None
            self.incumbent_record = None
            return self.random_point()
        base = self.incumbent
        if len(self.space.learners) > 1 and self.rng.random() < self.kind.switch_probability:
            others = [l for l in self.space.learners if l != base.learner]
            learner = others[int(self.rng.integers(len(others)))]
            if learner in self.per_learner:
                return self.per_learner[learner][1]
            return low_cost_point(self.space, learner)
        coords = step(base.coords, self.sigma, self._direction(len(base.coords)))
        return NormalizedPoint(base.learner, coords)

    def suggest(self) -> ConfigPoint:
        point = self._propose()
        config = denormalize(self.space, point)
        self._pending[config.key] = (point, 0)
        return config

    def mashp_suggest(self) -> tuple[ConfigPoint, int]:
        first = not self._started
        point = self._propose()
        m = self.incumbent_m
        if not first and self.rng.random() < self.kind.mitigation_flip_probability:
            m = 1 - m
        config = denormalize(self.space, point)
        self._pending[config.key] = (point, m)
        return config, m

    def _observe(self, record, failed: bool) -> None:
        point, m = self._pending.pop(record.config.key, (normalize(self.space, record.config), record.m))
        if not failed:
            rank = self.rank(record)
            known = self.per_learner.get(point.learner)
            if known is None or rank < known[0]:
                self.per_learner[point.learner] = (rank, point)
        if not failed and (self.incumbent_record is None or self.rank(record) < self.rank(self.incumbent_record)):
            self.incumbent = point
            self.incumbent_m = m
            self.incumbent_record = record
            self.sigma = min(1.0, self.sigma * 2.0)
        else:
            self.sigma *= self.kind.shrink
            if self.sigma < self.kind.restart_below:
                self._restart = True


class ScriptedSearcher(Searcher):
    """Replays a fixed config order, then seeded permutations of the pool."""

    def __init__(self, configs: Sequence[ConfigPoint], order: Sequence[int] = (), seed: int = 0,
                 rank: Callable = plain_rank):
        if not configs:
            raise ValueError("scripted searcher needs at least one configuration")
        super().__init__(None, SearcherKind(RANDOM, seed), rank)
        self.configs = list(configs)
        self._queue = list(order)
        self._cursor = 0

    def _next_index(self) -> int:
        if self._cursor == len(self._queue):
            self._queue.extend(int(i) for i in self.rng.permutation(len(self.configs)))
        index = self._queue[self._cursor]
        self._cursor += 1
        return index

    def suggest(self) -> ConfigPoint:
        return self.configs[self._next_index()]

    def mashp_suggest(self) -> tuple[ConfigPoint, int]:
        config = self.suggest()
        return config, int(self.rng.integers(2))


def make_searcher(space: SearchSpace, kind: SearcherKind, rank: Callable = plain_rank) -> Searcher:
    if kind.name == RANDOM:
        return RandomSearcher(space, kind, rank)
    return LocalSearcher(space, kind, rank)
