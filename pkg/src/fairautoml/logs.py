"""Trial-log lines, their parsing, and the summaries built from them.

Every line is a self-contained JSON object, so a summary recomputed from a
parsed log equals the one written at run time. Non-finite numbers are
written as ``null``.
"""

from __future__ import annotations

import json
import math
import statistics
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .runner import EFFECTIVE_BIN, HPO_BIN, WASTED_BIN, RunResult, classify

LOG_FIELDS = ("run", "iteration", "issue", "completion", "strategy", "config", "learner", "params",
              "m", "cost", "loss", "disparity", "fair", "failed", "best_fair_loss", "best_loss",
              "consumed", "budget", "gate")


class LogError(ValueError):
    pass


def _finite(value):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, Mapping):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def _inf(value):
    return math.inf if value is None else value


def trial_lines(result: RunResult, run: str, strategy: str) -> list[dict]:
    best_fair = best = math.inf
    consumed = 0.0
    lines = []
    for event in result.events:
        r = event.record
        consumed += r.cost
        if not r.failed:
            best = min(best, r.loss)
            if r.fair:
                best_fair = min(best_fair, r.loss)
        lines.append(_finite({
            "run": run,
            "iteration": r.iteration,
            "issue": r.issue,
            "completion": r.iteration,
            "strategy": strategy,
            "config": r.config.key,
            "learner": r.config.learner,
            "params": dict(r.config.params),
            "m": r.m,
            "cost": r.cost,
            "loss": r.loss,
            "disparity": r.disparity,
            "fair": r.fair,
            "failed": r.failed,
            "best_fair_loss": best_fair,
            "best_loss": best,
            "consumed": consumed,
            "budget": result.budget.total,
            "gate": event.gate,
        }))
    return lines


def dumps(line: dict) -> str:
    return json.dumps(line, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_lines(lines: Iterable[dict], path: str | Path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(dumps(line) + "\n")


def parse_log(path: str | Path) -> list[dict]:
    lines = []
    with open(path, encoding="utf-8") as fh:
        for number, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                line = json.loads(text)
            except json.JSONDecodeError as exc:
                raise LogError(f"{path}: line {number}: malformed JSON ({exc.msg})") from None
            if not isinstance(line, dict) or any(f not in line for f in LOG_FIELDS):
                missing = [f for f in LOG_FIELDS if not isinstance(line, dict) or f not in line]
                raise LogError(f"{path}: line {number}: missing fields {missing}")
            lines.append(line)
    return lines


class _Row:
    """Attribute view of a parsed line, for the breakdown classifier."""

    __slots__ = ("m", "fair", "failed", "loss", "cost")

    def __init__(self, line: dict):
        self.m = line["m"]
        self.fair = bool(line["fair"])
        self.failed = bool(line["failed"])
        self.loss = _inf(line["loss"])
        self.cost = line["cost"]


def summarize_run(lines: Sequence[dict]) -> dict:
    rows = [_Row(l) for l in lines]
    bins = {HPO_BIN: 0.0, EFFECTIVE_BIN: 0.0, WASTED_BIN: 0.0}
    for row, b in zip(rows, classify(rows)):
        bins[b] += row.cost
    consumed = 0.0
    for row in rows:
        consumed += row.cost
    fair = [l for l in lines if l["fair"] and not l["failed"]]
    plain = [l for l in lines if not l["failed"]]
    best_fair = min(fair, key=lambda l: (l["loss"], l["iteration"])) if fair else None
    best = min(plain, key=lambda l: (l["loss"], l["iteration"])) if plain else None
    first = lines[0] if lines else {}
    return {
        "run": first.get("run"),
        "strategy": first.get("strategy"),
        "trials": len(lines),
        "mitigations": sum(1 for l in lines if l["m"] == 1),
        "consumed": consumed,
        "budget": first.get("budget"),
        "best_fair_loss": best_fair["loss"] if best_fair else None,
        "best_fair_config": best_fair["config"] if best_fair else None,
        "best_fair_m": best_fair["m"] if best_fair else None,
        "best_loss": best["loss"] if best else None,
        "best_config": best["config"] if best else None,
        "found_fair": best_fair is not None,
        "breakdown": bins,
    }


def group_runs(lines: Iterable[dict]) -> dict[str, list[dict]]:
    runs: dict[str, list[dict]] = {}
    for line in lines:
        runs.setdefault(str(line["run"]), []).append(line)
    return runs


def _median(values: Sequence[float]) -> float | None:
    if not values:
        return None
    m = statistics.median(values)
    return m if math.isfinite(m) else None


def summarize(lines: Iterable[dict]) -> dict:
    """Per-run table plus medians across runs; runs without a fair model count as +inf."""
    runs = [summarize_run(group) for group in group_runs(lines).values()]
    return {
        "runs": runs,
        "run_count": len(runs),
        "runs_with_fair_model": sum(r["found_fair"] for r in runs),
        "median_best_fair_loss": _median([_inf(r["best_fair_loss"]) for r in runs]),
        "median_best_loss": _median([_inf(r["best_loss"]) for r in runs]),
    }


def _fmt(value) -> str:
    return "none" if value is None else f"{value:.4f}"


def format_report(summary: dict) -> str:
    if not summary["runs"]:
        return "0 trials\n"
    out = []
    for r in summary["runs"]:
        b = r["breakdown"]
        total = r["consumed"]
        pct = {k: (100.0 * v / total if total > 0 else 0.0) for k, v in b.items()}
        out.append(
            f"run {r['run']} [{r['strategy']}]: {r['trials']} trials, consumed {r['consumed']:.4g}"
            f" of {r['budget']:.4g}\n"
            f"  best fair loss {_fmt(r['best_fair_loss'])}"
            + ("" if r["found_fair"] else " (no fair model found)")
            + f", best unconstrained loss {_fmt(r['best_loss'])}\n"
            f"  HPO {b[HPO_BIN]:.4g} ({pct[HPO_BIN]:.1f}%)"
            f", effective mitigation {b[EFFECTIVE_BIN]:.4g} ({pct[EFFECTIVE_BIN]:.1f}%)"
            f", wasted mitigation {b[WASTED_BIN]:.4g} ({pct[WASTED_BIN]:.1f}%)"
        )
    out.append(
        f"{summary['run_count']} runs, {summary['runs_with_fair_model']} with a fair model;"
        f" median best fair loss {_fmt(summary['median_best_fair_loss'])}"
    )
    return "\n".join(out) + "\n"


def cdf_points(losses: Sequence[float]) -> list[tuple[float, float]]:
    """Sorted (loss, cumulative share of runs) steps over the finite losses."""
    n = len(losses)
    finite = sorted(x for x in losses if math.isfinite(x))
    points = []
    for k, x in enumerate(finite, start=1):
        if points and points[-1][0] == x:
            points[-1] = (x, k / n)
        else:
            points.append((x, k / n))
    return points


def plot_data(methods: Mapping[str, Sequence[float]]) -> dict:
    """CDF of per-run best fair loss for each method, x-range capped at 1.2 x the overall best."""
    finite = [x for losses in methods.values() for x in losses if math.isfinite(x)]
    best = min(finite) if finite else None
    return {
        "x_max": 1.2 * best if best is not None else None,
        "methods": {
            name: {
                "runs": len(losses),
                "points": [list(p) for p in cdf_points(losses)],
                "out_of_range": sum(1 for x in losses if not math.isfinite(x)),
            }
            for name, losses in methods.items()
        },
    }
