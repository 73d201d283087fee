"""Command-line entry point: ``run``, ``simulate``, ``report`` and ``plotdata``.

Exit codes: 0 on success, 2 when a run finished without finding any fair
model (outputs are still written), 1 on configuration or input errors.
Log verbosity comes from the ``FAIRAUTOML_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__, logs
from .dataset import DatasetError, load_csv, make_synthetic_biased, split
from .fairness import DP, METRICS, FairnessError, FairnessSpec
from .hpsearch import LOCAL, SEARCHERS, SearcherKind, make_searcher
from .learners import default_space, model_to_json
from .mitigation import EG, GRID, MITIGATORS, MitigatorKind
from .runner import (COST_MODES, FAIR, STRATEGIES, WALL, DataEvaluator, TableError, TableEvaluator,
                     load_table, make_strategy, run, table_searcher)

OK, CONFIG_ERROR, NO_FAIR_MODEL = 0, 1, 2

log = logging.getLogger("fairautoml")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(CONFIG_ERROR, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"1,4,5"`` or ``"0-9"`` (inclusive range) of non-negative seeds."""
    seeds = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        lo, sep, hi = part.partition("-")
        if sep:
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, default=0.05, help="disparity threshold in (0, 1)")
    p.add_argument("--strategy", choices=STRATEGIES, default=FAIR)
    p.add_argument("--budget", type=float, required=True, help="resource budget per worker")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", help="several seeds: '1,2,3' or '0-9'; overrides --seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairautoml", description="Fairness-constrained AutoML with adaptive mitigation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="search on a CSV dataset or the synthetic fixture")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV file with a header row")
    src.add_argument("--synthetic", type=int, metavar="ROWS", help="use the synthetic biased fixture")
    p.add_argument("--bias", type=float, default=0.3, help="base-rate gap of the synthetic fixture")
    p.add_argument("--label", default="label")
    p.add_argument("--sensitive", default="group")
    p.add_argument("--positive-label")
    p.add_argument("--categorical", default="", help="comma-separated categorical columns")
    p.add_argument("--include-sensitive", action="store_true", help="keep the sensitive column as a feature")
    p.add_argument("--val-fraction", type=float, default=0.3)
    p.add_argument("--metric", choices=METRICS, default=DP)
    p.add_argument("--mitigator", choices=MITIGATORS, default=EG)
    p.add_argument("--searcher", choices=SEARCHERS, default=LOCAL)
    p.add_argument("--space", choices=("single", "multi"), default="single")
    p.add_argument("--cost-mode", choices=COST_MODES, default=WALL,
                   help="charge wall-clock seconds or deterministic work units")
    _common(p)

    p = sub.add_parser("simulate", help="replay a simulation table")
    p.add_argument("--sim", required=True, help="simulation table (JSON)")
    _common(p)

    p = sub.add_parser("report", help="summarize trial logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--json", action="store_true", help="print the summary as JSON")

    p = sub.add_parser("plotdata", help="CDF data of best fair loss per method")
    p.add_argument("inputs", nargs="+", metavar="METHOD=LOG", help="repeat a method name to pool logs")
    p.add_argument("--out", help="write JSON here instead of standard output")
    return parser


def _check_common(args) -> list[int]:
    if not 0.0 < args.delta < 1.0:
        raise UsageError(f"--delta must lie in (0, 1), got {args.delta}")
    if not args.budget > 0:
        raise UsageError(f"--budget must be positive, got {args.budget}")
    if args.workers < 1:
        raise UsageError(f"--workers must be at least 1, got {args.workers}")
    try:
        return parse_seeds(args.seeds) if args.seeds else [args.seed]
    except ValueError as exc:
        raise UsageError(f"--seeds: {exc}") from None


def _finish(out: Path, lines: list[dict]) -> int:
    logs.write_lines(lines, out / "trials.jsonl")
    summary = logs.summarize(logs.parse_log(out / "trials.jsonl"))
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(logs.format_report(summary))
    missing = [r["run"] for r in summary["runs"] if not r["found_fair"]]
    if missing:
        sys.stderr.write(f"no fair model found in run(s): {', '.join(missing)}\n")
        return NO_FAIR_MODEL
    return OK


def cmd_run(args) -> int:
    seeds = _check_common(args)
    if not 0.0 < args.val_fraction < 1.0:
        raise UsageError(f"--val-fraction must lie in (0, 1), got {args.val_fraction}")
    if args.synthetic is not None:
        if not 0.0 <= args.bias <= 1.0:
            raise UsageError(f"--bias must lie in [0, 1], got {args.bias}")
        data = make_synthetic_biased(args.synthetic, args.bias, seed=0)
    else:
        if not Path(args.data).is_file():
            raise UsageError(f"--data: no such file {args.data}")
        categorical = [c.strip() for c in args.categorical.split(",") if c.strip()]
        data = load_csv(args.data, args.label, args.sensitive, categorical, args.positive_label,
                        args.include_sensitive)
    if args.mitigator == GRID and data.group_count != 2:
        raise UsageError(f"--mitigator grid needs a binary sensitive attribute, found {data.group_count} groups")
    spec = FairnessSpec(args.metric, data.sensitive_name, args.delta)
    space = default_space(args.space)
    out = Path(args.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    lines = []
    for seed in seeds:
        evaluator = DataEvaluator(split(data, args.val_fraction, seed), spec, MitigatorKind(args.mitigator),
                                  args.cost_mode)
        searcher = make_searcher(space, SearcherKind(args.searcher, seed))
        result = run(evaluator, make_strategy(args.strategy, searcher), args.budget, args.workers)
        name = f"{args.strategy}-{seed}"
        lines.extend(logs.trial_lines(result, name, args.strategy))
        for tag, model in (("best_fair", result.best_fair_model), ("best", result.best_model)):
            if model is not None:
                (out / "models" / f"{name}.{tag}.json").write_text(model_to_json(model), encoding="utf-8")
        log.info("%s: %d trials, consumed %.3f", name, len(result.events), result.budget.consumed)
    return _finish(out, lines)


def cmd_simulate(args) -> int:
    seeds = _check_common(args)
    table = load_table(args.sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for seed in seeds:
        strategy = make_strategy(args.strategy, table_searcher(table, seed))
        result = run(TableEvaluator(table, args.delta), strategy, args.budget, args.workers)
        lines.extend(logs.trial_lines(result, f"{args.strategy}-{seed}", args.strategy))
    return _finish(out, lines)


def _read_logs(paths) -> list[dict]:
    lines = []
    for path in paths:
        if not Path(path).is_file():
            raise UsageError(f"no such log {path}")
        lines.extend(logs.parse_log(path))
    return lines


def cmd_report(args) -> int:
    summary = logs.summarize(_read_logs(args.logs))
    if args.json:
        sys.stdout.write(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    else:
        sys.stdout.write(logs.format_report(summary))
    return OK


def cmd_plotdata(args) -> int:
    methods: dict[str, list[float]] = {}
    for item in args.inputs:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"expected METHOD=LOG, got {item!r}")
        runs = logs.summarize(_read_logs([path]))["runs"]
        methods.setdefault(name, []).extend(
            math.inf if r["best_fair_loss"] is None else r["best_fair_loss"] for r in runs
        )
    text = json.dumps(logs.plot_data(methods), indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return OK


COMMANDS = {"run": cmd_run, "simulate": cmd_simulate, "report": cmd_report, "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    level = os.environ.get("FAIRAUTOML_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DatasetError, FairnessError, TableError, logs.LogError, ValueError) as exc:
        sys.stderr.write(f"fairautoml: error: {exc}\n")
        return CONFIG_ERROR
