from __future__ import annotations

import json
import math
from types import SimpleNamespace

import pytest

from fairautoml import logs
from fairautoml.cli import main, parse_seeds
from fairautoml.learners import ConfigPoint
from fairautoml.runner import Budget, SimEntry, SimTable, TrialEvent, save_table, scenario_table
from fairautoml.scheduler import TrialRecord


def fake_result(rows, total=30.0):
    """rows: (m, cost, loss, fair) tuples."""
    events = []
    for i, (m, cost, loss, fair) in enumerate(rows):
        r = TrialRecord(i, ConfigPoint("sim", {"id": f"c{i}"}), m, cost, loss, 0.0 if fair else 0.5, fair, issue=i)
        events.append(TrialEvent(r, {"branch": "search"}))
    return SimpleNamespace(events=events, budget=Budget(total))


def write_log(path, rows, run="r0", strategy="fair"):
    logs.write_lines(logs.trial_lines(fake_result(rows), run, strategy), path)
    return path


def test_report_percentages(tmp_path, capsys):
    path = write_log(tmp_path / "t.jsonl", [(0, 3.0, 0.3, False), (1, 9.0, 0.32, True), (1, 7.0, 0.25, False)])
    assert main(["report", str(path)]) == 0
    out = capsys.readouterr().out
    assert "(15.8%)" in out and "(47.4%)" in out and "(36.8%)" in out
    summary = logs.summarize(logs.parse_log(path))
    assert sum(summary["runs"][0]["breakdown"].values()) == summary["runs"][0]["consumed"] == 19.0


def test_report_hpo_only(tmp_path, capsys):
    path = write_log(tmp_path / "t.jsonl", [(0, 1.0, 0.3, True), (0, 2.0, 0.2, False)], strategy="hpo")
    assert main(["report", str(path)]) == 0
    out = capsys.readouterr().out
    assert "effective mitigation 0 (0.0%)" in out and "wasted mitigation 0 (0.0%)" in out


def test_empty_log(tmp_path, capsys):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert main(["report", str(path)]) == 0
    assert capsys.readouterr().out == "0 trials\n"


def test_malformed_line_named(tmp_path, capsys):
    path = write_log(tmp_path / "t.jsonl", [(0, 1.0, 0.3, True)])
    with open(path, "a") as fh:
        fh.write("{broken\n")
    assert main(["report", str(path)]) == 1
    assert "line 2" in capsys.readouterr().err
    path.write_text('{"run": "x"}\n')
    with pytest.raises(logs.LogError, match="line 1: missing fields"):
        logs.parse_log(path)


def test_log_lines_self_contained_and_monotone(tmp_path):
    path = write_log(tmp_path / "t.jsonl", [(0, 1.0, 0.3, True), (0, 1.0, 0.4, True), (1, 2.0, 0.2, True),
                                            (0, 1.0, math.inf, False)])
    lines = logs.parse_log(path)
    assert all(set(logs.LOG_FIELDS) <= set(l) for l in lines)
    best = [logs._inf(l["best_fair_loss"]) for l in lines]
    assert best == sorted(best, reverse=True)
    assert lines[-1]["loss"] is None


def test_cdf_points_example():
    assert logs.cdf_points([0.10, 0.12, 0.12, 0.15]) == [(0.10, 0.25), (0.12, 0.75), (0.15, 1.0)]
    data = logs.plot_data({"a": [0.10, 0.12, 0.12, 0.15]})
    assert data["x_max"] == pytest.approx(0.12)
    assert data["methods"]["a"]["out_of_range"] == 0


def test_cdf_out_of_range():
    data = logs.plot_data({"a": [0.2, math.inf, 0.3, 0.25]})
    points = data["methods"]["a"]["points"]
    assert points[-1][1] == 0.75 and data["methods"]["a"]["out_of_range"] == 1
    shares = [p[1] for p in points]
    assert shares == sorted(shares)


def test_plotdata_cli(tmp_path, capsys):
    a = write_log(tmp_path / "a.jsonl", [(0, 1.0, 0.10, True)], run="a0")
    b = write_log(tmp_path / "b.jsonl", [(0, 1.0, 0.20, False)], run="b0")
    out = tmp_path / "plot.json"
    assert main(["plotdata", f"fair={a}", f"hpo={b}", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["methods"]["fair"]["points"] == [[0.1, 1.0]]
    assert data["methods"]["hpo"]["out_of_range"] == 1
    assert main(["plotdata", "nonsense"]) == 1


def sim_file(tmp_path, table, name="t.json"):
    path = tmp_path / name
    save_table(table, path)
    return path


def test_simulate_exit_codes(tmp_path, capsys):
    s2 = sim_file(tmp_path, scenario_table("s2", seed=0))
    assert main(["simulate", "--sim", str(s2), "--strategy", "hpo", "--budget", "500", "--out",
                 str(tmp_path / "hpo")]) == 2
    assert "no fair model" in capsys.readouterr().err
    summary = json.loads((tmp_path / "hpo" / "summary.json").read_text())
    assert summary["runs"][0]["best_fair_loss"] is None
    assert main(["simulate", "--sim", str(s2), "--strategy", "fair", "--budget", "1000", "--out",
                 str(tmp_path / "fair")]) == 0


def test_simulate_s1_breakdown(tmp_path):
    s1 = sim_file(tmp_path, scenario_table("s1", seed=0))
    wasted = {}
    for strategy in ("fair", "malways"):
        out = tmp_path / strategy
        main(["simulate", "--sim", str(s1), "--strategy", strategy, "--budget", "2000", "--out", str(out)])
        wasted[strategy] = json.loads((out / "summary.json").read_text())["runs"][0]["breakdown"]["wasted"]
    assert wasted["fair"] <= 0.5 * wasted["malways"]


def test_simulate_deterministic_and_summary_matches_report(tmp_path, capsys):
    s2 = sim_file(tmp_path, scenario_table("s2", seed=1))
    for name in ("a", "b"):
        main(["simulate", "--sim", str(s2), "--budget", "800", "--seeds", "0-2", "--out", str(tmp_path / name)])
    a, b = (tmp_path / "a" / "trials.jsonl").read_bytes(), (tmp_path / "b" / "trials.jsonl").read_bytes()
    assert a == b
    capsys.readouterr()
    assert main(["report", "--json", str(tmp_path / "a" / "trials.jsonl")]) == 0
    reported = capsys.readouterr().out
    assert reported == (tmp_path / "a" / "summary.json").read_text()


@pytest.mark.parametrize("argv,flag", [
    (["--delta", "1.5"], "--delta"),
    (["--budget", "-1"], "--budget"),
    (["--workers", "0"], "--workers"),
    (["--seeds", "x"], "--seeds"),
])
def test_config_errors_exit_1(tmp_path, capsys, argv, flag):
    s1 = sim_file(tmp_path, scenario_table("s1", size=3))
    base = ["simulate", "--sim", str(s1), "--budget", "10", "--out", str(tmp_path / "o")]
    assert main(base + argv) == 1
    assert flag in capsys.readouterr().err


def test_argparse_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--budget", "1"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--sim", "x", "--budget", "1", "--out", "o", "--strategy", "bogus"])
    assert exc.value.code == 1


def test_bad_table_exit_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"entries": [{"id": "a"}]}))
    assert main(["simulate", "--sim", str(path), "--budget", "1", "--out", str(tmp_path / "o")]) == 1


def test_run_synthetic_fixture(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", "--synthetic", "600", "--budget", "1.0", "--cost-mode", "simulated", "--seed", "1",
                 "--delta", "0.05", "--mitigator", "post", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert math.isfinite(summary["runs"][0]["best_fair_loss"])
    assert (out / "models" / "fair-1.best_fair.json").is_file()
    assert (out / "models" / "fair-1.best.json").is_file()


def test_run_csv_and_grid_needs_binary(tmp_path, capsys):
    csv = tmp_path / "d.csv"
    rows = ["x,color,group,label"] + [f"{i % 7},{'red' if i % 3 else 'blue'},{'abc'[i % 3]},{'yes' if i % 2 else 'no'}"
                                      for i in range(120)]
    csv.write_text("\n".join(rows) + "\n")
    base = ["run", "--data", str(csv), "--categorical", "color", "--positive-label", "yes", "--budget", "0.2",
            "--cost-mode", "simulated", "--out", str(tmp_path / "o")]
    assert main(base + ["--mitigator", "grid"]) == 1
    assert "binary" in capsys.readouterr().err
    assert main(base + ["--mitigator", "post", "--strategy", "hpo"]) in (0, 2)
    assert main(["run", "--data", str(tmp_path / "missing.csv"), "--budget", "1", "--out", "o"]) == 1


def test_parse_seeds():
    assert parse_seeds("3") == [3]
    assert parse_seeds("1,4,5") == [1, 4, 5]
    assert parse_seeds("0-3") == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        parse_seeds("")


def test_no_fair_sim_table_exit_2(tmp_path, capsys):
    t = SimTable((SimEntry("a", 0.2, 0.5, 1, 0.3, 0.5, 2), SimEntry("b", 0.1, 0.5, 1, 0.2, 0.5, 2)))
    path = sim_file(tmp_path, t)
    assert main(["simulate", "--sim", str(path), "--budget", "20", "--out", str(tmp_path / "o")]) == 2
