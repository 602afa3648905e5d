import csv
import filecmp
import json

import pytest
import yaml

from cli import cli_main


@pytest.fixture
def problem_file(tmp_path):
    def write(name="problem.json", **fields):
        data = {"n_pp": 4, "n_mb": 8, "t_f": 1.0, "t_d": 1.0, "t_w": 1.0,
                "dc_of_stage": [0, 0, 1, 1], "alpha": 0.5, "beta": 0.25, "msg_fwd": 1.0, "msg_bwd": 1.0}
        data.update(fields)
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return str(path)
    return write


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def test_gen_sim_validate(tmp_path, problem_file, capsys):
    problem = problem_file()
    schedule = str(tmp_path / "1f1b.json")
    timeline = str(tmp_path / "timeline.json")

    assert cli_main(["gen", "--problem", problem, "--schedule", "1f1b", "--out", schedule]) == 0
    assert json.loads(capsys.readouterr().out)["family"] == "1F1B"

    assert cli_main(["sim", "--problem", problem, "--schedule-file", schedule, "--out", timeline]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["makespan_global"] > 33.0
    assert "0>1" in metrics["link_utilization"]

    assert cli_main(["validate", "--problem", problem, "--schedule-file", schedule]) == 0
    assert json.loads(capsys.readouterr().out) == []


def test_schedule_names_case_insensitive(tmp_path, problem_file, capsys):
    out = str(tmp_path / "zbv.json")
    problem = problem_file(pattern="Wave", n_chunks=2, t_f=0.5, t_d=0.5, t_w=0.5)
    assert cli_main(["gen", "--problem", problem, "--schedule", "ZBV", "--out", out]) == 0
    assert json.loads(capsys.readouterr().out)["family"] == "ZBV"


def test_gen_greedy_sub_blocks(tmp_path, problem_file, capsys):
    out = str(tmp_path / "sub.json")
    assert cli_main(["gen", "--problem", problem_file(), "--schedule", "cross-ud-sub", "--nsub", "2",
                     "--out", out]) == 0
    capsys.readouterr()
    assert json.loads(open(out).read())["n_sub"] == 2


def test_gen_exact_small_instance(tmp_path, problem_file, capsys):
    problem = problem_file(n_pp=2, n_mb=2, dc_of_stage=[0, 1])
    out = str(tmp_path / "exact.json")
    assert cli_main(["gen", "--problem", problem, "--schedule", "cross-ud", "--max-nodes", "500",
                     "--out", out]) == 0
    assert json.loads(capsys.readouterr().out)["family"] == "CrossUD"
    assert cli_main(["validate", "--problem", problem, "--schedule-file", out]) == 0


def test_gen_pattern_mismatch(tmp_path, problem_file, capsys):
    out = str(tmp_path / "wave.json")
    assert cli_main(["gen", "--problem", problem_file(), "--schedule", "cross-wave", "--out", out]) == 2
    assert "Wave pattern" in last_error(capsys)["message"]


def test_corrupted_schedule_fails_validation(tmp_path, problem_file, capsys):
    problem = problem_file()
    schedule = tmp_path / "1f1b.json"
    assert cli_main(["gen", "--problem", problem, "--schedule", "1f1b", "--out", str(schedule)]) == 0
    capsys.readouterr()

    data = json.loads(schedule.read_text())
    first, second = data["stages"][0][:2]
    data["stages"][0][:2] = [second, first]
    schedule.write_text(json.dumps(data))

    assert cli_main(["validate", "--problem", problem, "--schedule-file", str(schedule)]) == 1
    violations = json.loads(capsys.readouterr().out)
    assert violations
    assert {"kind", "stage", "op", "detail"} <= set(violations[0])


def test_deadlocked_schedule_fails_simulation(tmp_path, problem_file, capsys):
    problem = problem_file()
    schedule = tmp_path / "1f1b.json"
    assert cli_main(["gen", "--problem", problem, "--schedule", "1f1b", "--out", str(schedule)]) == 0
    capsys.readouterr()

    data = json.loads(schedule.read_text())
    first, second = data["stages"][3][:2]
    data["stages"][3][:2] = [second, first]
    schedule.write_text(json.dumps(data))

    assert cli_main(["sim", "--problem", problem, "--schedule-file", str(schedule),
                     "--out", str(tmp_path / "t.json")]) == 1
    assert last_error(capsys)["error"] == "DeadlockError"


def test_usage_errors(capsys):
    assert cli_main(["gen"]) == 2
    assert last_error(capsys)["error"] == "UsageError"
    assert cli_main(["gen", "--problem", "p.json", "--schedule", "gpipe", "--out", "o.json"]) == 2
    assert last_error(capsys)["error"] == "UsageError"
    assert cli_main(["no-such-command"]) == 2


def test_missing_problem_file(tmp_path, capsys):
    assert cli_main(["sim", "--problem", str(tmp_path / "nope.json"), "--schedule-file",
                     str(tmp_path / "s.json"), "--out", str(tmp_path / "t.json")]) == 2
    error = last_error(capsys)
    assert error["error"] == "ValueError"
    assert "not found" in error["message"]


def test_malformed_problem_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli_main(["gen", "--problem", str(path), "--schedule", "1f1b", "--out", str(tmp_path / "o.json")]) == 2
    assert "malformed" in last_error(capsys)["message"]


def test_gantt_is_deterministic(tmp_path, problem_file, capsys):
    problem = problem_file()
    schedule = str(tmp_path / "zbh1.json")
    timeline = str(tmp_path / "timeline.json")
    assert cli_main(["gen", "--problem", problem, "--schedule", "zbh1", "--out", schedule]) == 0
    assert cli_main(["sim", "--problem", problem, "--schedule-file", schedule, "--out", timeline]) == 0

    first, second = str(tmp_path / "a.svg"), str(tmp_path / "b.svg")
    assert cli_main(["gantt", "--timeline", timeline, "--problem", problem, "--out", first]) == 0
    assert cli_main(["gantt", "--timeline", timeline, "--problem", problem, "--out", second]) == 0
    assert filecmp.cmp(first, second, shallow=False)
    assert "<svg" in open(first).read()


def test_sweep_csv(tmp_path, problem_file):
    config = tmp_path / "sweep.yaml"
    config.write_text(yaml.safe_dump({
        "base": {"n_pp": 4, "n_mb": 8, "t_f": 1.0, "t_d": 1.0, "t_w": 1.0, "dc_of_stage": [0, 0, 1, 1]},
        "families": ["1F1B", "ZBV"],
        "lat_ratios": [0, 1],
        "bw_ratios": [0],
    }))
    out = tmp_path / "sweep.csv"
    assert cli_main(["sweep", "--config", str(config), "--out", str(out), "--workers", "1"]) == 0
    with open(out, newline="") as f:
        records = list(csv.DictReader(f))
    assert len(records) == 4
    zbv = next(r for r in records if r["family"] == "ZBV" and r["lat_ratio"] == "0.0")
    assert float(zbv["slowdown"]) == 1.0


def test_export_lp(tmp_path, problem_file):
    problem = problem_file(n_pp=2, n_mb=2, dc_of_stage=[0, 1])
    out = tmp_path / "model.lp"
    assert cli_main(["export-lp", "--problem", problem, "--pattern", "ud", "--out", str(out)]) == 0
    text = out.read_text()
    assert "Subject To" in text
    assert "dep_" in text


def test_compare_ranks_families(problem_file, capsys):
    problem = problem_file(n_pp=2, n_mb=4, dc_of_stage=[0, 1])
    assert cli_main(["compare", "--problem", problem, "--families", "1f1b|zbh1|zbv"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert {r["family"] for r in rows} == {"1F1B", "ZBH1", "ZBV"}
    spans = [r["makespan"] for r in rows]
    assert spans == sorted(spans)


def test_strides(tmp_path, problem_file, capsys):
    problem = problem_file(alpha=0.0, beta=0.0)
    assert cli_main(["strides", "--problem", problem, "--latency", "0", "--latency", "1.5",
                     "--out-dir", str(tmp_path / "svg")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["family"] == "1F1B"
    assert len(report["points"]) == 2


def test_infeasible_memory_exit_codes(tmp_path, problem_file, capsys, monkeypatch):
    out = str(tmp_path / "sub.json")
    # a problem file whose limit cannot hold one forward is bad input
    assert cli_main(["gen", "--problem", problem_file(m_limit=0.5), "--schedule", "cross-ud-sub",
                     "--out", out]) == 2
    assert "m_limit" in last_error(capsys)["message"]

    monkeypatch.setattr("xdcpipe.greedy.default_memory_budget", lambda spec: [0.5] * spec.n_pp)
    assert cli_main(["gen", "--problem", problem_file(), "--schedule", "cross-ud-sub", "--out", out]) == 1
    error = last_error(capsys)
    assert error["error"] == "InfeasibleScheduleError"
    assert "infeasible memory" in error["message"]
