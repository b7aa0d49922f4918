import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from envscale.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INVARIANT, EXIT_OK, main

SMALL = {
    "seed": 3,
    "domains": {"count": 3, "n_tools": 60, "density": 0.08, "n_tables": 6},
    "envs": {"per_domain": 2},
    "episodes": {"skills": [0.0, 0.5, 1.0], "noise_levels": [0, 2], "episodes_per_cell": 3, "max_envs": 2,
                 "curriculum": {"steps": 2}},
    "simulation": {"cluster": {"gen_devices": 2, "batch_size": 16}, "workload": {"num_samples": 48}},
}


def write_config(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp, SMALL)
    out = tmp / "run"
    assert main(["all", "--config", cfg, "--out", str(out)]) == EXIT_OK
    return tmp, cfg, out


def test_full_run_layout(full_run):
    _, _, out = full_run
    assert len(list((out / "domains").glob("0*.json"))) == 3
    assert (out / "domains" / "validation.json").exists()
    summary = json.loads((out / "envs" / "summary.json").read_text())
    assert len(summary) == 6 and all(r["tools"] >= 20 for r in summary)
    for f in ("rewards.csv", "trajectories.jsonl", "pass_rates.csv", "curriculum.json", "training_plan.csv"):
        assert (out / "episodes" / f).exists()
    for f in ("metrics_sync.json", "metrics_async.json", "events_sync.jsonl", "events_async.jsonl", "compare.json"):
        assert (out / "sim" / f).exists()
    report = (out / "report.md").read_text()
    for title in ("## Domains", "## Environments", "## Episodes", "## Simulation"):
        assert title in report
    assert "## Warnings" not in report
    assert (out / "plots" / "env_sizes.csv").exists()


def test_rerun_is_byte_identical(full_run, tmp_path):
    _, cfg, out = full_run
    again = tmp_path / "again"
    assert main(["all", "--config", cfg, "--out", str(again)]) == EXIT_OK
    assert tree(again) == tree(out)


def test_pass_rates_and_gap(full_run):
    _, _, out = full_run
    with open(out / "episodes" / "pass_rates.csv") as f:
        rows = list(csv.DictReader(f))
    by = {(r["env"], float(r["skill"]), int(r["noise_level"])): float(r["pass_rate"]) for r in rows}
    for r in rows:
        clean = by[(r["env"], float(r["skill"]), 0)]
        assert float(r["robustness_gap"]) == pytest.approx(clean - float(r["pass_rate"]), abs=1e-9)
    for env in {k[0] for k in by}:
        col = [by[(env, s, 0)] for s in (0.0, 0.5, 1.0)]
        assert col == sorted(col)


def test_training_plan_export(full_run):
    _, _, out = full_run
    with open(out / "episodes" / "training_plan.csv") as f:
        plan = list(csv.DictReader(f))
    assert len(plan) == 2
    assert sorted(int(r["order"]) for r in plan) == [0, 1]
    assert sum(int(r["rollouts"]) for r in plan) == 16


def test_report_rerun_identical(full_run):
    _, _, out = full_run
    before = (out / "report.md").read_bytes()
    assert main(["report", "--out", str(out)]) == EXIT_OK
    assert (out / "report.md").read_bytes() == before


def test_empty_dir_report_warns(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_OK
    report = (tmp_path / "report.md").read_text()
    assert "## Warnings" in report and "no simulation metrics" in report
    assert "warning:" in capsys.readouterr().err


def test_empty_domain_list(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "domains": {**SMALL["domains"], "styles": []}})
    out = tmp_path / "o"
    assert main(["gen-domains", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert not out.exists() or not any(out.rglob("*.json"))


def test_zero_episodes_header_only(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "domains": {**SMALL["domains"], "count": 1},
                                  "episodes": {**SMALL["episodes"], "episodes_per_cell": 0}})
    out = tmp_path / "o"
    for cmd in ("gen-domains", "build-envs", "run-episodes"):
        assert main([cmd, "--config", cfg, "--out", str(out)]) == EXIT_OK
    lines = (out / "episodes" / "rewards.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("env,skill,noise_level,episode")


@pytest.mark.parametrize("bad", [
    {"seed": 1, "bogus": {}},
    {"seed": 1, "domains": {"n_tools": -5}},
    {"seed": 1, "simulation": {"cluster": {"gen_devices": 0}}},
    {"domains": {}},
])
def test_broken_config_exit_2(tmp_path, bad, capsys):
    cfg = write_config(tmp_path, bad)
    assert main(["gen-domains", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    (tmp_path / "x.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "x.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_seed_flag_satisfies_missing_seed(tmp_path):
    cfg = write_config(tmp_path, {"domains": {"count": 0}})
    assert main(["gen-domains", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "o")]) == EXIT_OK


def test_missing_inputs_exit_2(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    assert main(["build-envs", "--config", cfg, "--out", str(tmp_path / "none")]) == EXIT_CONFIG
    assert main(["run-episodes", "--config", cfg, "--out", str(tmp_path / "none")]) == EXIT_CONFIG


def test_strict_small_graph_exit_3(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "domains": {"count": 1, "n_tools": 12, "density": 0.3, "n_tables": 3,
                                                        "test_mode": True},
                                  "envs": {"per_domain": 1, "config": {"strict_min_tools": True}}})
    out = str(tmp_path / "o")
    assert main(["gen-domains", "--config", cfg, "--out", out]) == EXIT_OK
    assert main(["build-envs", "--config", cfg, "--out", out]) == EXIT_INVARIANT


def test_capacity_infeasible_exit_4(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "simulation": {
        "cluster": {"gen_devices": 1, "kv_blocks_per_device": 64}, "workload": {"num_samples": 8}}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_INFEASIBLE


def test_simulate_compare_constant_workload(tmp_path):
    w = {"num_samples": 64, "prompt_sigma": 0, "decode_sigma": 0, "env_sigma": 0, "turns_min": 1, "turns_max": 1}
    cfg = write_config(tmp_path, {**SMALL, "simulation": {"cluster": {"max_version_lag": 0}, "workload": w}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "sim" / "compare.json").read_text())["speedup"] == pytest.approx(1.0, abs=1e-6)


def test_simulate_single_mode(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--mode", "async"]) == EXIT_OK
    assert sorted(p.name for p in (out / "sim").iterdir()) == ["events_async.jsonl", "metrics_async.json"]


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "envscale", "report", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and "report written" in r.stdout
