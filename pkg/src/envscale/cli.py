"""Command-line entry point.

Subcommands share one JSON run config and write everything below ``--out``::

    envscale gen-domains   --config run.json --out runs/a
    envscale build-envs    --config run.json --out runs/a
    envscale run-episodes  --config run.json --out runs/a
    envscale simulate      --config run.json --out runs/a --mode compare
    envscale report        --out runs/a
    envscale all           --config run.json --out runs/a

Exit codes: 0 ok, 2 bad config or missing inputs, 3 invariant violation,
4 infeasible workload.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import random
import sys
from dataclasses import dataclass
from pathlib import Path

from .context import ContextPolicy
from .domain import DomainGenConfig, ToolGraph, generate_domain, validate_toolset
from .environment import EnvConfig, Environment, assemble_environment, check_environment
from .errors import CapacityInfeasible, EnvScaleError, GraphTooSmall, InfeasibleConfig
from .io import atomic_write, read_json, write_json
from .noise import CurriculumState, NoiseProfile, curriculum_step, inject_instruction_noise
from .runtime import EpisodeLimits, RewardReport, ScriptedSolver, reports_to_csv, run_episode
from .sim import ClusterConfig, WorkloadModel, run_simulation
from .strategy import TaskValueState, allocate_budget, curriculum_order, oversampling_coefficient, task_value
from .tasks import generate_task, validate_rubric

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_INFEASIBLE = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "domains": {"count": 20, "n_tools": 64, "density": 0.08, "n_tables": 8, "test_mode": False},
    "envs": {"per_domain": 2, "config": {}},
    "episodes": {
        "skills": [0.0, 0.5, 1.0],
        "noise_levels": [0, 2],
        "episodes_per_cell": 10,
        "max_envs": 4,
        "noise_handling": 0.7,
        "clarification_rate": 0.8,
        "context_policy": {"kind": "hybrid"},
        "limits": {"max_turns": 96, "max_tokens": 128000},
        "curriculum": {"promotion_threshold": 0.1, "skill": 0.9, "steps": 4},
        "training": {"rollouts_per_task": 8, "min_rollouts": 1, "max_rollouts": 16, "k_max": 4, "planning_steps": 5},
    },
    "simulation": {"cluster": {}, "workload": {"num_samples": 256}},
}


class ConfigError(Exception):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    raw: dict

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def domain_configs(self) -> list[DomainGenConfig]:
        d = self.raw["domains"]
        styles = d.get("styles")
        if styles is None:
            styles = list(range(int(d["count"])))
        return [
            DomainGenConfig(n_tools=d["n_tools"], density=d["density"], n_tables=d["n_tables"], style=s,
                            test_mode=bool(d.get("test_mode", False)))
            for s in styles
        ]

    def env_config(self) -> EnvConfig:
        return EnvConfig.from_dict(self.raw["envs"].get("config", {}))

    def validate(self) -> None:
        try:
            for c in self.domain_configs():
                c.validate()
            self.env_config()
            e = self.raw["episodes"]
            ContextPolicy.from_dict(e["context_policy"])
            EpisodeLimits(**e["limits"])
            for s in e["skills"]:
                ScriptedSolver(skill=s)
            for lv in e["noise_levels"]:
                NoiseProfile.at_level(lv)
            ClusterConfig.from_dict(self.raw["simulation"]["cluster"]).validate()
            WorkloadModel.from_dict(self.raw["simulation"]["workload"]).validate()
        except (TypeError, ValueError, KeyError, InfeasibleConfig) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | None, seed: int | None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if "seed" not in raw and seed is None:
            raise ConfigError("config has no seed and --seed was not given")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    rc = RunConfig(cfg)
    rc.validate()
    return rc


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _domain_files(out: Path) -> list[Path]:
    return sorted(p for p in (out / "domains").glob("*.json") if p.name != "validation.json")


# ---- commands


def cmd_gen_domains(cfg: RunConfig, out: Path) -> int:
    reports = {}
    ok = True
    for i, dc in enumerate(cfg.domain_configs()):
        _, graph = generate_domain(cfg.seed * 1000 + i, dc)
        rep = validate_toolset(graph)
        ok &= rep.passed
        name = f"{i:02d}_{graph.domain}"
        atomic_write(out / "domains" / f"{name}.json", graph.dumps() + "\n")
        reports[name] = rep.to_dict()
    if reports:
        write_json(out / "domains" / "validation.json", reports)
    print(f"{len(reports)} domains, validation {'passed' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_build_envs(cfg: RunConfig, out: Path) -> int:
    files = _domain_files(out)
    if not (out / "domains").is_dir():
        _err(f"no domains under {out}; run gen-domains first")
        return EXIT_CONFIG
    econf = cfg.env_config()
    per = int(cfg.raw["envs"]["per_domain"])
    summary = []
    for f in files:
        graph = ToolGraph.loads(f.read_text(encoding="utf-8"))
        usage: dict = {}
        for k in range(per):
            rng = random.Random(f"{cfg.seed}:{f.stem}:{k}")
            try:
                env = assemble_environment(graph, econf, rng, usage)
            except GraphTooSmall as exc:
                _err(str(exc))
                return EXIT_INVARIANT
            problems = check_environment(env, graph, econf.min_tools if econf.strict_min_tools else 20)
            if problems:
                _err(f"{f.stem} env {k}: {problems}")
                return EXIT_INVARIANT
            name = f"{f.stem}/env_{k:04d}.json"
            atomic_write(out / "envs" / name, env.dumps() + "\n")
            summary.append({"env": name, "domain": graph.domain, "tools": len(env.subgraph.included),
                            "seeds": len(env.gold_chains), "complexity": round(env.complexity, 6)})
    write_json(out / "envs" / "summary.json", summary)
    print(f"{len(summary)} environments written")
    return EXIT_OK


def _load_envs(out: Path) -> list[tuple[str, Environment]]:
    graphs = {f.stem: ToolGraph.loads(f.read_text(encoding="utf-8")) for f in _domain_files(out)}
    envs = []
    for p in sorted((out / "envs").glob("*/env_*.json")):
        g = graphs[p.parent.name]
        envs.append((f"{p.parent.name}/{p.stem}", Environment.loads(p.read_text(encoding="utf-8"), g)))
    return envs


def cmd_run_episodes(cfg: RunConfig, out: Path) -> int:
    if not (out / "envs").is_dir():
        _err(f"no environments under {out}; run build-envs first")
        return EXIT_CONFIG
    e = cfg.raw["episodes"]
    envs = _load_envs(out)
    if e.get("max_envs") is not None:
        envs = envs[: int(e["max_envs"])]
    policy = ContextPolicy.from_dict(e["context_policy"])
    limits = EpisodeLimits(**e["limits"])
    fields = ("env", "skill", "noise_level", "episode") + RewardReport.CSV_FIELDS
    rows, traj_lines, rates = [], [], []
    curriculum = []
    plan_lengths: dict[str, int] = {}
    for name, env in envs:
        task = generate_task(env, random.Random(f"{cfg.seed}:{name}:task"))
        if not validate_rubric(task, env):
            _err(f"{name}: rubric failed validation")
            return EXIT_INVARIANT
        clean: dict[float, float] = {}
        for skill in e["skills"]:
            solver = ScriptedSolver(skill, e["noise_handling"], e["clarification_rate"])
            for level in e["noise_levels"]:
                profile = NoiseProfile.at_level(level)
                wins = 0
                n = int(e["episodes_per_cell"])
                for ep in range(n):
                    rng = random.Random(f"{cfg.seed}:{name}:{skill}:{level}:{ep}")
                    t = inject_instruction_noise(task, level, rng, env.graph)
                    traj, rep = run_episode(env, t, solver, profile, policy, limits, rng)
                    wins += rep.reward
                    rows.append({"env": name, "skill": skill, "noise_level": level, "episode": ep, **rep.to_row()})
                    for ev in traj.events:
                        traj_lines.append(json.dumps({"env": name, "skill": skill, "noise_level": level,
                                                      "episode": ep, **ev}, sort_keys=True))
                rate = wins / n if n else 0.0
                if level == 0:
                    clean[skill] = rate
                gap = clean.get(skill, rate) - rate
                rates.append({"env": name, "skill": skill, "noise_level": level, "pass_rate": rate,
                              "robustness_gap": round(gap, 12)})
        curriculum.append({"env": name, "history": _curriculum(env, task, cfg, policy, limits, name)})
        plan_lengths[name] = len(task.plan)
    atomic_write(out / "episodes" / "rewards.csv", reports_to_csv(rows, fields))
    atomic_write(out / "episodes" / "trajectories.jsonl", "".join(line + "\n" for line in traj_lines))
    atomic_write(out / "episodes" / "pass_rates.csv",
                 reports_to_csv(rates, ("env", "skill", "noise_level", "pass_rate", "robustness_gap")))
    write_json(out / "episodes" / "curriculum.json", curriculum)
    atomic_write(out / "episodes" / "training_plan.csv", _training_plan(rows, plan_lengths, e["training"]))
    print(f"{len(rows)} episodes over {len(envs)} environments")
    return EXIT_OK


def _training_plan(rows: list[dict], plan_lengths: dict[str, int], t: dict) -> str:
    """Per-task value, rollout budget, oversampling coefficient and curriculum position from clean episodes."""
    names = list(plan_lengths)
    fields = ("env", "pass_rate", "value", "rollouts", "oversampling", "tier", "order")
    if not names:
        return reports_to_csv([], fields)
    states = []
    for n in names:
        rewards = [r["reward"] for r in rows if r["env"] == n and r["noise_level"] == 0]
        states.append(TaskValueState(n).update(rewards))
    values = [task_value(s) for s in states]
    total = min(max(int(t["rollouts_per_task"]) * len(names), int(t["min_rollouts"]) * len(names)),
                int(t["max_rollouts"]) * len(names))
    alloc = allocate_budget(values, total, int(t["min_rollouts"]), int(t["max_rollouts"]))
    tiers = ["planning" if plan_lengths[n] >= int(t["planning_steps"]) else "basic" for n in names]
    order = curriculum_order([(1 - s.pass_rate, tr) for s, tr in zip(states, tiers)], [("basic", "planning")])
    position = {i: k for k, i in enumerate(order)}
    out = [{"env": n, "pass_rate": s.pass_rate, "value": v, "rollouts": a,
            "oversampling": oversampling_coefficient(s.pass_rate, int(t["k_max"])), "tier": tr, "order": position[i]}
           for i, (n, s, v, a, tr) in enumerate(zip(names, states, values, alloc, tiers))]
    return reports_to_csv(out, fields)


def _curriculum(env, task, cfg: RunConfig, policy, limits, name: str) -> list:
    c = cfg.raw["episodes"]["curriculum"]
    e = cfg.raw["episodes"]
    state = CurriculumState(0, c["promotion_threshold"])
    solver = ScriptedSolver(c["skill"], e["noise_handling"], e["clarification_rate"])
    n = max(1, int(e["episodes_per_cell"]))

    def rate(level: int) -> float:
        wins = 0
        for ep in range(n):
            rng = random.Random(f"{cfg.seed}:{name}:curriculum:{level}:{ep}")
            t = inject_instruction_noise(task, level, rng, env.graph)
            wins += run_episode(env, t, solver, NoiseProfile.at_level(level), policy, limits, rng)[1].reward
        return wins / n

    clean = rate(0)
    for _ in range(int(c["steps"])):
        state = curriculum_step(state, clean, rate(state.current_level))
    return [list(h) for h in state.history] + [["final", state.current_level]]


def cmd_simulate(cfg: RunConfig, out: Path, mode: str) -> int:
    s = cfg.raw["simulation"]
    cluster = ClusterConfig.from_dict(s["cluster"])
    workload = WorkloadModel.from_dict(s["workload"])
    modes = ["sync", "async"] if mode == "compare" else [mode]
    results = {}
    try:
        for m in modes:
            metrics, sim = run_simulation(cluster, workload, m, cfg.seed, log=True)
            results[m] = metrics
            write_json(out / "sim" / f"metrics_{m}.json", metrics.to_dict())
            atomic_write(out / "sim" / f"events_{m}.jsonl", sim.event_log_jsonl())
    except CapacityInfeasible as exc:
        _err(f"capacity infeasible: {exc}")
        return EXIT_INFEASIBLE
    if mode == "compare":
        sp = results["async"].samples_per_sec / results["sync"].samples_per_sec if results["sync"].samples_per_sec else 0.0
        write_json(out / "sim" / "compare.json", {
            "speedup": sp,
            "sync_makespan": results["sync"].makespan,
            "async_makespan": results["async"].makespan,
        })
        print(f"async/sync throughput ratio {sp:.3f}")
    return EXIT_OK


def cmd_report(out: Path) -> int:
    lines = ["# Run report", ""]
    warnings = []

    def section(title: str) -> None:
        lines.extend([f"## {title}", ""])

    section("Domains")
    val = out / "domains" / "validation.json"
    if val.exists():
        v = read_json(val)
        passed = sum(1 for r in v.values() if r["passed"])
        lines.append(f"{len(v)} domains, {passed} pass validation.")
    else:
        warnings.append("no domain validation report")
    lines.append("")

    section("Environments")
    summ = out / "envs" / "summary.json"
    plot_rows = []
    if summ.exists():
        s = read_json(summ)
        if s:
            sizes = [r["tools"] for r in s]
            lines.append(f"{len(s)} environments; tools min {min(sizes)}, max {max(sizes)}, "
                         f"mean {sum(sizes) / len(sizes):.2f}; all >= 20: {min(sizes) >= 20}.")
            plot_rows = [{"env": r["env"], "tools": r["tools"], "complexity": r["complexity"]} for r in s]
        else:
            lines.append("no environments.")
    else:
        warnings.append("no environment summary")
    lines.append("")

    section("Episodes")
    pr = out / "episodes" / "pass_rates.csv"
    if pr.exists():
        with open(pr, encoding="utf-8") as f:
            rates = list(csv.DictReader(f))
        agg: dict = {}
        for r in rates:
            agg.setdefault((float(r["skill"]), int(r["noise_level"])), []).append(float(r["pass_rate"]))
        lines.append("| skill | noise level | mean pass rate |")
        lines.append("|---|---|---|")
        for (sk, lv), v in sorted(agg.items()):
            lines.append(f"| {sk} | {lv} | {sum(v) / len(v):.4f} |")
    else:
        warnings.append("no episode pass rates")
    lines.append("")
    tp = out / "episodes" / "training_plan.csv"
    if tp.exists():
        with open(tp, encoding="utf-8") as f:
            plan = list(csv.DictReader(f))
        lines.append(f"Training plan: {len(plan)} tasks, {sum(int(r['rollouts']) for r in plan)} rollouts allocated.")
        lines.append("")

    section("Simulation")
    cmp_ = out / "sim" / "compare.json"
    any_sim = False
    for m in ("sync", "async"):
        p = out / "sim" / f"metrics_{m}.json"
        if p.exists():
            any_sim = True
            d = read_json(p)
            lines.append(f"- {m}: makespan {d['makespan']:.3f}, samples/s {d['samples_per_sec']:.4f}, "
                         f"load ratio {d['request_load_ratio']:.4f}, max staleness {d['max_staleness']}, "
                         f"recomputations {d['kv_recomputations']}")
    if cmp_.exists():
        lines.append(f"- async/sync throughput ratio: {read_json(cmp_)['speedup']:.4f}")
    if not any_sim:
        warnings.append("no simulation metrics")
    lines.append("")

    if warnings:
        section("Warnings")
        lines.extend(f"- {w}" for w in warnings)
        lines.append("")
    atomic_write(out / "report.md", "\n".join(lines))
    if plot_rows:
        atomic_write(out / "plots" / "env_sizes.csv", reports_to_csv(plot_rows, ("env", "tools", "complexity")))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"report written to {out / 'report.md'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="envscale", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen-domains", "build-envs", "run-episodes", "simulate", "report", "all"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--mode", choices=("sync", "async", "compare"), default="compare")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    if args.command == "report":
        return cmd_report(out)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        if args.command == "gen-domains":
            return cmd_gen_domains(cfg, out)
        if args.command == "build-envs":
            return cmd_build_envs(cfg, out)
        if args.command == "run-episodes":
            return cmd_run_episodes(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.mode)
        for step in (
            lambda: cmd_gen_domains(cfg, out),
            lambda: cmd_build_envs(cfg, out),
            lambda: cmd_run_episodes(cfg, out),
            lambda: cmd_simulate(cfg, out, args.mode),
            lambda: cmd_report(out),
        ):
            code = step()
            if code != EXIT_OK:
                return code
        return EXIT_OK
    except InfeasibleConfig as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except EnvScaleError as exc:
        _err(str(exc))
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
