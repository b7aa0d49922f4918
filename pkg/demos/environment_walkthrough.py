"""Build one domain, carve an environment out of it, and run a few agents through a task."""

import random

from envscale.context import ContextPolicy
from envscale.domain import DomainGenConfig, generate_domain, validate_toolset
from envscale.environment import EnvConfig, assemble_environment
from envscale.noise import NoiseProfile, inject_instruction_noise
from envscale.runtime import EpisodeLimits, ScriptedSolver, run_episode
from envscale.tasks import generate_task

_, graph = generate_domain(11, DomainGenConfig(style=3))
print(f"domain {graph.domain}: {len(graph)} tools, density {graph.density():.3f}")
print("validation passed:", validate_toolset(graph).passed)

env = assemble_environment(graph, EnvConfig(), random.Random(0))
print(f"environment: {len(env.subgraph.included)} tools, {len(env.gold_chains)} gold chains, "
      f"complexity {env.complexity:.2f}")
for line in env.provenance[:6]:
    print("  ", line)

task = generate_task(env, random.Random(1))
print("\ntask:", task.description[:200])
print(f"plan of {len(task.plan)} steps, {len(task.rubric.predicates)} rubric predicates")

# pass rate by skill, clean and with level-3 noise
for skill in (0.9, 0.97, 1.0):
    row = []
    for level in (0, 3):
        wins = 0
        for ep in range(100):
            rng = random.Random(ep)
            t = inject_instruction_noise(task, level, rng, graph)
            _, rep = run_episode(env, t, ScriptedSolver(skill, 0.7, 0.9), NoiseProfile.at_level(level),
                                 ContextPolicy(), EpisodeLimits(max_turns=96), rng)
            wins += rep.reward
        row.append(wins / 100)
    print(f"skill {skill}: clean {row[0]:.2f}  noisy {row[1]:.2f}  gap {row[0] - row[1]:+.2f}")
