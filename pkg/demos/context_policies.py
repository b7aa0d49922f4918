"""Summary, discard-all and hybrid context policies on long, token-heavy episodes."""

import random

from envscale.context import ContextPolicy
from envscale.domain import DomainGenConfig, generate_domain
from envscale.environment import EnvConfig, assemble_environment
from envscale.noise import NoiseProfile, inject_instruction_noise
from envscale.runtime import CostModel, EpisodeLimits, ScriptedSolver, run_episode
from envscale.tasks import generate_task


# heavy reasoning and bulky tool results push contexts past the summary threshold
costs = CostModel(reasoning=4000, result_base=3000)
limits = EpisodeLimits(max_turns=600, max_tokens=128_000)
solver = ScriptedSolver(1.0, 1.0, 1.0, retry_budget=3)
graphs = [generate_domain(500 + s, DomainGenConfig(style=s))[1] for s in range(10)]
pool = []
for i in range(30):
    g = graphs[i % 10]
    pool.append((g, assemble_environment(g, EnvConfig(), random.Random(f"env:{i}")), None))

done = {}
for kind in ("summary", "discard_all", "hybrid"):
    policy = ContextPolicy(kind, max_turns=16)
    done[kind] = set()
    ends: dict = {}
    for i, (g, env, _) in enumerate(pool):
        task = generate_task(env, random.Random(i), (0.0, 0.3))
        for s in range(2):
            rng = random.Random(s)
            t = inject_instruction_noise(task, 3, rng, g)
            rep = run_episode(env, t, solver, NoiseProfile(instruction_level=3), policy, limits, rng, costs=costs)[1]
            ends[rep.termination] = ends.get(rep.termination, 0) + 1
            if rep.reward:
                done[kind].add((i, s))
    print(f"{kind:12s} solved {len(done[kind]):3d}/{2 * len(pool)}  endings {ends}")

union = done["summary"] | done["discard_all"]
print("hybrid covers both:", union <= done["hybrid"])
