import random

import pytest

from envscale.domain import DomainGenConfig, generate_domain
from envscale.environment import EnvConfig, assemble_environment
from envscale.tasks import generate_task


def make_graph(seed=1, style=0, **kw):
    return generate_domain(seed, DomainGenConfig(style=style, **kw))[1]


def small_graph(seed, n_tools=8, n_tables=2, density=0.2):
    return generate_domain(seed, DomainGenConfig(n_tools=n_tools, n_tables=n_tables, density=density, test_mode=True))[1]


def build_envs(count, styles=range(20), seed=0, config=None):
    """``count`` environments spread over the given domain styles, with one task each."""
    styles = list(styles)
    graphs = [make_graph(seed=seed * 100 + s, style=s) for s in styles]
    usage = [dict() for _ in styles]
    out = []
    for i in range(count):
        k = i % len(styles)
        rng = random.Random(f"{seed}:{i}")
        env = assemble_environment(graphs[k], config or EnvConfig(), rng, usage[k])
        out.append((graphs[k], env, generate_task(env, rng)))
    return out


@pytest.fixture(scope="session")
def graph():
    return make_graph()


@pytest.fixture(scope="session")
def env_pool():
    return build_envs(40)


# criterion number -> (passed, one-line detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
