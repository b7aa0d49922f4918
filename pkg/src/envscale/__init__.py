"""Synthetic tool-use environments, noisy agent episodes, training math and a rollout simulator."""

from .context import ContextPolicy, apply_policy, summarize
from .database import DatabaseState, execute_tool
from .domain import DomainGenConfig, ToolGraph, generate_domain, validate_toolset
from .environment import EnvConfig, Environment, assemble_environment, check_environment
from .errors import (
    CapacityInfeasible,
    CyclicOrder,
    EnvScaleError,
    GraphTooSmall,
    InfeasibleBudget,
    InfeasibleConfig,
)
from .noise import CurriculumState, NoiseProfile, NoisyExecutor, curriculum_step, inject_instruction_noise, verify_solvability
from .runtime import EpisodeLimits, RewardReport, ScriptedSolver, Trajectory, evaluate_trajectory, run_episode
from .tasks import Rubric, Task, generate_task, validate_rubric

__version__ = "0.1.0"
