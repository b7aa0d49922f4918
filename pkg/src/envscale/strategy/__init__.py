from .budget import (
    TaskValueState,
    ValueWeights,
    allocate_budget,
    allocation_utility,
    oversampling_coefficient,
    task_value,
)
from .gspo import TrajectoryGroup, group_advantages, gspo_objective, sequence_importance_ratio
from .hparams import HparamLaws, HparamPoint, PowerLaw, fit_power_law, predict_optimal_hparams
from .schedule import curriculum_order, self_verification_trigger
from .selection import kcg_select, sliding_window_ppl

__all__ = [
    "HparamLaws",
    "HparamPoint",
    "PowerLaw",
    "TaskValueState",
    "TrajectoryGroup",
    "ValueWeights",
    "allocate_budget",
    "allocation_utility",
    "curriculum_order",
    "fit_power_law",
    "group_advantages",
    "gspo_objective",
    "kcg_select",
    "oversampling_coefficient",
    "predict_optimal_hparams",
    "self_verification_trigger",
    "sequence_importance_ratio",
    "sliding_window_ppl",
    "task_value",
]
