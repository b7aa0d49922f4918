"""Power-law fits and hyperparameter prediction from a checkpoint's loss."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HparamPoint:
    compute: float
    batch_size: float
    learning_rate: float
    loss: float

    def __post_init__(self):
        if min(self.compute, self.batch_size, self.learning_rate, self.loss) <= 0:
            raise ValueError("all fields must be positive")


@dataclass(frozen=True)
class PowerLaw:
    """``y = coefficient * x ** exponent``."""

    coefficient: float
    exponent: float
    residual: float = 0.0
    x_range: tuple[float, float] = (0.0, math.inf)

    def __call__(self, x):
        return self.coefficient * np.power(x, self.exponent)

    def inverse(self, y: float) -> float:
        if self.exponent == 0:
            raise ValueError("a flat law cannot be inverted")
        return (y / self.coefficient) ** (1.0 / self.exponent)


def fit_power_law(points: Sequence[tuple[float, float]]) -> PowerLaw:
    """Least squares on ``(log x, log y)``; the residual is the RMS log error."""
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    xy = np.asarray(points, dtype=float)
    if (xy <= 0).any() or not np.isfinite(xy).all():
        raise ValueError("power-law points must be positive and finite")
    lx, ly = np.log(xy[:, 0]), np.log(xy[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("need at least two distinct x values")
    A = np.column_stack([np.ones_like(lx), lx])
    (la, b), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (la + b * lx)
    return PowerLaw(float(math.exp(la)), float(b), float(np.sqrt(np.mean(resid ** 2))), (float(xy[:, 0].min()), float(xy[:, 0].max())))


@dataclass(frozen=True)
class HparamLaws:
    loss: PowerLaw
    batch_size: PowerLaw
    learning_rate: PowerLaw

    @classmethod
    def fit(cls, points: Sequence[HparamPoint]) -> "HparamLaws":
        return cls(
            fit_power_law([(p.compute, p.loss) for p in points]),
            fit_power_law([(p.compute, p.batch_size) for p in points]),
            fit_power_law([(p.compute, p.learning_rate) for p in points]),
        )


@dataclass(frozen=True)
class HparamPrediction:
    batch_size: float
    learning_rate: float
    equivalent_compute: float
    extrapolated: bool


def predict_optimal_hparams(checkpoint_loss: float, actual_compute: float, laws: HparamLaws) -> HparamPrediction:
    """Map a checkpoint's loss to equivalent compute, add the compute still to be spent, evaluate the laws.

    With ``actual_compute=0`` the prediction is for the checkpoint itself.
    Losses outside the fitted range are answered but flagged as extrapolated.
    """
    if checkpoint_loss <= 0 or actual_compute < 0:
        raise ValueError("loss must be positive and compute nonnegative")
    eq = laws.loss.inverse(checkpoint_loss)
    lo, hi = laws.loss.x_range
    extrapolated = not (lo * (1 - 1e-12) <= eq <= hi * (1 + 1e-12))
    c = eq + actual_compute
    return HparamPrediction(float(laws.batch_size(c)), float(laws.learning_rate(c)), float(eq), extrapolated)
