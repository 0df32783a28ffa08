"""Logistic coral-cover recovery after a disturbance.

Cover follows the closed-form logistic curve. Expert knowledge enters as
two range constraints (slow early growth, recovery close to carrying
capacity) and three sparse survey points form the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import PriorSpec, Uniform
from ..likelihood import TimeSeriesDataset, gaussian_log_likelihood
from .base import CaseModel

DATASET = TimeSeriesDataset(times=(1.0, 3.0, 10.0), channels=("cover",), values=np.array([[4.0, 4.0, 10.0]]))

R_PRIOR = Uniform(0.0, 0.5)
K_PRIOR = Uniform(60.0, 80.0)
Y0_PRIOR = Uniform(0.0, 5.0)
SIGMA_PRIOR = Uniform(0.1, 5.0)


@dataclass(frozen=True)
class LogisticParams:
    r: float
    K: float
    y0: float
    sigma: float | None = None

    @classmethod
    def from_vector(cls, theta) -> "LogisticParams":
        sigma = float(theta[3]) if len(theta) > 3 else None
        return cls(float(theta[0]), float(theta[1]), float(theta[2]), sigma)


@dataclass(frozen=True)
class LogisticConstraints:
    """Early cover must stay at or below ``early_max`` at ``early_time``;
    cover at ``late_time`` must be within ``late_margin`` of K."""

    early_time: float = 5.0
    early_max: float = 10.0
    late_time: float = 50.0
    late_margin: float = 1.0
    use_early: bool = True
    use_late: bool = True


def logistic_solution(params: LogisticParams, t):
    """y(t) = K*y0 / (y0 + (K - y0) exp(-r t)); vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    K, y0 = params.K, params.y0
    if y0 == 0.0:
        return np.zeros_like(t) if t.ndim else 0.0
    y = K * y0 / (y0 + (K - y0) * np.exp(-params.r * t))
    return y if t.ndim else float(y)


def logistic_summaries(params: LogisticParams, constraints: LogisticConstraints = LogisticConstraints()):
    return (
        logistic_solution(params, constraints.early_time),
        logistic_solution(params, constraints.late_time),
    )


def logistic_discrepancy(params: LogisticParams, constraints: LogisticConstraints = LogisticConstraints()) -> float:
    y5, y50 = logistic_summaries(params, constraints)
    rho = 0.0
    if constraints.use_early:
        rho += max(0.0, y5 - constraints.early_max)
    if constraints.use_late:
        rho += max(0.0, params.K - constraints.late_margin - y50)
    return rho


def logistic_log_likelihood(params: LogisticParams, dataset: TimeSeriesDataset = DATASET) -> float:
    if params.sigma is None:
        raise ValueError("likelihood needs a noise sigma")
    sim = logistic_solution(params, dataset.time_array)[None, :]
    return gaussian_log_likelihood(sim, dataset, [params.sigma])


class LogisticModel(CaseModel):
    case = "logistic"
    channels = ("cover",)

    def __init__(self, with_sigma: bool = False, constraints: LogisticConstraints = LogisticConstraints(),
                 sigma_prior: Uniform = SIGMA_PRIOR):
        items = [("r", R_PRIOR), ("K", K_PRIOR), ("y0", Y0_PRIOR)]
        if with_sigma:
            items.append(("sigma", sigma_prior))
        super().__init__(PriorSpec.from_items(items))
        self.constraints = constraints
        self.with_sigma = with_sigma

    def log_likelihood(self, theta):
        return logistic_log_likelihood(LogisticParams.from_vector(theta))

    def discrepancy(self, theta):
        return logistic_discrepancy(LogisticParams.from_vector(theta), self.constraints)

    def derived(self, theta):
        p = LogisticParams.from_vector(theta)
        y5, y50 = logistic_summaries(p, self.constraints)
        return {"y_early": y5, "y_late": y50}

    def default_grid(self):
        return np.linspace(0.0, 60.0, 121)

    def predict(self, theta, grid):
        return np.atleast_2d(logistic_solution(LogisticParams.from_vector(theta), np.asarray(grid, dtype=float)))

