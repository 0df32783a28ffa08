"""Normal mean with known noise: a conjugate validation target.

A wide uniform prior stands in for a flat one, so the exact posterior is a
normal truncated to the prior box.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from ..core import PriorSpec, Uniform
from ..likelihood import HALF_LOG_2PI
from .base import CaseModel

NOISE_SD = 1.0
TRUE_MEAN = 1.5
N_POINTS = 20
DATA_SEED = 20240521
PRIOR = Uniform(-10.0, 10.0)


def synthetic_data(n: int = N_POINTS, mean: float = TRUE_MEAN, sd: float = NOISE_SD, seed: int = DATA_SEED) -> np.ndarray:
    return np.random.default_rng(seed).normal(mean, sd, n)


def analytic_posterior(data, sd: float = NOISE_SD, prior: Uniform = PRIOR) -> tuple[float, float]:
    """Mean and standard deviation of the exact (truncated normal) posterior."""
    data = np.asarray(data, dtype=float)
    loc = float(data.mean())
    scale = sd / math.sqrt(data.size)
    a, b = (prior.lo - loc) / scale, (prior.hi - loc) / scale
    dist = stats.truncnorm(a, b, loc=loc, scale=scale)
    return float(dist.mean()), float(dist.std())


class GaussianToyModel(CaseModel):
    case = "gaussian-toy"
    channels = ("y",)

    def __init__(self, data=None, sd: float = NOISE_SD):
        super().__init__(PriorSpec.from_items([("mu", PRIOR)]))
        self.data = synthetic_data() if data is None else np.asarray(data, dtype=float)
        self.sd = sd
        self._n = self.data.size
        self._sum = float(self.data.sum())
        self._sumsq = float(np.sum(self.data**2))

    def log_likelihood(self, theta):
        mu = float(theta[0])
        ss = self._sumsq - 2.0 * mu * self._sum + self._n * mu * mu
        return -self._n * (HALF_LOG_2PI + math.log(self.sd)) - 0.5 * ss / self.sd**2

    def discrepancy(self, theta):
        return 0.0

    def default_grid(self):
        return np.array([0.0])

    def predict(self, theta, grid):
        return np.full((1, len(grid)), float(theta[0]))
