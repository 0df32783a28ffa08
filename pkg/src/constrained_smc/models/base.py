from __future__ import annotations

import math

import numpy as np

from ..core import CalibrationTarget, ConfigError, PriorSpec

MODES = ("prior", "nonempirical", "data", "both")


class CaseModel:
    """One case study with a fixed parameter layout.

    Subclasses set ``case``, ``prior`` and ``channels`` and implement the
    evaluation hooks they support. ``theta`` is always in sampler space.
    """

    case = "model"
    supports_data = True
    channels: tuple[str, ...] = ()

    def __init__(self, prior: PriorSpec):
        self.prior = prior

    @property
    def names(self) -> tuple[str, ...]:
        return self.prior.names

    def log_likelihood(self, theta) -> float:
        raise NotImplementedError(f"{self.case} has no dataset")

    def discrepancy(self, theta) -> float:
        raise NotImplementedError

    def evaluate(self, theta, epsilon: float, use_likelihood: bool, use_discrepancy: bool):
        rho = self.discrepancy(theta) if use_discrepancy else 0.0
        if rho > epsilon:
            return math.nan, rho
        ll = self.log_likelihood(theta) if use_likelihood else 0.0
        return ll, rho

    def derived(self, theta) -> dict[str, float]:
        return {}

    def default_grid(self) -> np.ndarray:
        raise NotImplementedError

    def predict(self, theta, grid) -> np.ndarray | None:
        """Simulated ``[channel, time]`` matrix on ``grid``; None on failure."""
        raise NotImplementedError


class ModelTarget(CalibrationTarget):
    """Binds a :class:`CaseModel` to a choice of information sources."""

    def __init__(self, model: CaseModel, use_likelihood: bool, use_discrepancy: bool):
        super().__init__(model.prior, use_likelihood, use_discrepancy)
        self.model = model
        self.name = model.case

    def log_likelihood(self, theta):
        return self.model.log_likelihood(theta) if self.has_likelihood else 0.0

    def discrepancy(self, theta):
        return self.model.discrepancy(theta) if self.has_discrepancy else 0.0

    def evaluate(self, theta, epsilon=math.inf):
        ll, rho = self.model.evaluate(theta, epsilon, self.has_likelihood, self.has_discrepancy)
        if math.isnan(rho):
            rho = math.inf
        if rho > epsilon:
            return math.nan, rho
        if math.isnan(ll) or ll == math.inf:
            ll = -math.inf
        if self.has_likelihood and ll == -math.inf:
            rho = math.inf
        return ll, rho

    def derived(self, theta):
        return self.model.derived(theta)


def mode_flags(mode: str, supports_data: bool = True) -> tuple[bool, bool]:
    """``(use_likelihood, use_discrepancy)`` for a constraint mode."""
    if mode not in MODES:
        raise ConfigError(f"unknown constraint mode {mode!r}; choose from {MODES}")
    use_data = mode in ("data", "both")
    if use_data and not supports_data:
        raise ConfigError(f"mode {mode!r} needs a dataset, which this case does not have")
    return use_data, mode in ("nonempirical", "both")
