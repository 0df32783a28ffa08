"""Domain types shared by the sampler and the case-study models.

Parameters live in *sampler space*: uniform marginals are carried as-is,
log10-uniform marginals are carried as their base-10 exponent. Models
convert to linear values themselves when they evaluate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or model binding."""


@dataclass(frozen=True)
class ParameterVector:
    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) == 0:
            raise ValueError("a parameter vector needs at least one entry")
        if len(self.names) != len(self.values):
            raise ValueError(
                f"{len(self.names)} names but {len(self.values)} values"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("parameter values must be finite")

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"Uniform needs finite lo < hi, got ({self.lo}, {self.hi})")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.lo, self.hi

    def to_model(self, x):
        return x


@dataclass(frozen=True)
class Log10Uniform:
    """log10(value) ~ U(lo_exp, hi_exp); sampler space holds the exponent."""

    lo_exp: float
    hi_exp: float

    def __post_init__(self):
        if not (math.isfinite(self.lo_exp) and math.isfinite(self.hi_exp)) or not self.lo_exp < self.hi_exp:
            raise ValueError(
                f"Log10Uniform needs finite lo_exp < hi_exp, got ({self.lo_exp}, {self.hi_exp})"
            )

    @property
    def bounds(self) -> tuple[float, float]:
        return self.lo_exp, self.hi_exp

    def to_model(self, x):
        return 10.0 ** np.asarray(x)


Marginal = Uniform | Log10Uniform


@dataclass(frozen=True)
class PriorSpec:
    """Independent box prior over sampler-space coordinates."""

    names: tuple[str, ...]
    marginals: tuple[Marginal, ...]

    def __post_init__(self):
        if len(self.names) == 0:
            raise ValueError("prior must have at least one dimension")
        if len(self.names) != len(self.marginals):
            raise ValueError("names and marginals differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate parameter names")
        object.__setattr__(self, "_lo", np.array([m.bounds[0] for m in self.marginals]))
        object.__setattr__(self, "_hi", np.array([m.bounds[1] for m in self.marginals]))
        object.__setattr__(self, "_log_volume", float(np.sum(np.log(self._hi - self._lo))))

    @classmethod
    def from_items(cls, items: Sequence[tuple[str, Marginal]]) -> "PriorSpec":
        names, marginals = zip(*items)
        return cls(tuple(names), tuple(marginals))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def lower(self) -> np.ndarray:
        return self._lo.copy()

    @property
    def upper(self) -> np.ndarray:
        return self._hi.copy()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw an ``(n, dim)`` array of sampler-space vectors."""
        u = rng.random((n, self.dim))
        return self._lo + u * (self._hi - self._lo)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self._lo) and np.all(theta <= self._hi))

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates, got shape {theta.shape}")
        if not self.contains(theta):
            return -math.inf
        return -self._log_volume

    def to_model(self, theta) -> np.ndarray:
        """Map sampler-space coordinates to linear model values (last axis)."""
        theta = np.asarray(theta, dtype=float)
        out = np.array(theta, copy=True)
        for j, m in enumerate(self.marginals):
            if isinstance(m, Log10Uniform):
                out[..., j] = 10.0 ** theta[..., j]
        return out

    def mean(self) -> np.ndarray:
        return 0.5 * (self._lo + self._hi)

    def variance(self) -> np.ndarray:
        return (self._hi - self._lo) ** 2 / 12.0


def prior_sample(prior: PriorSpec, rng: np.random.Generator) -> ParameterVector:
    values = prior.sample(rng, 1)[0]
    return ParameterVector(prior.names, tuple(float(v) for v in values))


def prior_log_density(prior: PriorSpec, theta: ParameterVector | Sequence[float]) -> float:
    if isinstance(theta, ParameterVector):
        theta = theta.values
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (prior.dim,):
        raise ValueError(f"dimension mismatch: prior has {prior.dim}, theta has {theta.size}")
    return prior.log_density(theta)


class CalibrationTarget:
    """Model binding consumed by the sampler.

    Subclasses implement :meth:`log_likelihood` and/or :meth:`discrepancy`
    over sampler-space vectors and set the two capability flags. A
    simulation failure is reported as ``(-inf, +inf)`` so the sampler
    rejects it.
    """

    name = "target"

    def __init__(self, prior: PriorSpec, has_likelihood: bool, has_discrepancy: bool):
        if not (has_likelihood or has_discrepancy):
            raise ConfigError("target needs a likelihood, a discrepancy, or both")
        self.prior = prior
        self.has_likelihood = has_likelihood
        self.has_discrepancy = has_discrepancy

    @property
    def names(self) -> tuple[str, ...]:
        return self.prior.names

    def log_likelihood(self, theta: np.ndarray) -> float:
        return 0.0

    def discrepancy(self, theta: np.ndarray) -> float:
        return 0.0

    def evaluate(self, theta: np.ndarray, epsilon: float = math.inf) -> tuple[float, float]:
        """Return ``(log_likelihood, discrepancy)``.

        The likelihood is skipped (returned as ``nan``) when the discrepancy
        already exceeds ``epsilon``; such a proposal is rejected anyway.
        """
        rho = self.discrepancy(theta) if self.has_discrepancy else 0.0
        if rho > epsilon:
            return math.nan, rho
        if not self.has_likelihood:
            return 0.0, rho
        ll = self.log_likelihood(theta)
        if math.isnan(ll) or ll == math.inf:
            ll = -math.inf
        if ll == -math.inf:
            # simulation failure: excluded through the indicator as well
            rho = math.inf
        return ll, rho

    def derived(self, theta: np.ndarray) -> dict[str, float]:
        """Extra per-particle columns written next to the parameters."""
        return {}


@dataclass
class Particle:
    theta: ParameterVector
    log_likelihood: float
    discrepancy: float
    log_weight: float


@dataclass
class Ensemble:
    """Weighted particle population plus annealing state.

    Stored column-wise: ``theta`` is ``(n, d)`` in sampler space.
    """

    names: tuple[str, ...]
    theta: np.ndarray
    log_likelihood: np.ndarray
    discrepancy: np.ndarray
    log_weight: np.ndarray
    gamma: float = 0.0
    epsilon: float = math.inf
    iteration: int = 0
    rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        n = self.theta.shape[0]
        for attr in ("log_likelihood", "discrepancy", "log_weight"):
            arr = np.asarray(getattr(self, attr), dtype=float).reshape(-1)
            if arr.shape[0] != n:
                raise ValueError(f"{attr} has {arr.shape[0]} entries for {n} particles")
            setattr(self, attr, arr)
        if self.theta.shape[1] != len(self.names):
            raise ValueError("theta columns do not match names")

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    def weights(self) -> np.ndarray:
        from .sampler import normalize_log_weights

        return np.exp(normalize_log_weights(self.log_weight))

    def particles(self) -> Iterator[Particle]:
        for i in range(self.n):
            yield Particle(
                ParameterVector(self.names, tuple(float(v) for v in self.theta[i])),
                float(self.log_likelihood[i]),
                float(self.discrepancy[i]),
                float(self.log_weight[i]),
            )

    def copy(self) -> "Ensemble":
        return Ensemble(
            self.names,
            self.theta.copy(),
            self.log_likelihood.copy(),
            self.discrepancy.copy(),
            self.log_weight.copy(),
            self.gamma,
            self.epsilon,
            self.iteration,
            self.rng,
        )


@dataclass(frozen=True)
class SmcConfig:
    """Tuning constants for :func:`constrained_smc.sampler.run_smc`.

    ``ess_min_frac`` is a fraction of ``n_particles``. ``c_move`` is the
    desired probability that a particle moves at least once during the
    MCMC phase of an iteration.
    """

    n_particles: int = 1000
    a_keep: float = 0.6
    ess_min_frac: float = 0.3
    c_move: float = 0.99
    n_mcmc_trial: int = 10
    target_epsilon: float = 0.0
    seed: int = 0
    max_iterations: int = 500
    bisection_tol: float = 1e-2
    max_mcmc_steps: int = 100
    resampling: str = "multinomial"

    def __post_init__(self):
        if self.n_particles < 10:
            raise ConfigError("n_particles must be >= 10")
        for name in ("a_keep", "ess_min_frac", "c_move"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not self.ess_min_frac < self.a_keep:
            raise ConfigError("ess_min_frac must be smaller than a_keep")
        if self.n_mcmc_trial < 1:
            raise ConfigError("n_mcmc_trial must be >= 1")
        if self.max_mcmc_steps < 1:
            raise ConfigError("max_mcmc_steps must be >= 1")
        if self.target_epsilon < 0:
            raise ConfigError("target_epsilon must be non-negative")
        if self.bisection_tol <= 0:
            raise ConfigError("bisection_tol must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.resampling not in ("multinomial", "systematic"):
            raise ConfigError(f"unknown resampling scheme {self.resampling!r}")
