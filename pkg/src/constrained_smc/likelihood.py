"""Gaussian measurement-noise likelihood over time-series data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Observations ``values[channel, time]``; NaN marks a missing entry."""

    times: tuple[float, ...]
    channels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        object.__setattr__(self, "values", values)
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("times must be a non-empty 1-D sequence")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if values.shape != (len(self.channels), t.size):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"{len(self.channels)} channels x {t.size} times"
            )

    @property
    def time_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    def n_observed(self) -> np.ndarray:
        """Number of present observations per channel."""
        return np.sum(~np.isnan(self.values), axis=1)

    def rows(self):
        """Long-format ``(time, channel, value)`` rows, missing entries skipped."""
        for j, t in enumerate(self.times):
            for i, ch in enumerate(self.channels):
                v = self.values[i, j]
                if not np.isnan(v):
                    yield t, ch, float(v)


@dataclass(frozen=True)
class GaussianNoiseSpec:
    """Per-channel noise scale: an index into the parameter vector or a constant.

    ``sources[i]`` is either ``("param", k)`` or ``("fixed", sigma)``.
    """

    sources: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for kind, val in self.sources:
            if kind == "param":
                if int(val) != val or val < 0:
                    raise ValueError(f"bad parameter index {val}")
            elif kind == "fixed":
                if not val > 0:
                    raise ValueError("fixed sigma must be positive")
            else:
                raise ValueError(f"unknown sigma source {kind!r}")

    @classmethod
    def from_params(cls, indices: Sequence[int]) -> "GaussianNoiseSpec":
        return cls(tuple(("param", int(k)) for k in indices))

    @classmethod
    def fixed(cls, sigmas: Sequence[float]) -> "GaussianNoiseSpec":
        return cls(tuple(("fixed", float(s)) for s in sigmas))

    def resolve(self, theta=None) -> np.ndarray:
        out = np.empty(len(self.sources))
        for i, (kind, val) in enumerate(self.sources):
            out[i] = theta[int(val)] if kind == "param" else val
        return out


def gaussian_log_likelihood(
    simulated: np.ndarray,
    observed: TimeSeriesDataset,
    noise: GaussianNoiseSpec | Sequence[float],
    theta=None,
) -> float:
    """Sum of independent normal log-densities over present observations.

    ``simulated`` is ``[channel, time]`` aligned with ``observed``. ``noise``
    is a :class:`GaussianNoiseSpec` (resolved against ``theta``) or a plain
    per-channel sequence of sigmas. Returns ``-inf`` for non-positive sigma
    or non-finite simulated values.
    """
    sim = np.asarray(simulated, dtype=float)
    if sim.ndim == 1:
        sim = sim[None, :]
    obs = observed.values
    if sim.shape != obs.shape:
        raise ValueError(f"simulated shape {sim.shape} != observed shape {obs.shape}")
    sigma = noise.resolve(theta) if isinstance(noise, GaussianNoiseSpec) else np.asarray(noise, dtype=float)
    if sigma.shape != (obs.shape[0],):
        raise ValueError("one sigma per channel required")
    if np.any(~(sigma > 0)) or not np.all(np.isfinite(sigma)):
        return -math.inf
    present = ~np.isnan(obs)
    if not np.all(np.isfinite(sim[present])):
        return -math.inf
    z = np.where(present, (sim - np.where(present, obs, 0.0)) / sigma[:, None], 0.0)
    counts = present.sum(axis=1)
    return float(-np.sum(counts * (HALF_LOG_2PI + np.log(sigma))) - 0.5 * np.sum(z * z))
