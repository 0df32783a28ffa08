"""Posterior summaries, predictive bands and management scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ensemble_io import EnsembleTable
from .models.base import CaseModel
from .models.ecosystem import SPECIES, EcosystemParams, management_scenario

DEFAULT_QUANTILES = (0.025, 0.5, 0.975)
BIOCHEM_QUANTILES = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)
SUMMARY_PERCENTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


def default_quantiles(case: str) -> tuple[float, ...]:
    return BIOCHEM_QUANTILES if case == "biochem" else DEFAULT_QUANTILES


def quantile_type7(values, q, axis: int = 0) -> np.ndarray:
    """Linear interpolation between order statistics (``h = (n - 1) q``)."""
    return np.quantile(np.asarray(values, dtype=float), q, axis=axis, method="linear")


def quantile_label(q: float) -> str:
    return f"q{q:g}"


@dataclass
class PredictionTable:
    """Long-format bands: one row per (key, time), where the key is the
    channel or, for scenarios, the (variant, species) pair."""

    quantiles: tuple[float, ...]
    key_names: tuple[str, ...] = ("channel",)
    keys: list[tuple[str, ...]] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    n_used: int = 0
    n_failed: int = 0

    @property
    def header(self) -> list[str]:
        return [*self.key_names, "time", *(quantile_label(q) for q in self.quantiles)]

    def rows(self):
        for k, t, v in zip(self.keys, self.times, self.values):
            yield [*k, t, *v]

    def band(self, key, q: float) -> np.ndarray:
        """Quantile ``q`` over time for one key (a channel name or tuple)."""
        key = (key,) if isinstance(key, str) else tuple(key)
        j = self.quantiles.index(q)
        return np.array([v[j] for k, v in zip(self.keys, self.values) if k == key])


def _bands(sims: np.ndarray, channels: Sequence[str], grid, quantiles, out: PredictionTable, prefix=()):
    # sims: (n, channel, time) -> per-channel (q, time) quantiles
    qs = quantile_type7(sims, list(quantiles), axis=0)
    for ci, ch in enumerate(channels):
        for ti, t in enumerate(grid):
            out.keys.append((*prefix, ch))
            out.times.append(float(t))
            out.values.append(qs[:, ci, ti])


def predict(
    table: EnsembleTable,
    model: CaseModel,
    grid=None,
    quantiles: Sequence[float] | None = None,
) -> PredictionTable:
    """Simulate every particle on ``grid`` and reduce to per-time quantiles.

    Particles whose simulation fails are dropped and counted in
    ``n_failed``.
    """
    grid = model.default_grid() if grid is None else np.asarray(grid, dtype=float)
    quantiles = tuple(default_quantiles(model.case) if quantiles is None else quantiles)
    if any(not 0.0 <= q <= 1.0 for q in quantiles):
        raise ValueError("quantiles must lie in [0, 1]")
    sims, failed = [], 0
    for theta in table.theta:
        y = model.predict(theta, grid)
        if y is None or not np.all(np.isfinite(y)):
            failed += 1
        else:
            sims.append(np.asarray(y, dtype=float))
    out = PredictionTable(quantiles, n_used=len(sims), n_failed=failed)
    if sims:
        _bands(np.stack(sims), model.channels, grid, quantiles, out)
    return out


@dataclass
class SummaryTable:
    header: tuple[str, ...]
    rows: list[list]
    extra: dict[str, float] = field(default_factory=dict)


def summarize_columns(columns: dict[str, np.ndarray]) -> SummaryTable:
    """Mean, sd and percentiles of each finite column."""
    header = ("name", "mean", "sd", *(f"p{p:g}" for p in SUMMARY_PERCENTILES))
    rows = []
    for name, col in columns.items():
        x = np.asarray(col, dtype=float)
        x = x[np.isfinite(x)]
        if x.size == 0:
            rows.append([name, math.nan, math.nan, *([math.nan] * len(SUMMARY_PERCENTILES))])
            continue
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        pct = quantile_type7(x, [p / 100 for p in SUMMARY_PERCENTILES])
        rows.append([name, float(np.mean(x)), sd, *map(float, pct)])
    return SummaryTable(header, rows)


def k3_k4_quadrants(K3, K4) -> dict[str, float]:
    """Counts of particles in each (K3 vs 1, K4 vs 1) quadrant."""
    K3, K4 = np.asarray(K3, dtype=float), np.asarray(K4, dtype=float)
    n = K3.size
    counts = {
        "K3<1,K4<1": int(np.sum((K3 < 1) & (K4 < 1))),
        "K3<1,K4>=1": int(np.sum((K3 < 1) & (K4 >= 1))),
        "K3>=1,K4<1": int(np.sum((K3 >= 1) & (K4 < 1))),
        "K3>=1,K4>=1": int(np.sum((K3 >= 1) & (K4 >= 1))),
    }
    out: dict[str, float] = dict(counts)
    out["fraction K3<1,K4<1"] = counts["K3<1,K4<1"] / n if n else math.nan
    return out


def summarize(table: EnsembleTable, case: str | None = None) -> SummaryTable:
    columns = {name: table.theta[:, i] for i, name in enumerate(table.param_names)}
    columns.update(log_likelihood=table.log_likelihood, discrepancy=table.discrepancy)
    columns.update(table.derived)
    summary = summarize_columns(columns)
    if case == "biochem" and "K3" in table.derived and "K4" in table.derived:
        summary.extra = k3_k4_quadrants(table.derived["K3"], table.derived["K4"])
    return summary


def scenario(
    table: EnsembleTable,
    reduction_fraction: float = 0.2,
    intervention_time: float = 10.0,
    horizon: float = 30.0,
    grid=None,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> PredictionTable:
    """Quantile bands for the no-intervention (``baseline``) and
    ``intervention`` variants of every ecosystem particle."""
    if grid is None:
        grid = np.linspace(0.0, horizon, int(round(horizon * 4)) + 1)
    grid = np.asarray(grid, dtype=float)
    base, inter, failed = [], [], 0
    for theta in table.theta:
        res = management_scenario(EcosystemParams.from_vector(theta), reduction_fraction,
                                  intervention_time, horizon, grid)
        b, v = res.baseline.states.T, res.intervention.states.T
        if not (res.baseline.ok and res.intervention.ok and np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            failed += 1
            continue
        base.append(b)
        inter.append(v)
    out = PredictionTable(tuple(quantiles), ("variant", "species"), n_used=len(base), n_failed=failed)
    if base:
        _bands(np.stack(base), SPECIES, grid, quantiles, out, ("baseline",))
        _bands(np.stack(inter), SPECIES, grid, quantiles, out, ("intervention",))
    return out
