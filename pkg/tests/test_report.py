import math

import numpy as np
import pytest

from constrained_smc.core import SmcConfig
from constrained_smc.ensemble_io import EnsembleTable
from constrained_smc.models import build_model, build_target
from constrained_smc.models.ecosystem import build_prior as eco_prior
from constrained_smc.models.logistic import LogisticModel, LogisticParams, logistic_solution
from constrained_smc.report import (
    BIOCHEM_QUANTILES, DEFAULT_QUANTILES, default_quantiles, k3_k4_quadrants, predict, quantile_type7, scenario,
    summarize, summarize_columns,
)
from constrained_smc.sampler import run_smc


def logistic_table(theta):
    theta = np.atleast_2d(theta)
    n = theta.shape[0]
    return EnsembleTable(("r", "K", "y0"), theta, np.zeros(n), np.zeros(n))


def test_type7_quantiles():
    assert quantile_type7([1.0, 3.0], 0.5) == 2.0
    assert quantile_type7([1.0, 2.0, 3.0, 4.0], 0.25) == pytest.approx(1.75)
    np.testing.assert_allclose(quantile_type7(np.arange(11.0), [0.0, 0.1, 1.0]), [0.0, 1.0, 10.0])
    assert default_quantiles("biochem") == BIOCHEM_QUANTILES
    assert default_quantiles("logistic") == DEFAULT_QUANTILES


def test_single_particle_bands_equal_trajectory():
    theta = [0.2, 70.0, 2.0]
    out = predict(logistic_table(theta), LogisticModel())
    exact = logistic_solution(LogisticParams(*theta), LogisticModel().default_grid())
    for q in out.quantiles:
        np.testing.assert_array_equal(out.band("cover", q), exact)
    assert out.n_used == 1 and out.n_failed == 0
    assert out.header == ["channel", "time", "q0.025", "q0.5", "q0.975"]


def test_two_particle_median_is_midpoint():
    a, b = [0.1, 70.0, 2.0], [0.3, 65.0, 4.0]
    grid = np.linspace(0, 20, 11)
    out = predict(logistic_table([a, b]), LogisticModel(), grid, (0.25, 0.5))
    ya = logistic_solution(LogisticParams(*a), grid)
    yb = logistic_solution(LogisticParams(*b), grid)
    np.testing.assert_allclose(out.band("cover", 0.5), (ya + yb) / 2, rtol=1e-14)
    lo, hi = np.minimum(ya, yb), np.maximum(ya, yb)
    np.testing.assert_allclose(out.band("cover", 0.25), lo + 0.25 * (hi - lo), rtol=1e-14)
    with pytest.raises(ValueError):
        predict(logistic_table(a), LogisticModel(), grid, (1.5,))


def test_failed_simulations_are_counted():
    class Flaky(LogisticModel):
        def predict(self, theta, grid):
            return None if theta[0] > 0.25 else super().predict(theta, grid)

    out = predict(logistic_table([[0.1, 70, 2], [0.3, 70, 2], [0.2, 70, 2]]), Flaky(), [0.0, 1.0])
    assert out.n_used == 2 and out.n_failed == 1
    assert len(list(out.rows())) == 2


def test_nonempirical_bands_respect_constraints():
    ens, _ = run_smc(build_target("logistic", "nonempirical"), SmcConfig(n_particles=300, seed=2))
    table = EnsembleTable.from_ensemble(ens)
    grid = LogisticModel().default_grid()
    out = predict(table, LogisticModel())
    i5, i50 = np.searchsorted(grid, 5.0), np.searchsorted(grid, 50.0)
    assert out.band("cover", 0.975)[i5] <= 10.0
    assert out.band("cover", 0.025)[i50] >= table.theta[:, 1].min() - 1.0
    assert out.n_failed == 0


def test_constant_column_summary():
    s = summarize_columns({"c": np.full(7, 3.5)})
    name, mean, sd, *pct = s.rows[0]
    assert name == "c" and mean == 3.5 and sd == 0.0
    assert pct == [3.5] * 5
    empty = summarize_columns({"e": np.array([math.nan])})
    assert math.isnan(empty.rows[0][1])


def test_uniform_prior_mean_within_three_se():
    n = 20_000
    theta = LogisticModel().prior.sample(np.random.default_rng(5), n)
    s = summarize(logistic_table(theta), "logistic")
    row = next(r for r in s.rows if r[0] == "K")
    se = (20.0 / math.sqrt(12)) / math.sqrt(n)
    assert abs(row[1] - 70.0) < 3 * se
    assert row[2] == pytest.approx(20.0 / math.sqrt(12), rel=0.02)


def test_quadrant_counts():
    q = k3_k4_quadrants([0.5, 0.5, 2.0, 2.0, 0.1], [0.5, 2.0, 0.5, 2.0, 1.0])
    assert q["K3<1,K4<1"] == 1 and q["K3<1,K4>=1"] == 2
    assert q["K3>=1,K4<1"] == 1 and q["K3>=1,K4>=1"] == 1
    assert q["fraction K3<1,K4<1"] == pytest.approx(0.2)
    table = EnsembleTable(("x",), np.zeros((2, 1)), np.zeros(2), np.zeros(2), {"K3": [0.5, 2], "K4": [0.5, 2]})
    assert summarize(table, "biochem").extra["K3<1,K4<1"] == 1
    assert summarize(table, "logistic").extra == {}


def feasible_ecosystem_theta():
    prior = eco_prior(False)
    theta = prior.sample(np.random.default_rng(9), 400)
    model = build_model("ecosystem", "nonempirical")
    return theta[[model.discrepancy(t) == 0.0 for t in theta]]


def test_scenario_tables():
    theta = feasible_ecosystem_theta()[:3]
    table = EnsembleTable(eco_prior(False).names, theta, np.zeros(3), np.zeros(3))
    same = scenario(table, reduction_fraction=1.0, horizon=20.0)
    for sp in "FRMV":
        for q in DEFAULT_QUANTILES:
            np.testing.assert_array_equal(same.band(("baseline", sp), q), same.band(("intervention", sp), q))
    assert same.header[:3] == ["variant", "species", "time"]
    one = EnsembleTable(table.param_names, theta[:1], np.zeros(1), np.zeros(1))
    res = scenario(one, horizon=20.0)
    band = res.band(("intervention", "F"), 0.025)
    np.testing.assert_array_equal(band, res.band(("intervention", "F"), 0.975))
    assert band.size == 81
