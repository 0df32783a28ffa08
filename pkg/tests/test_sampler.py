import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from constrained_smc.core import CalibrationTarget, Ensemble, PriorSpec, SmcConfig, Uniform
from constrained_smc.sampler import (
    DegenerateEnsembleError, MoveStats, SamplerError, anneal_temperature, effective_sample_size,
    ess_from_log_weights, exclude_above, mcmc_move, mcmc_repeat_count, proposal_covariance, resample,
    resample_indices, reweight, run_smc, select_discrepancy_threshold, threshold_rank,
)

N_INSTANCES = 1000


def make_ensemble(theta=None, ll=None, rho=None, lw=None, n=None):
    if n is None:
        n = len(next(a for a in (theta, ll, rho, lw) if a is not None))
    theta = np.zeros((n, 1)) if theta is None else np.asarray(theta, dtype=float).reshape(n, -1)
    ll = np.zeros(n) if ll is None else ll
    rho = np.zeros(n) if rho is None else rho
    lw = np.full(n, -math.log(n)) if lw is None else lw
    return Ensemble(tuple(f"x{i}" for i in range(theta.shape[1])), theta, ll, rho, lw)


class Interval(CalibrationTarget):
    """x ~ U(0, 1) constrained to x <= 0.3 through rho = max(0, x - 0.3)."""

    def __init__(self):
        super().__init__(PriorSpec.from_items([("x", Uniform(0.0, 1.0))]), False, True)

    def discrepancy(self, theta):
        return max(0.0, float(theta[0]) - 0.3)


class NormalMean(CalibrationTarget):
    """Unit-variance normal likelihood for a single observation at 1."""

    def __init__(self, with_rho=False):
        super().__init__(PriorSpec.from_items([("mu", Uniform(-10.0, 10.0))]), True, with_rho)

    def log_likelihood(self, theta):
        return -0.5 * (float(theta[0]) - 1.0) ** 2

    def discrepancy(self, theta):
        return max(0.0, -float(theta[0]))


# -- effective sample size ------------------------------------------------------


def test_ess_examples():
    assert effective_sample_size([0.25] * 4) == pytest.approx(4.0)
    assert effective_sample_size([0.5, 0.5, 0, 0]) == pytest.approx(2.0)
    assert effective_sample_size([0.7, 0.1, 0.1, 0.1]) == pytest.approx(1 / 0.52, abs=1e-4)
    assert effective_sample_size([0.7, 0.1, 0.1, 0.1]) == pytest.approx(1.9231, abs=1e-4)
    with pytest.raises(DegenerateEnsembleError):
        effective_sample_size([0.0, 0.0])


def test_ess_properties_randomized():
    rng = np.random.default_rng(10)
    for _ in range(N_INSTANCES):
        n = int(rng.integers(2, 50))
        w = rng.random(n) ** rng.uniform(0.5, 8.0)
        w[rng.random(n) < 0.3] = 0.0
        if w.sum() == 0:
            w[0] = 1.0
        w /= w.sum()
        ess = effective_sample_size(w)
        assert 1.0 - 1e-9 <= ess <= n + 1e-9
        assert effective_sample_size(rng.permutation(w)) == pytest.approx(ess, rel=1e-12)
        with np.errstate(divide="ignore"):
            assert ess_from_log_weights(np.log(w)) == pytest.approx(ess, rel=1e-10)
        if not np.allclose(w, 1.0 / n):
            assert ess < n
        assert effective_sample_size(np.full(n, 1.0 / n)) == pytest.approx(n, rel=1e-12)


def test_ess_from_log_weights_survives_underflow():
    lw = np.array([-2000.0, -2000.0, -2001.0])
    assert np.isfinite(ess_from_log_weights(lw))


# -- threshold -----------------------------------------------------------------


def test_threshold_examples():
    ens = make_ensemble(rho=np.arange(1.0, 11.0))
    assert select_discrepancy_threshold(ens, 0.6) == 6.0
    zero = make_ensemble(rho=np.zeros(7))
    eps = select_discrepancy_threshold(zero, 0.6)
    assert eps == 0.0
    assert np.all(np.isfinite(exclude_above(zero, eps).log_weight))
    ties = make_ensemble(rho=np.array([0.0, 0.0, 2.0, 2.0, 9.0]))
    eps = select_discrepancy_threshold(ties, 0.6)
    assert eps == 2.0
    lw = exclude_above(ties, eps).log_weight
    assert np.isneginf(lw[4]) and np.all(np.isfinite(lw[:4]))


def test_threshold_rank_randomized():
    rng = np.random.default_rng(11)
    for _ in range(N_INSTANCES):
        n = int(rng.integers(1, 200))
        a = rng.uniform(0.01, 0.99)
        rho = rng.integers(0, 5, n).astype(float) if rng.random() < 0.5 else rng.exponential(size=n)
        rho[rng.random(n) < 0.1] = np.inf
        k = math.ceil(a * n - 1e-9)
        assert threshold_rank(n, a) == max(1, min(n, k))
        eps = select_discrepancy_threshold(make_ensemble(rho=rho), a)
        assert eps == np.sort(rho)[threshold_rank(n, a) - 1]
        kept = exclude_above(make_ensemble(rho=rho), eps)
        assert np.sum(np.isfinite(kept.log_weight)) >= threshold_rank(n, a)
        assert np.all(rho[np.isfinite(kept.log_weight)] <= eps)


def test_epsilon_non_increasing_randomized():
    # threshold -> exclude -> resample -> moves that respect the threshold
    rng = np.random.default_rng(12)
    for _ in range(N_INSTANCES):
        n = int(rng.integers(10, 60))
        rho = rng.exponential(size=n)
        prev = math.inf
        for _step in range(4):
            ens = make_ensemble(rho=rho)
            eps = select_discrepancy_threshold(ens, 0.6)
            assert eps <= prev
            ens = resample(exclude_above(ens, eps), rng)
            assert np.all(ens.discrepancy <= eps)
            moved = rng.random(n) < 0.5
            rho = ens.discrepancy.copy()
            rho[moved] = rng.uniform(0, eps, moved.sum()) if eps > 0 else 0.0
            prev = eps


# -- temperature -----------------------------------------------------------------


def test_anneal_examples():
    flat = make_ensemble(ll=np.full(5, -3.0))
    assert anneal_temperature(flat, 0.0, 2.0) == 1.0
    no_likelihood = make_ensemble(ll=np.zeros(5))
    assert anneal_temperature(no_likelihood, 0.0, 4.0) == 1.0
    with pytest.raises(ValueError):
        anneal_temperature(flat, 1.0, 2.0)


def test_two_particle_bisection_against_root_finder():
    def ess(g):
        x = math.exp(-10.0 * g)
        return (1.0 + x) ** 2 / (1.0 + x * x)

    root = optimize.brentq(lambda g: ess(g) - 1.5, 1e-9, 1.0, xtol=1e-14)
    assert root == pytest.approx(-math.log(2.0 - math.sqrt(3.0)) / 10.0, abs=1e-12)
    assert root == pytest.approx(0.13170, abs=1e-5)

    ens = make_ensemble(ll=np.array([0.0, -10.0]))
    g = anneal_temperature(ens, 0.0, 1.5, tol=1e-2)
    assert abs(ess(g) - 1.5) <= 1e-2
    assert g == pytest.approx(root, abs=2e-3)
    tight = anneal_temperature(ens, 0.0, 1.5, tol=1e-12)
    assert tight == pytest.approx(root, abs=1e-9)


def test_gamma_monotone_to_one_randomized():
    rng = np.random.default_rng(13)
    for _ in range(N_INSTANCES):
        n = int(rng.integers(10, 40))
        ll = -rng.exponential(rng.uniform(0.1, 50.0), n)
        theta = rng.normal(size=(n, 1))
        ens = make_ensemble(theta=theta, ll=ll)
        floor = 0.3 * n
        gamma, steps = 0.0, 0
        while gamma < 1.0:
            new = anneal_temperature(ens, gamma, floor)
            assert new > gamma
            ens = reweight(ens, new, gamma)
            if new < 1.0:
                assert ess_from_log_weights(ens.log_weight) == pytest.approx(floor, abs=1e-2)
            ens = resample(ens, rng)
            gamma = new
            steps += 1
            assert steps < 200
        assert gamma == 1.0


# -- reweight / resample -----------------------------------------------------------


def test_reweight_examples():
    ens = make_ensemble(ll=np.array([-1.0, -4.0, 0.5]))
    same = reweight(ens, 0.3, 0.3)
    np.testing.assert_allclose(same.weights(), ens.weights())
    flat = reweight(make_ensemble(ll=np.zeros(2)), 1.0, 0.0)
    np.testing.assert_allclose(flat.weights(), [0.5, 0.5])
    three = reweight(make_ensemble(ll=np.array([0.0, math.log(3.0)])), 1.0, 0.0)
    np.testing.assert_allclose(three.weights(), [0.25, 0.75], rtol=1e-12)
    zeroed = make_ensemble(ll=np.array([0.0, 5.0]), lw=np.array([0.0, -np.inf]))
    assert reweight(zeroed, 1.0, 0.0).weights()[1] == 0.0
    with pytest.raises(DegenerateEnsembleError):
        reweight(make_ensemble(lw=np.full(3, -np.inf)), 1.0, 0.0)
    with pytest.raises(ValueError):
        reweight(ens, 0.1, 0.2)


def test_resample_examples():
    rng = np.random.default_rng(14)
    single = make_ensemble(theta=np.arange(5.0), lw=np.array([-np.inf, -np.inf, 0.0, -np.inf, -np.inf]))
    out = resample(single, rng)
    np.testing.assert_array_equal(out.theta[:, 0], np.full(5, 2.0))
    np.testing.assert_allclose(out.weights(), np.full(5, 0.2))
    idx = resample_indices(np.array([0.5, 0.0, 0.5]), rng)
    assert 1 not in idx
    n = 10_000
    counts = np.sum(resample_indices(np.r_[0.9, np.full(n - 1, 0.1 / (n - 1))], rng) == 0)
    assert abs(counts - 9000) <= 3 * math.sqrt(n * 0.9 * 0.1)


def test_multinomial_binomial_concentration_randomized():
    rng = np.random.default_rng(15)
    outside = 0
    for _ in range(N_INSTANCES):
        n = int(rng.integers(20, 400))
        w = rng.dirichlet(np.full(n, rng.uniform(0.2, 3.0)))
        k = int(rng.integers(n))
        count = np.sum(resample_indices(w, rng) == k)
        sd = math.sqrt(n * w[k] * (1 - w[k]))
        if abs(count - n * w[k]) > 3 * sd + 1:
            outside += 1
    # a binomial count leaves its 3-sigma band well under 1% of the time
    assert outside <= 0.01 * N_INSTANCES


def test_systematic_resampling_counts():
    rng = np.random.default_rng(16)
    w = rng.dirichlet(np.ones(50))
    counts = np.bincount(resample_indices(w, rng, "systematic"), minlength=50)
    assert np.all(np.abs(counts - 50 * w) < 1.0 + 1e-12)


# -- proposal covariance and moves ------------------------------------------------


def test_proposal_covariance_examples():
    same = proposal_covariance(np.ones((6, 3)))
    np.linalg.cholesky(same)
    assert np.allclose(same, np.diag(np.diag(same))) and np.all(np.diag(same) <= 1e-9)
    two = proposal_covariance(np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert two[0, 0] == pytest.approx(2.0)
    assert two[1, 1] < 1e-9 and two[0, 1] == 0.0
    draws = np.random.default_rng(17).standard_normal((10_000, 3))
    np.testing.assert_allclose(proposal_covariance(draws), np.eye(3), atol=0.05)


def test_mcmc_move_examples():
    target = Interval()
    rng = np.random.default_rng(18)
    n = 400
    theta = rng.uniform(0.0, 0.3, (n, 1))
    ens = make_ensemble(theta=theta, rho=np.zeros(n))
    moved, stats_ = mcmc_move(ens, target, 0.0, 0.0, np.array([[0.5]]), rng)
    assert isinstance(stats_, MoveStats) and stats_.proposals == n
    assert 0 < stats_.accepted < n
    assert np.all(moved.theta[:, 0] <= 0.3) and np.all(moved.theta[:, 0] >= 0.0)
    assert np.all(moved.discrepancy == 0.0)
    # tiny steps inside the allowed region are always accepted at gamma = 0
    inner = make_ensemble(theta=np.full((50, 1), 0.15), rho=np.zeros(50))
    _, s = mcmc_move(inner, target, 0.0, 0.0, np.array([[1e-8]]), rng)
    assert s.accepted == 50


def test_mcmc_move_rejects_outside_prior():
    target = Interval()
    ens = make_ensemble(theta=np.full((20, 1), 0.999), rho=np.full(20, 0.699))
    # huge proposal variance: practically every proposal lands outside [0, 1] or above eps
    moved, s = mcmc_move(ens, target, 0.0, 0.699, np.array([[1e6]]), np.random.default_rng(19))
    assert np.all(moved.theta[:, 0] >= 0.0) and np.all(moved.theta[:, 0] <= 1.0)


def test_mcmc_move_thread_invariant():
    target = NormalMean(with_rho=True)
    rng_a, rng_b = np.random.default_rng(20), np.random.default_rng(20)
    theta = np.random.default_rng(21).uniform(0, 3, (64, 1))
    ll = np.array([target.log_likelihood(t) for t in theta])
    ens = make_ensemble(theta=theta, ll=ll)
    a, _ = mcmc_move(ens, target, 0.7, 0.0, np.array([[0.3]]), rng_a)
    with ThreadPoolExecutor(4) as pool:
        b, _ = mcmc_move(ens, target, 0.7, 0.0, np.array([[0.3]]), rng_b, pool)
    np.testing.assert_array_equal(a.theta, b.theta)


# -- repeat count -------------------------------------------------------------------


def test_repeat_count_examples():
    assert mcmc_repeat_count(0.99, 0.99) == 1
    assert mcmc_repeat_count(0.5, 0.99) == 1
    assert mcmc_repeat_count(0.01, 0.99) == 1
    assert mcmc_repeat_count(0.001, 0.99) == 11
    assert mcmc_repeat_count(0.0, 0.99) == 100
    assert mcmc_repeat_count(0.0, 0.99, cap=40) == 40
    assert mcmc_repeat_count(1.0, 0.01) == 1
    # probability-of-moving reading used by the driver
    assert mcmc_repeat_count(0.2, 0.01) == math.ceil(math.log(0.01) / math.log(0.8))
    with pytest.raises(ValueError):
        mcmc_repeat_count(1.5, 0.5)


def test_repeat_count_randomized():
    rng = np.random.default_rng(22)
    for _ in range(N_INSTANCES):
        a = rng.uniform(1e-4, 1 - 1e-4)
        c = rng.uniform(1e-4, 1 - 1e-4)
        exact = np.log(c) / np.log(1 - a)
        r = mcmc_repeat_count(a, c)
        assert r >= 1
        assert r - 1 < exact * (1 + 1e-9) and exact <= r * (1 + 1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_repeat_count_monotone_in_acceptance(a, c):
    assert mcmc_repeat_count(a, c) >= mcmc_repeat_count(min(1.0, a * 1.5), c)


# -- driver -------------------------------------------------------------------------


def test_run_smc_likelihood_free_matches_truncated_prior():
    ens, records = run_smc(Interval(), SmcConfig(n_particles=1000, seed=3))
    x = ens.theta[:, 0]
    assert np.all(ens.discrepancy == 0.0)
    assert stats.kstest(x, stats.uniform(0, 0.3).cdf).pvalue > 0.01
    assert records[-1].gamma == 1.0


def test_run_smc_gaussian_with_constraint():
    # N(1, 1) likelihood, flat prior, restricted to mu >= 0
    ens, records = run_smc(NormalMean(with_rho=True), SmcConfig(n_particles=2000, seed=4))
    mu = ens.theta[:, 0]
    dist = stats.truncnorm(-1.0, np.inf, loc=1.0, scale=1.0)
    assert np.all(mu >= 0)
    assert abs(mu.mean() - dist.mean()) < 3 * dist.std() / math.sqrt(2000) * 2
    assert abs(mu.std(ddof=1) / dist.std() - 1) < 0.1
    gammas = [r.gamma for r in records]
    eps = [r.epsilon for r in records]
    assert all(b > a for a, b in zip(gammas, gammas[1:]) if a < 1.0)
    assert gammas[-1] == 1.0
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    assert eps[-1] <= 0.0


def test_run_smc_deterministic_across_threads():
    cfg = SmcConfig(n_particles=200, seed=9)
    a, ra = run_smc(NormalMean(with_rho=True), cfg)
    with ThreadPoolExecutor(8) as pool:
        b, rb = run_smc(NormalMean(with_rho=True), cfg, pool)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert ra == rb


def test_run_smc_iteration_cap():
    with pytest.raises(SamplerError) as info:
        run_smc(Interval(), SmcConfig(n_particles=50, seed=1, max_iterations=1, target_epsilon=0.0))
    assert len(info.value.records) == 1


def test_run_smc_sink_receives_records():
    seen = []
    _, records = run_smc(Interval(), SmcConfig(n_particles=100, seed=2), sink=seen.append)
    assert seen == records
