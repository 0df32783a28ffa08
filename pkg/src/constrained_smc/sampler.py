"""Sequential Monte Carlo that anneals a likelihood temperature and an
ABC discrepancy threshold at the same time.

Each iteration: pick the threshold that keeps the ``a_keep`` fraction of
particles with the lowest discrepancy, zero the rest, raise the likelihood
temperature as far as the ESS floor allows, reweight, resample, then move
every particle with random-walk Metropolis-Hastings targeting
``prior * likelihood**gamma * 1{rho <= epsilon}``.

All weights are handled in log space.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .core import CalibrationTarget, Ensemble, SmcConfig

log = logging.getLogger(__name__)

BISECTION_MAX_ITER = 60
BISECTION_MIN_WIDTH = 1e-12
STAGNATION_CAP = 100


class DegenerateEnsembleError(RuntimeError):
    """Every particle carries zero weight."""


class SamplerError(RuntimeError):
    """The sampler stopped before reaching its target; carries diagnostics."""

    def __init__(self, message, records=None, ensemble=None):
        super().__init__(message)
        self.records = list(records or [])
        self.ensemble = ensemble


@dataclass(frozen=True)
class MoveStats:
    proposals: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    def __add__(self, other: "MoveStats") -> "MoveStats":
        return MoveStats(self.proposals + other.proposals, self.accepted + other.accepted)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    gamma: float
    epsilon: float
    ess: float
    r_t: int
    acceptance_rate: float
    rho_max: float
    mcmc_steps: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


# -- weights ---------------------------------------------------------------


def normalize_log_weights(log_weight: np.ndarray) -> np.ndarray:
    log_weight = np.asarray(log_weight, dtype=float)
    if not np.any(np.isfinite(log_weight)):
        raise DegenerateEnsembleError("all particle weights are zero")
    return log_weight - logsumexp(log_weight)


def effective_sample_size(weights) -> float:
    """ESS = 1 / sum(w**2) for normalized weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise DegenerateEnsembleError("all particle weights are zero")
    w = w / total
    return float(1.0 / np.sum(w * w))


def ess_from_log_weights(log_weight: np.ndarray) -> float:
    lw = normalize_log_weights(log_weight)
    # 1/sum(w^2) = exp(-logsumexp(2*lw))
    return float(np.exp(-logsumexp(2.0 * lw)))


def _tempered(log_weight, log_likelihood, delta):
    if delta == 0.0:
        return np.array(log_weight, dtype=float, copy=True)
    with np.errstate(invalid="ignore"):
        out = log_weight + delta * log_likelihood
    # excluded particles stay excluded whatever their likelihood
    out[~np.isfinite(log_weight)] = -np.inf
    out[np.isnan(out)] = -np.inf
    return out


# -- threshold ---------------------------------------------------------------


def threshold_rank(n: int, a_keep: float) -> int:
    """1-based rank of the particle whose discrepancy sets the threshold."""
    return min(n, max(1, math.ceil(a_keep * n - 1e-9)))


def select_discrepancy_threshold(ensemble: Ensemble, a_keep: float) -> float:
    """Discrepancy of the ``ceil(a_keep*n)``-th smallest particle."""
    rho = ensemble.discrepancy
    k = threshold_rank(ensemble.n, a_keep)
    return float(np.partition(rho, k - 1)[k - 1])


def exclude_above(ensemble: Ensemble, epsilon: float) -> Ensemble:
    """Copy with zero weight on every particle whose discrepancy exceeds
    ``epsilon``; ties at the threshold are kept."""
    out = ensemble.copy()
    out.log_weight[out.discrepancy > epsilon] = -np.inf
    out.epsilon = epsilon
    return out


# -- temperature -------------------------------------------------------------


def anneal_temperature(
    ensemble: Ensemble, gamma_prev: float, ess_floor: float, tol: float = 1e-2
) -> float:
    """Next likelihood temperature.

    Returns 1 if the full posterior keeps ESS >= ``ess_floor``; otherwise
    bisects on the sign of ``ESS(gamma) - ess_floor`` over ``(gamma_prev, 1)``.
    """
    if gamma_prev >= 1.0:
        raise ValueError("temperature already at 1")
    lw = ensemble.log_weight
    ll = ensemble.log_likelihood

    def excess(gamma):
        tempered = _tempered(lw, ll, gamma - gamma_prev)
        if not np.any(np.isfinite(tempered)):
            return -ess_floor
        return ess_from_log_weights(tempered) - ess_floor

    if excess(1.0) >= 0.0:
        return 1.0
    lo, hi = gamma_prev, 1.0
    mid = 0.5 * (lo + hi)
    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f = excess(mid)
        if abs(f) <= tol:
            break
        if f > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECTION_MIN_WIDTH:
            mid = 0.5 * (lo + hi)
            break
    return mid


def reweight(ensemble: Ensemble, gamma_new: float, gamma_prev: float) -> Ensemble:
    """Multiply weights by ``likelihood**(gamma_new - gamma_prev)`` and normalize."""
    if gamma_new < gamma_prev:
        raise ValueError("temperature may not decrease")
    out = ensemble.copy()
    tempered = _tempered(ensemble.log_weight, ensemble.log_likelihood, gamma_new - gamma_prev)
    out.log_weight = normalize_log_weights(tempered)
    out.gamma = gamma_new
    return out


# -- resampling --------------------------------------------------------------


def resample_indices(weights: np.ndarray, rng: np.random.Generator, scheme: str = "multinomial") -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = w.size
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    if scheme == "multinomial":
        u = rng.random(n)
    elif scheme == "systematic":
        u = (rng.random() + np.arange(n)) / n
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)


def resample(ensemble: Ensemble, rng: np.random.Generator, scheme: str = "multinomial") -> Ensemble:
    """Draw n particles with replacement by weight; reset weights to 1/n."""
    w = np.exp(normalize_log_weights(ensemble.log_weight))
    idx = resample_indices(w, rng, scheme)
    n = ensemble.n
    return Ensemble(
        ensemble.names,
        ensemble.theta[idx],
        ensemble.log_likelihood[idx],
        ensemble.discrepancy[idx],
        np.full(n, -math.log(n)),
        ensemble.gamma,
        ensemble.epsilon,
        ensemble.iteration,
        ensemble.rng,
    )


# -- moves -------------------------------------------------------------------


def proposal_covariance(theta: np.ndarray | Ensemble, jitter: float = 1e-12) -> np.ndarray:
    """Unbiased sample covariance, with diagonal jitter until Cholesky succeeds."""
    if isinstance(theta, Ensemble):
        theta = theta.theta
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    d = theta.shape[1]
    cov = np.atleast_2d(np.cov(theta, rowvar=False, ddof=1)) if theta.shape[0] > 1 else np.zeros((d, d))
    scale = max(1.0, float(np.mean(np.abs(np.diag(cov)))))
    eps = jitter * scale
    out = cov
    for _ in range(20):
        try:
            np.linalg.cholesky(out)
            return out
        except np.linalg.LinAlgError:
            out = cov + eps * np.eye(d)
            eps *= 10.0
    raise np.linalg.LinAlgError("could not regularize proposal covariance")


def _evaluate_many(target, thetas, epsilon, executor):
    if executor is None or len(thetas) < 2:
        results = [target.evaluate(th, epsilon) for th in thetas]
    else:
        results = list(executor.map(lambda th: target.evaluate(th, epsilon), thetas))
    if not results:
        return np.empty(0), np.empty(0)
    ll, rho = zip(*results)
    return np.asarray(ll, dtype=float), np.asarray(rho, dtype=float)


def mcmc_move(
    ensemble: Ensemble,
    target: CalibrationTarget,
    gamma: float,
    epsilon: float,
    covariance: np.ndarray,
    rng: np.random.Generator,
    executor: Executor | None = None,
) -> tuple[Ensemble, MoveStats]:
    """One random-walk MH sweep over every particle.

    Noise and acceptance uniforms are drawn up front, so the result does not
    depend on how the model evaluations are scheduled.
    """
    n, d = ensemble.theta.shape
    chol = np.linalg.cholesky(covariance)
    z = rng.standard_normal((n, d))
    log_u = np.log(rng.random(n))
    proposals = ensemble.theta + z @ chol.T

    prior = target.prior
    lp_prop = np.array([prior.log_density(p) for p in proposals])
    lp_curr = np.array([prior.log_density(p) for p in ensemble.theta])
    inside = np.flatnonzero(np.isfinite(lp_prop))

    ll_prop = np.full(n, np.nan)
    rho_prop = np.full(n, np.inf)
    ll_prop[inside], rho_prop[inside] = _evaluate_many(target, proposals[inside], epsilon, executor)

    log_alpha = lp_prop - lp_curr
    if gamma > 0.0:
        with np.errstate(invalid="ignore"):
            log_alpha = log_alpha + gamma * (ll_prop - ensemble.log_likelihood)
    ok = np.isfinite(lp_prop) & (rho_prop <= epsilon) & ~np.isnan(ll_prop)
    if gamma > 0.0:
        ok &= np.isfinite(ll_prop)
    with np.errstate(invalid="ignore"):
        accept = ok & (log_u < np.nan_to_num(log_alpha, nan=-np.inf))

    out = ensemble.copy()
    out.theta[accept] = proposals[accept]
    out.log_likelihood[accept] = ll_prop[accept]
    out.discrepancy[accept] = rho_prop[accept]
    return out, MoveStats(n, int(accept.sum()))


def mcmc_repeat_count(acceptance_rate: float, c: float, cap: int = STAGNATION_CAP) -> int:
    """``ceil(log(c) / log(1 - acceptance_rate))``; ``cap`` when nothing moved."""
    if not 0.0 <= acceptance_rate <= 1.0:
        raise ValueError("acceptance rate must lie in [0, 1]")
    if acceptance_rate == 0.0:
        return cap
    if acceptance_rate == 1.0:
        return 1
    r = math.log(c) / math.log1p(-acceptance_rate)
    return max(1, math.ceil(r - 1e-12))


# -- driver ------------------------------------------------------------------


def initialize(target: CalibrationTarget, config: SmcConfig, executor: Executor | None = None) -> Ensemble:
    rng = np.random.default_rng(config.seed)
    n = config.n_particles
    theta = target.prior.sample(rng, n)
    ll, rho = _evaluate_many(target, theta, math.inf, executor)
    return Ensemble(target.names, theta, ll, rho, np.full(n, -math.log(n)), 0.0, math.inf, 0, rng)


def run_smc(
    target: CalibrationTarget,
    config: SmcConfig,
    executor: Executor | None = None,
    sink: Callable[[IterationRecord], None] | None = None,
) -> tuple[Ensemble, list[IterationRecord]]:
    """Sample ``prior * likelihood * 1{rho <= target_epsilon}``.

    Runs until every particle has ``rho <= config.target_epsilon`` and the
    temperature has reached 1. ``sink`` receives each iteration record as
    soon as it is produced.
    """
    ens = initialize(target, config, executor)
    rng = ens.rng
    n = ens.n
    ess_floor = config.ess_min_frac * n
    stay_prob = 1.0 - config.c_move
    n_trial = config.n_mcmc_trial
    records: list[IterationRecord] = []
    rho_max = float(np.max(ens.discrepancy))

    while rho_max > config.target_epsilon or ens.gamma < 1.0:
        if ens.iteration >= config.max_iterations:
            raise SamplerError(
                f"no convergence after {config.max_iterations} iterations "
                f"(gamma={ens.gamma:.4g}, rho_max={rho_max:.4g})",
                records,
                ens,
            )
        gamma_prev = ens.gamma

        eps = select_discrepancy_threshold(ens, config.a_keep)
        eps = min(max(eps, config.target_epsilon), ens.epsilon)
        ens = exclude_above(ens, eps)

        if gamma_prev < 1.0:
            gamma = anneal_temperature(ens, gamma_prev, ess_floor, config.bisection_tol)
        else:
            gamma = 1.0
        ens = reweight(ens, gamma, gamma_prev)
        ess = ess_from_log_weights(ens.log_weight)

        ens = resample(ens, rng, config.resampling)
        cov = proposal_covariance(ens.theta)

        stats = MoveStats(0, 0)
        for _ in range(n_trial):
            ens, s = mcmc_move(ens, target, gamma, eps, cov, rng, executor)
            stats += s
        a_t = stats.acceptance_rate
        r_t = mcmc_repeat_count(a_t, stay_prob, cap=config.max_mcmc_steps)
        if a_t == 0.0:
            log.warning("iteration %d: no trial move accepted; capping R_t at %d", ens.iteration + 1, r_t)
        r_t = min(r_t, config.max_mcmc_steps)
        steps = n_trial
        for _ in range(r_t - n_trial):
            ens, _s = mcmc_move(ens, target, gamma, eps, cov, rng, executor)
            steps += 1
        n_trial = max(1, math.ceil(r_t / 2))

        rho_max = float(np.max(ens.discrepancy))
        ens.iteration += 1
        rec = IterationRecord(ens.iteration, gamma, eps, ess, r_t, a_t, rho_max, steps)
        records.append(rec)
        log.info(
            "iter %d gamma=%.4g eps=%.4g ess=%.1f acc=%.3f R=%d rho_max=%.4g",
            rec.iteration, gamma, eps, ess, a_t, r_t, rho_max,
        )
        if sink is not None:
            sink(rec)

    return ens, records
