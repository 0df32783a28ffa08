"""Four-species generalized Lotka-Volterra network: foxes (F), rabbits (R),
small mammals (M) and vegetation (V).

Theory requires a feasible (all equilibrium abundances positive) and
stable (all Jacobian eigenvalues with negative real part) equilibrium; a
nine-year abundance series supplies the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..core import PriorSpec, Uniform
from ..likelihood import TimeSeriesDataset, gaussian_log_likelihood
from ..odeint import COMPLETED, Trajectory, _STATUS, dopri5
from .base import CaseModel

SPECIES = ("F", "R", "M", "V")
SPECIES_LABELS = {"F": "fox", "R": "rabbit", "M": "small_mammal", "V": "vegetation"}
_IDX = {s: i for i, s in enumerate(SPECIES)}

# (row, column, sign) of every free interaction; all other entries are 0
INTERACTIONS = (
    ("F", "F", -1), ("F", "R", +1), ("F", "M", +1),
    ("R", "F", -1), ("R", "R", -1), ("R", "V", +1),
    ("M", "F", -1), ("M", "M", -1), ("M", "V", +1),
    ("V", "R", -1), ("V", "M", -1), ("V", "V", -1),
)

N0_PRIORS = (Uniform(0.25, 1.0), Uniform(0.5, 1.0), Uniform(0.0, 1.0), Uniform(0.25, 1.0))
R_PRIOR = Uniform(-1.0, 1.0)
SIGMA_PRIOR = Uniform(0.01, 1.0)

DATASET = TimeSeriesDataset(
    times=tuple(float(t) for t in range(9)),
    channels=SPECIES,
    values=np.array(
        [
            [0.4641, 0.6850, 0.8673, 0.7174],
            [0.5877, 0.7865, 0.5226, 0.6179],
            [1.0489, 1.0748, 0.3640, 0.4555],
            [1.4754, 0.8941, 0.1997, 0.5363],
            [1.7064, 0.7186, 0.2047, 0.4482],
            [1.6375, 0.7417, 0.1703, 0.6880],
            [1.4619, 0.6292, 0.1371, 0.8902],
            [1.6266, 0.6306, 0.2197, 1.1218],
            [1.4009, 0.8132, 0.0883, 1.1005],
        ]
    ).T,
)

SINGULAR_COND = 1e12
RTOL = 1e-6
ATOL = 1e-8
MAX_STEPS = 100_000


def parameter_names(with_sigma: bool) -> tuple[str, ...]:
    names = [f"n0_{s}" for s in SPECIES] + [f"r_{s}" for s in SPECIES]
    names += [f"alpha_{i}{j}" for i, j, _ in INTERACTIONS]
    if with_sigma:
        names += [f"sigma_{s}" for s in SPECIES]
    return tuple(names)


def build_prior(with_sigma: bool, sigma_prior: Uniform = SIGMA_PRIOR) -> PriorSpec:
    marginals = list(N0_PRIORS) + [R_PRIOR] * 4
    marginals += [Uniform(-1.0, 0.0) if sign < 0 else Uniform(0.0, 1.0) for _, _, sign in INTERACTIONS]
    if with_sigma:
        marginals += [sigma_prior] * 4
    return PriorSpec(parameter_names(with_sigma), tuple(marginals))


@dataclass(frozen=True)
class EcosystemParams:
    n0: np.ndarray
    r: np.ndarray
    A: np.ndarray
    sigma: np.ndarray | None = None

    @classmethod
    def from_vector(cls, theta) -> "EcosystemParams":
        theta = np.asarray(theta, dtype=float)
        A = np.zeros((4, 4))
        for k, (i, j, _) in enumerate(INTERACTIONS):
            A[_IDX[i], _IDX[j]] = theta[8 + k]
        sigma = theta[20:24].copy() if theta.size >= 24 else None
        return cls(theta[0:4].copy(), theta[4:8].copy(), A, sigma)

    def packed(self) -> np.ndarray:
        """``[r, A.ravel()]`` as consumed by :func:`glv_rhs`."""
        return np.concatenate([self.r, self.A.ravel()])


@njit(cache=True)
def glv_rhs(t, n, p):
    """dn_i/dt = (r_i + sum_j A_ij n_j) n_i with ``p = [r, A.ravel()]``."""
    out = np.empty(4)
    for i in range(4):
        s = p[i]
        for j in range(4):
            s += p[4 + 4 * i + j] * n[j]
        out[i] = s * n[i]
    return out


@dataclass(frozen=True)
class EquilibriumReport:
    n_star: np.ndarray | None
    eigen_real: np.ndarray | None
    singular: bool


def equilibrium(params: EcosystemParams) -> EquilibriumReport:
    """Interior equilibrium n* = -A^{-1} r and the real parts of the
    eigenvalues of J_ij = A_ij n*_i (sorted ascending)."""
    A, r = params.A, params.r
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > SINGULAR_COND:
        return EquilibriumReport(None, None, True)
    try:
        n_star = np.linalg.solve(A, -r)
    except np.linalg.LinAlgError:
        return EquilibriumReport(None, None, True)
    J = A * n_star[:, None]
    eig = np.sort(np.linalg.eigvals(J).real)
    return EquilibriumReport(n_star, eig, False)


def discrepancy_from_report(report: EquilibriumReport) -> float:
    if report.singular:
        return math.inf
    return float(np.sum(np.abs(np.minimum(0.0, report.n_star))) + np.sum(np.abs(np.maximum(0.0, report.eigen_real))))


def ecosystem_discrepancy(params: EcosystemParams) -> float:
    """Summed shortfall from feasibility (n* > 0) and stability (Re(lambda) < 0)."""
    return discrepancy_from_report(equilibrium(params))


def simulate(params: EcosystemParams, times, n0=None, t0: float = 0.0) -> Trajectory:
    """Integrate the network from ``n0`` (default ``params.n0``) at ``t0``
    with dense output at ``times``."""
    start = params.n0 if n0 is None else np.asarray(n0, dtype=float)
    times = np.asarray(times, dtype=float)
    states, code, steps = dopri5(glv_rhs, params.packed(), t0, start, times, RTOL, ATOL, MAX_STEPS, True)
    return Trajectory(times, states, _STATUS[code], steps)


def ecosystem_log_likelihood(params: EcosystemParams, dataset: TimeSeriesDataset = DATASET) -> float:
    if params.sigma is None:
        raise ValueError("likelihood needs per-species sigmas")
    traj = simulate(params, dataset.time_array)
    if traj.status != COMPLETED:
        return -math.inf
    return gaussian_log_likelihood(traj.states.T, dataset, params.sigma)


@dataclass(frozen=True)
class ScenarioResult:
    baseline: Trajectory
    intervention: Trajectory


def management_scenario(
    params: EcosystemParams,
    reduction_fraction: float = 0.2,
    intervention_time: float = 10.0,
    horizon: float = 30.0,
    times=None,
) -> ScenarioResult:
    """Baseline vs. a one-off cull that multiplies foxes by
    ``reduction_fraction`` at ``intervention_time``."""
    if not 0.0 <= reduction_fraction <= 1.0:
        raise ValueError("reduction_fraction must lie in [0, 1]")
    if not intervention_time < horizon:
        raise ValueError("intervention must happen before the horizon")
    if times is None:
        times = np.linspace(0.0, horizon, int(round(horizon * 4)) + 1)
    times = np.asarray(times, dtype=float)
    base = simulate(params, times)
    if reduction_fraction == 1.0:
        return ScenarioResult(base, base)

    before = times[times <= intervention_time]
    after = times[times > intervention_time]
    if before.size == 0 or before[-1] < intervention_time:
        pre = simulate(params, np.append(before, intervention_time))
    else:
        pre = simulate(params, before)
    states = np.full((times.size, 4), np.nan)
    states[: before.size] = pre.states[: before.size]
    status = pre.status
    if pre.status == COMPLETED and after.size:
        jump = pre.states[-1].copy()
        jump[_IDX["F"]] *= reduction_fraction
        post = simulate(params, after, n0=jump, t0=intervention_time)
        states[before.size:] = post.states
        status = post.status
    return ScenarioResult(base, Trajectory(times, states, status, 0))


class EcosystemModel(CaseModel):
    case = "ecosystem"
    channels = SPECIES

    def __init__(self, with_sigma: bool = False, sigma_prior: Uniform = SIGMA_PRIOR):
        super().__init__(build_prior(with_sigma, sigma_prior))
        self.with_sigma = with_sigma

    def log_likelihood(self, theta):
        return ecosystem_log_likelihood(EcosystemParams.from_vector(theta))

    def discrepancy(self, theta):
        return ecosystem_discrepancy(EcosystemParams.from_vector(theta))

    def evaluate(self, theta, epsilon, use_likelihood, use_discrepancy):
        p = EcosystemParams.from_vector(theta)
        rho = ecosystem_discrepancy(p) if use_discrepancy else 0.0
        if rho > epsilon:
            return math.nan, rho
        ll = ecosystem_log_likelihood(p) if use_likelihood else 0.0
        return ll, rho

    def derived(self, theta):
        rep = equilibrium(EcosystemParams.from_vector(theta))
        out = {}
        for k, s in enumerate(SPECIES):
            out[f"nstar_{s}"] = math.nan if rep.singular else float(rep.n_star[k])
        for k in range(4):
            out[f"eig_real_{k + 1}"] = math.nan if rep.singular else float(rep.eigen_real[k])
        out["feasible"] = float(not rep.singular and bool(np.all(rep.n_star > 0)))
        out["stable"] = float(not rep.singular and bool(np.all(rep.eigen_real < 0)))
        return out

    def default_grid(self):
        return np.linspace(0.0, 30.0, 121)

    def predict(self, theta, grid):
        traj = simulate(EcosystemParams.from_vector(theta), grid)
        return traj.states.T if traj.ok else None
