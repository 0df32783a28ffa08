"""Complex-complete two-substrate enzymatic network screened for adaptation.

Substrate A is activated by enzyme E1 and deactivated through a complex
with B*; B is activated by A* and deactivated by E4. Raising free E1 by one
unit after the network settles probes whether the output ``O = A* + C3``
responds strongly (sensitivity S) and then returns close to its old level
(precision P).

State order is ``(A, A*, B, B*, E1, E4, C1, C2, C3, C4)`` and the packed
rate vector is ``[a1..a4, d1..d4, k1..k4]`` in linear space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..core import Log10Uniform, PriorSpec
from ..odeint import COMPLETED, OdeProblem, lsoda, settle_to_steady_state
from .base import CaseModel

log = logging.getLogger(__name__)

INITIAL_STATE = np.array([10.0, 0.0, 10.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
STATE_NAMES = ("A", "A*", "B", "B*", "E1", "E4", "C1", "C2", "C3", "C4")
RATE_PRIOR = Log10Uniform(-3.0, 4.0)

SETTLE_HORIZON = 1e6
RESPONSE_HORIZON = 100.0
STIMULUS = 1.0
DERIVATIVE_TOL = 1e-8
RTOL = 1e-6
ATOL = 1e-10
MAX_STEPS = 100_000
GRID_POINTS = 2001
MIN_SENSITIVITY = 1.0
MIN_PRECISION = 10.0


def parameter_names() -> tuple[str, ...]:
    return tuple(f"log10_{g}{i}" for g in "adk" for i in range(1, 5))


def build_prior() -> PriorSpec:
    return PriorSpec(parameter_names(), (RATE_PRIOR,) * 12)


@dataclass(frozen=True)
class BiochemParams:
    """Rates in linear space; sampler space holds their log10 exponents."""

    a: np.ndarray
    d: np.ndarray
    k: np.ndarray

    @classmethod
    def from_vector(cls, theta) -> "BiochemParams":
        rates = 10.0 ** np.asarray(theta, dtype=float)
        return cls(rates[0:4].copy(), rates[4:8].copy(), rates[8:12].copy())

    @classmethod
    def from_rates(cls, a, d, k) -> "BiochemParams":
        return cls(*(np.asarray(v, dtype=float).reshape(4) for v in (a, d, k)))

    def packed(self) -> np.ndarray:
        return np.concatenate([self.a, self.d, self.k])


@njit(cache=True)
def biochem_rhs(t, y, p):
    A, As, B, Bs, E1, E4, C1, C2, C3, C4 = y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7], y[8], y[9]
    a1, a2, a3, a4 = p[0], p[1], p[2], p[3]
    d1, d2, d3, d4 = p[4], p[5], p[6], p[7]
    k1, k2, k3, k4 = p[8], p[9], p[10], p[11]
    out = np.empty(10)
    out[0] = d1 * C1 + k2 * C2 - a1 * A * E1
    out[1] = k1 * C1 + d2 * C2 + (d3 + k3) * C3 - a3 * As * B - a2 * As * Bs
    out[2] = d3 * C3 + k4 * C4 - a3 * B * As
    out[3] = (d2 + k2) * C2 + d4 * C4 + k3 * C3 - a2 * As * Bs - a4 * Bs * E4
    out[4] = (d1 + k1) * C1 - a1 * A * E1
    out[5] = (d4 + k4) * C4 - a4 * Bs * E4
    out[6] = a1 * A * E1 - (d1 + k1) * C1
    out[7] = a2 * As * Bs - (d2 + k2) * C2
    out[8] = a3 * As * B - (d3 + k3) * C3
    out[9] = a4 * Bs * E4 - (d4 + k4) * C4
    return out


@njit(cache=True)
def biochem_jac(t, y, p):
    A, As, B, Bs, E1, E4 = y[0], y[1], y[2], y[3], y[4], y[5]
    a1, a2, a3, a4 = p[0], p[1], p[2], p[3]
    d1, d2, d3, d4 = p[4], p[5], p[6], p[7]
    k1, k2, k3, k4 = p[8], p[9], p[10], p[11]
    J = np.zeros((10, 10))
    J[0, 0] = -a1 * E1
    J[0, 4] = -a1 * A
    J[0, 6] = d1
    J[0, 7] = k2
    J[1, 1] = -a3 * B - a2 * Bs
    J[1, 2] = -a3 * As
    J[1, 3] = -a2 * As
    J[1, 6] = k1
    J[1, 7] = d2
    J[1, 8] = d3 + k3
    J[2, 1] = -a3 * B
    J[2, 2] = -a3 * As
    J[2, 8] = d3
    J[2, 9] = k4
    J[3, 1] = -a2 * Bs
    J[3, 3] = -a2 * As - a4 * E4
    J[3, 5] = -a4 * Bs
    J[3, 7] = d2 + k2
    J[3, 8] = k3
    J[3, 9] = d4
    J[4, 0] = -a1 * E1
    J[4, 4] = -a1 * A
    J[4, 6] = d1 + k1
    J[5, 3] = -a4 * E4
    J[5, 5] = -a4 * Bs
    J[5, 9] = d4 + k4
    J[6, 0] = a1 * E1
    J[6, 4] = a1 * A
    J[6, 6] = -(d1 + k1)
    J[7, 1] = a2 * Bs
    J[7, 3] = a2 * As
    J[7, 7] = -(d2 + k2)
    J[8, 1] = a3 * B
    J[8, 2] = a3 * As
    J[8, 8] = -(d3 + k3)
    J[9, 3] = a4 * E4
    J[9, 5] = a4 * Bs
    J[9, 9] = -(d4 + k4)
    return J


def output_of(states) -> np.ndarray:
    """O = A* + C3 along the last axis."""
    states = np.asarray(states, dtype=float)
    return states[..., 1] + states[..., 8]


def input_of(states) -> np.ndarray:
    """I = E1 + C1 along the last axis."""
    states = np.asarray(states, dtype=float)
    return states[..., 4] + states[..., 6]


def sensitivity(O1: float, O_peak: float, I1: float, I2: float) -> float:
    return (abs(O_peak - O1) / O1) / ((I2 - I1) / I1)


def precision(O1: float, O2: float, I1: float, I2: float) -> float:
    dev = (abs(O2 - O1) / O1) / ((I2 - I1) / I1)
    return math.inf if dev == 0.0 else 1.0 / dev


def adaptation_discrepancy(S: float, P: float) -> float:
    return max(0.0, MIN_SENSITIVITY - S) + max(0.0, MIN_PRECISION - P)


@dataclass(frozen=True)
class AdaptationReport:
    O1: float
    O_peak: float
    O2: float
    I1: float
    I2: float
    S: float
    P: float
    steady_state_reached: bool
    rho: float
    status: str = COMPLETED
    settled_state: np.ndarray | None = None
    response_times: np.ndarray | None = None
    response: np.ndarray | None = None

    @property
    def adaptive(self) -> bool:
        return self.rho == 0.0


def _failed(status: str, reached: bool = False, settled=None, **known) -> AdaptationReport:
    fields = dict(O1=math.nan, O_peak=math.nan, O2=math.nan, I1=math.nan, I2=math.nan, S=math.nan, P=math.nan)
    fields.update(known)
    return AdaptationReport(**fields, steady_state_reached=reached, rho=math.inf, status=status,
                            settled_state=settled)


def stimulate_and_measure(
    params: BiochemParams,
    grid_points: int = GRID_POINTS,
    derivative_tol: float = DERIVATIVE_TOL,
    rel_tol: float = RTOL,
    abs_tol: float = ATOL,
    keep_trajectory: bool = False,
) -> AdaptationReport:
    """Settle from the reference initial state, raise free E1 by one unit and
    score the output response on a ``grid_points`` grid over 100 time units.

    Any integration failure, a system that has not settled, or a zero
    pre-stimulus output yields ``rho = inf``.
    """
    p = params.packed()
    problem = OdeProblem(biochem_rhs, INITIAL_STATE, (0.0, SETTLE_HORIZON), p, biochem_jac)
    ss = settle_to_steady_state(problem, SETTLE_HORIZON, derivative_tol, rel_tol, abs_tol, "lsoda", MAX_STEPS)
    if ss.status != COMPLETED:
        return _failed(ss.status)
    if not ss.reached:
        return _failed("not-settled", settled=ss.state)
    settled = ss.state
    O1, I1 = float(output_of(settled)), float(input_of(settled))
    if not O1 > 0.0:
        return _failed("zero-output", True, settled, O1=O1, I1=I1)

    kicked = settled.copy()
    kicked[4] += STIMULUS
    I2 = I1 + STIMULUS
    times = np.linspace(0.0, RESPONSE_HORIZON, grid_points)
    states, code, _ = lsoda(biochem_rhs, p, 0.0, kicked, times, rel_tol, abs_tol, MAX_STEPS, biochem_jac)
    if code != 0:
        return _failed("response-failed", True, settled, O1=O1, I1=I1, I2=I2)
    O = output_of(states)
    O_peak = float(O[np.argmax(np.abs(O - O1))])
    O2 = float(O[-1])
    S = sensitivity(O1, O_peak, I1, I2)
    P = precision(O1, O2, I1, I2)
    return AdaptationReport(
        O1, O_peak, O2, I1, I2, S, P, True, adaptation_discrepancy(S, P), COMPLETED, settled,
        times if keep_trajectory else None, states if keep_trajectory else None,
    )


def biochem_discrepancy(params: BiochemParams, **kwargs) -> float:
    """max(0, 1 - S) + max(0, 10 - P); zero exactly for adaptive systems."""
    return stimulate_and_measure(params, **kwargs).rho


def michaelis_constants(params: BiochemParams) -> np.ndarray:
    """K_i = (d_i + k_i) / a_i."""
    return (params.d + params.k) / params.a


class BiochemModel(CaseModel):
    case = "biochem"
    supports_data = False
    channels = ("O_rel",)

    def __init__(self, grid_points: int = GRID_POINTS, derivative_tol: float = DERIVATIVE_TOL):
        super().__init__(build_prior())
        self.grid_points = grid_points
        self.derivative_tol = derivative_tol

    def report(self, theta, keep_trajectory: bool = False) -> AdaptationReport:
        return stimulate_and_measure(BiochemParams.from_vector(theta), self.grid_points,
                                     self.derivative_tol, keep_trajectory=keep_trajectory)

    def discrepancy(self, theta):
        rep = self.report(theta)
        if rep.status == "not-settled":
            log.debug("parameter set did not settle: %s", np.asarray(theta).tolist())
        return rep.rho

    def derived(self, theta):
        params = BiochemParams.from_vector(theta)
        rep = stimulate_and_measure(params, self.grid_points, self.derivative_tol)
        out = {f"K{i + 1}": float(v) for i, v in enumerate(michaelis_constants(params))}
        out.update(S=rep.S, P=rep.P, O1=rep.O1, O_peak=rep.O_peak, O2=rep.O2)
        return out

    def default_grid(self):
        return np.linspace(0.0, RESPONSE_HORIZON, 201)

    def predict(self, theta, grid):
        """Post-stimulus output relative to its pre-stimulus level."""
        grid = np.asarray(grid, dtype=float)
        params = BiochemParams.from_vector(theta)
        rep = stimulate_and_measure(params, self.grid_points, self.derivative_tol)
        if rep.settled_state is None or not rep.steady_state_reached or not rep.O1 > 0:
            return None
        kicked = rep.settled_state.copy()
        kicked[4] += STIMULUS
        states, code, _ = lsoda(biochem_rhs, params.packed(), 0.0, kicked, grid, RTOL, ATOL, MAX_STEPS, biochem_jac)
        if code != 0:
            return None
        return (output_of(states) / rep.O1)[None, :]


def count_unsettled(model: BiochemModel, thetas) -> int:
    """Number of parameter sets that never reach a steady state."""
    return sum(model.report(t).status == "not-settled" for t in np.atleast_2d(thetas))
