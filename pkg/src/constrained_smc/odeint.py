"""Initial-value ODE integration.

``dopri5`` is an adaptive Dormand-Prince 5(4) pair with its 4th-order
continuous extension for dense output. When the right-hand side is a numba
``@njit`` function the whole loop is compiled; plain Python callables run
the same code uncompiled. Stiff systems go through LSODA (scipy's
``odeint``), selected with ``method="lsoda"``.

Right-hand sides take ``(t, y, params)`` and return a new array.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher
from scipy.integrate import ODEintWarning, odeint as _lsoda

DIVERGENCE_BOUND = 1e12
DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-8
DEFAULT_MAX_STEPS = 10_000_000

COMPLETED = "completed"
DIVERGED = "diverged"
STEP_UNDERFLOW = "step-underflow"
_STATUS = (COMPLETED, DIVERGED, STEP_UNDERFLOW)

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    ]
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus embedded 4th order weights, including the FSAL stage
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + s*h) = y + h * K^T @ _P @ [s, s^2, s^3, s^4]
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


def _dopri5_impl(rhs, params, t0, y0, t_out, rtol, atol, max_steps, clip_negative):
    """Integrate from ``t0`` to ``t_out[-1]``, filling rows of the result at
    each ``t_out`` (sorted, all >= t0). Returns (states, status, n_steps);
    status 0 completed, 1 diverged, 2 step underflow."""
    d = y0.size
    n_out = t_out.size
    out = np.full((n_out, d), np.nan)
    t_end = t_out[n_out - 1]
    y = y0.copy()
    t = t0
    j = 0
    while j < n_out and t_out[j] <= t0:
        out[j] = y
        j += 1
    if j == n_out:
        return out, 0, 0

    f = rhs(t, y, params)
    if not np.all(np.isfinite(f)):
        return out, 1, 0
    # starting step size (Hairer, Norsett & Wanner II.4)
    span = t_end - t0
    sc = atol + np.abs(y) * rtol
    d0 = math.sqrt(np.sum((y / sc) ** 2) / d)
    d1 = math.sqrt(np.sum((f / sc) ** 2) / d)
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, span)
    f1 = rhs(t0 + h, y + h * f, params)
    d2 = math.sqrt(np.sum(((f1 - f) / sc) ** 2) / d) / h
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100.0 * h, h1, span)
    K = np.empty((7, d))
    steps = 0
    rejected = False
    while True:
        if steps >= max_steps:
            return out, 2, steps
        min_step = 10.0 * np.finfo(np.float64).eps * max(abs(t), 1.0)
        if h < min_step:
            return out, 2, steps
        if t + h > t_end or t_end - (t + h) < min_step:
            h = t_end - t
        K[0] = f
        for s in range(1, 6):
            dy = np.zeros(d)
            for m in range(s):
                dy += _A[s, m] * K[m]
            K[s] = rhs(t + _C[s] * h, y + h * dy, params)
        dy = np.zeros(d)
        for m in range(6):
            dy += _B[m] * K[m]
        y_new = y + h * dy
        if clip_negative:
            y_new = np.maximum(y_new, 0.0)
        f_new = rhs(t + h, y_new, params)
        K[6] = f_new
        steps += 1

        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            # treat as an oversized step first
            h *= 0.2
            rejected = True
            continue

        err = np.zeros(d)
        for m in range(7):
            err += _E[m] * K[m]
        err *= h
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = math.sqrt(np.sum((err / scale) ** 2) / d)

        if err_norm <= 1.0:
            t_new = t + h
            if j < n_out and t_out[j] <= t_new:
                Q = K.T @ _P
                while j < n_out and t_out[j] <= t_new:
                    if t_out[j] == t_new:
                        out[j] = y_new
                    else:
                        s_ = (t_out[j] - t) / h
                        p = np.array([s_, s_ * s_, s_**3, s_**4])
                        yj = y + h * (Q @ p)
                        if clip_negative:
                            yj = np.maximum(yj, 0.0)
                        out[j] = yj
                    j += 1
            if np.max(np.abs(y_new)) > DIVERGENCE_BOUND:
                return out, 1, steps
            t = t_new
            y = y_new
            f = f_new
            if j >= n_out or t >= t_end:
                return out, 0, steps
            if err_norm == 0.0:
                factor = 10.0
            else:
                factor = min(10.0, 0.9 * err_norm ** -0.2)
            if rejected:
                factor = min(1.0, factor)
            h *= factor
            rejected = False
        else:
            h *= max(0.2, 0.9 * err_norm ** -0.2)
            rejected = True


_dopri5_jit = njit(cache=True)(_dopri5_impl)


def dopri5(rhs, params, t0, y0, t_out, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
           max_steps=DEFAULT_MAX_STEPS, clip_negative=False):
    """Low-level entry point; compiled when ``rhs`` is a numba function."""
    y0 = np.ascontiguousarray(y0, dtype=np.float64)
    t_out = np.ascontiguousarray(t_out, dtype=np.float64)
    params = np.ascontiguousarray(params, dtype=np.float64)
    if isinstance(rhs, CPUDispatcher):
        return _dopri5_jit(rhs, params, float(t0), y0, t_out, float(rtol), float(atol),
                           int(max_steps), bool(clip_negative))
    return _dopri5_py(rhs, params, float(t0), y0, t_out, rtol, atol, int(max_steps), clip_negative)


def _dopri5_py(rhs, params, t0, y0, t_out, rtol, atol, max_steps, clip_negative):
    def f(t, y, p):
        return np.asarray(rhs(t, y, p), dtype=float)

    return _dopri5_impl(f, params, t0, y0, t_out, float(rtol), float(atol), max_steps, clip_negative)


@dataclass(frozen=True)
class OdeProblem:
    rhs: Callable
    initial_state: np.ndarray
    t_span: tuple[float, float]
    params: np.ndarray = field(default_factory=lambda: np.empty(0))
    jac: Callable | None = None

    def __post_init__(self):
        y0 = np.asarray(self.initial_state, dtype=float).reshape(-1)
        object.__setattr__(self, "initial_state", y0)
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError("t_span must satisfy t1 > t0")

    @property
    def dimension(self) -> int:
        return self.initial_state.size

    def derivative(self, t, y) -> np.ndarray:
        return np.asarray(self.rhs(t, np.asarray(y, dtype=float), self.params), dtype=float)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    status: str
    n_steps: int = 0

    @property
    def ok(self) -> bool:
        return self.status == COMPLETED

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate(
    problem: OdeProblem,
    rel_tol: float = DEFAULT_RTOL,
    abs_tol: float = DEFAULT_ATOL,
    dense_times=None,
    method: str = "dopri5",
    max_steps: int = DEFAULT_MAX_STEPS,
    clip_negative: bool = False,
) -> Trajectory:
    """Solve ``problem`` over its span.

    ``dense_times`` (within the span) selects the output times; by default
    only the two endpoints are returned. Failure is reported through
    ``Trajectory.status`` and never raised.
    """
    if not (rel_tol > 0 and abs_tol > 0):
        raise ValueError("tolerances must be positive")
    t0, t1 = map(float, problem.t_span)
    if dense_times is None:
        times = np.array([t0, t1])
    else:
        times = np.asarray(dense_times, dtype=float)
        if np.any(np.diff(times) < 0) or times[0] < t0 or times[-1] > t1:
            raise ValueError("dense_times must be sorted and inside t_span")
        if times[-1] < t1:
            # integrate to the end of the span but only report requested times
            full = np.append(times, t1)
            states, code, steps = _solve(problem, full, rel_tol, abs_tol, method, max_steps, clip_negative)
            return Trajectory(times, states[:-1], _STATUS[code], steps)
    states, code, steps = _solve(problem, times, rel_tol, abs_tol, method, max_steps, clip_negative)
    return Trajectory(times, states, _STATUS[code], steps)


def _solve(problem, times, rtol, atol, method, max_steps, clip_negative):
    t0 = problem.t_span[0]
    if method == "dopri5":
        return dopri5(problem.rhs, problem.params, t0, problem.initial_state, times,
                      rtol, atol, max_steps, clip_negative)
    if method == "lsoda":
        return lsoda(problem.rhs, problem.params, t0, problem.initial_state, times,
                     rtol, atol, max_steps, jac=problem.jac)
    raise ValueError(f"unknown method {method!r}")


def lsoda(rhs, params, t0, y0, t_out, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
          max_steps=100_000, jac=None):
    """LSODA with automatic stiffness switching; same return convention as
    :func:`dopri5`. ``max_steps`` bounds the steps between two output times."""
    t_out = np.asarray(t_out, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    prepend = t_out[0] > t0
    grid = np.concatenate([[t0], t_out]) if prepend else t_out
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ODEintWarning)
        ys, info = _lsoda(
            rhs, y0, grid, args=(params,), Dfun=jac, tfirst=True,
            rtol=rtol, atol=atol, mxstep=int(max_steps), full_output=True,
        )
    if prepend:
        ys = ys[1:]
    steps = int(info["nst"][-1]) if len(info["nst"]) else 0
    if info["message"] != "Integration successful.":
        bad = ~np.isfinite(ys) | (np.abs(ys) > DIVERGENCE_BOUND)
        return ys, (1 if np.any(bad) else 2), steps
    if not np.all(np.isfinite(ys)) or np.max(np.abs(ys)) > DIVERGENCE_BOUND:
        return ys, 1, steps
    return ys, 0, steps


class SteadyState(NamedTuple):
    state: np.ndarray
    reached: bool
    status: str


def settle_to_steady_state(
    problem: OdeProblem,
    horizon: float,
    derivative_tol: float,
    rel_tol: float = DEFAULT_RTOL,
    abs_tol: float = DEFAULT_ATOL,
    method: str = "dopri5",
    max_steps: int = DEFAULT_MAX_STEPS,
) -> SteadyState:
    """Integrate for ``horizon`` time units from the problem's start.

    ``reached`` is true when the integration completed and
    ``max|dy/dt| <= derivative_tol`` at the endpoint.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    t0 = problem.t_span[0]
    settled = OdeProblem(problem.rhs, problem.initial_state, (t0, t0 + horizon), problem.params, problem.jac)
    traj = integrate(settled, rel_tol, abs_tol, None, method, max_steps)
    end = traj.final
    if not traj.ok:
        return SteadyState(end, False, traj.status)
    rate = np.max(np.abs(settled.derivative(t0 + horizon, end)))
    return SteadyState(end, bool(rate <= derivative_tol), traj.status)
