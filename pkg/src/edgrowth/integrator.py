"""Adaptive time integration of the truncated system.

Two embedded schemes share one step-size controller:

``dopri5``
    Explicit Dormand-Prince 5(4).  Cheap per step, but the loss rate of a
    size-``j`` cluster grows like ``K(j, .)``, so for fast-growing kernels
    at large ``N`` the step is stability limited.
``limex``
    Linearly implicit Euler with polynomial extrapolation on the harmonic
    sequence ``1, 2, ..., order``.  Each substep solves
    ``(I - h J) d = h F(y)`` with the exact Jacobian at the step start.
    For separable kernels the Jacobian is tridiagonal plus rank ``2M``,
    so a solve costs O(N M) through the Woodbury identity.

Both preserve the zeroth and first moments up to roundoff: every stage
increment is a combination of right-hand-side values (explicit) or of
``(I - h J)^{-1}`` applied to them, and ``J`` inherits the two conserved
row vectors of the right-hand side.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve

from .dynamics import Jacobian, RateOperator
from .kernel import Kernel
from .state import DensityState, MomentSeries, moments

logger = logging.getLogger(__name__)

METHODS = ("dopri5", "limex")
STOP_REASONS = ("reached_t_end", "blowup_detected", "dt_underflow")

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0


class StepSizeUnderflow(RuntimeError):
    """The controller asked for a step below ``dt_min``."""

    def __init__(self, t: float, dt: float):
        super().__init__(f"step size {dt:.3e} fell below dt_min at t = {t:.6g}")
        self.t = t
        self.dt = dt


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings.

    ``record_every`` is the output cadence; ``None`` records only the
    initial and final states.  ``method`` picks the scheme (see module
    docstring); ``limex_order`` is the number of extrapolation stages.
    """

    t_end: float = 1.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dt_init: float = 1e-6
    dt_min: float = 1e-14
    dt_max: float = 0.1
    neg_clip: float = 1e-14
    blowup_moment_order: float = 2.0
    blowup_threshold: float = 1e9
    record_every: Optional[float] = 0.01
    method: str = "limex"
    limex_order: int = 5
    rate_path: str = "auto"

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.record_every is not None and self.record_every <= 0:
            raise ValueError("record_every must be positive")
        if self.neg_clip < 0:
            raise ValueError("neg_clip must be non-negative")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.limex_order < 2:
            raise ValueError("limex_order must be at least 2")


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    final_dt: float = float("nan")
    rhs_evals: int = 0


@dataclass
class Trajectory:
    """Recorded states of one integration run.

    ``dts`` holds the last accepted step size at each record (zero for the
    initial state).
    """

    states: list
    moments: MomentSeries
    dts: np.ndarray
    step_stats: StepStats
    stop_reason: str
    config: Optional[IntegratorConfig] = field(default=None, repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def N(self) -> int:
        return self.states[0].N

    def moment(self, p: float) -> np.ndarray:
        """Moment of order ``p`` at every recorded time."""
        if p in self.moments.orders:
            return self.moments.column(p)
        return moments(np.array([s.f for s in self.states]), [p])[:, 0]


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# difference of the 5th- and 4th-order weights
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, cfg: IntegratorConfig) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


class _DormandPrince:
    exponent = 1.0 / 5.0

    def __init__(self, op: RateOperator):
        self.op = op
        self.evals = 0

    def attempt(self, y: np.ndarray, dt: float, cfg: IntegratorConfig):
        k = [self.op(y)]
        for i in range(1, 7):
            yi = y.copy()
            for a, ki in zip(_DP_A[i], k):
                if a != 0.0:
                    yi += (dt * a) * ki
            k.append(self.op(yi))
        self.evals += 7
        y_new = yi  # stage 7 evaluates at the 5th-order solution
        err = np.zeros_like(y)
        for e, ki in zip(_DP_E, k):
            if e != 0.0:
                err += (dt * e) * ki
        return y_new, _error_norm(err, y, y_new, cfg)


class _ShiftedSolver:
    """Solves ``(I - h J) x = b`` for a fixed ``h`` and Jacobian."""

    def __init__(self, jac: Jacobian, h: float):
        n = jac.diag.size
        if jac.dense is not None:
            W = -h * jac.to_dense()
            W[np.diag_indices(n)] += 1.0
            self._lu = lu_factor(W, check_finite=False)
            self._tri = None
            return
        self._lu = None
        dl, d, du, du2, ipiv, info = lapack.dgttrf(-h * jac.lower, 1.0 - h * jac.diag, -h * jac.upper)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal factorisation failed (info={info})")
        self._tri = (dl, d, du, du2, ipiv)
        self._h = h
        self._V = jac.V
        self._Z = self._tri_solve(jac.U)
        cap = np.eye(jac.U.shape[1]) - h * (jac.V.T @ self._Z)
        self._cap = lu_factor(cap, check_finite=False)

    def _tri_solve(self, b: np.ndarray) -> np.ndarray:
        x, info = lapack.dgttrs(*self._tri, b)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is not None and self._tri is None:
            return lu_solve(self._lu, b, check_finite=False)
        x0 = self._tri_solve(b)
        w = lu_solve(self._cap, self._h * (self._V.T @ x0), check_finite=False)
        return x0 + self._Z @ w


class _Extrapolation:
    def __init__(self, op: RateOperator, order: int):
        self.op = op
        self.order = order
        self.seq = tuple(range(1, order + 1))
        self.exponent = 1.0 / order
        self.evals = 0

    def attempt(self, y: np.ndarray, dt: float, cfg: IntegratorConfig):
        jac = self.op.jacobian(y)
        f0 = self.op(y)
        self.evals += 1
        table = []
        for i, n in enumerate(self.seq):
            h = dt / n
            solver = _ShiftedSolver(jac, h)
            yi = y + solver.solve(h * f0)
            for _ in range(n - 1):
                yi = yi + solver.solve(h * self.op(yi))
                self.evals += 1
            row = [yi]
            for j in range(1, i + 1):
                ratio = self.seq[i] / self.seq[i - j]
                row.append(row[j - 1] + (row[j - 1] - table[i - 1][j - 1]) / (ratio - 1.0))
            table.append(row)
        y_new = table[-1][-1]
        err = y_new - table[-1][-2]
        return y_new, _error_norm(err, y, y_new, cfg)


def _make_stepper(op: RateOperator, cfg: IntegratorConfig):
    if cfg.method == "dopri5":
        return _DormandPrince(op)
    return _Extrapolation(op, cfg.limex_order)


def _advance(stepper, y: np.ndarray, t: float, dt: float, cfg: IntegratorConfig):
    """One attempted step.  Returns ``(y_new or None, dt_next, accepted)``."""
    y_new, err = stepper.attempt(y, dt, cfg)
    if not np.all(np.isfinite(y_new)) or not math.isfinite(err):
        accepted, dt_next = False, dt * _FAC_MIN
    elif err <= 1.0:
        floor = -cfg.neg_clip * max(1.0, float(np.sum(y)))
        if np.any(y_new < floor):
            accepted, dt_next = False, 0.5 * dt
        else:
            np.maximum(y_new, 0.0, out=y_new)
            fac = _FAC_MAX if err == 0.0 else min(_FAC_MAX, max(_FAC_MIN, _SAFETY * err ** -stepper.exponent))
            accepted, dt_next = True, dt * fac
    else:
        fac = max(_FAC_MIN, _SAFETY * err ** -stepper.exponent)
        accepted, dt_next = False, dt * fac
    dt_next = min(dt_next, cfg.dt_max)
    if dt_next < cfg.dt_min:
        raise StepSizeUnderflow(t, dt_next)
    return (y_new if accepted else None), dt_next, accepted


def step(state: DensityState, kernel: Kernel, dt: float, cfg: IntegratorConfig):
    """Attempt one adaptive step of size ``dt``.

    Returns
    -------
    (DensityState, float, bool)
        The new state (the input state when the step is rejected), the
        proposed next step size and whether the step was accepted.

    Raises
    ------
    StepSizeUnderflow
        When the proposed next step is below ``cfg.dt_min``.
    """
    if dt < cfg.dt_min:
        raise StepSizeUnderflow(state.t, dt)
    op = RateOperator.build(kernel, state.N, cfg.rate_path)
    y_new, dt_next, accepted = _advance(_make_stepper(op, cfg), state.f.copy(), state.t, dt, cfg)
    if not accepted:
        return state, dt_next, False
    return DensityState(state.t + dt, y_new), dt_next, True


def integrate(
    state0: DensityState,
    kernel: Kernel,
    cfg: IntegratorConfig,
    orders: Sequence[float] = (0.0, 1.0, 2.0),
) -> Trajectory:
    """Integrate from ``state0`` until ``cfg.t_end``, blow-up or step underflow.

    States are recorded at ``t0 + r * record_every`` (steps are shortened to
    land on these times), at ``t_end`` and at the final time if the run
    stops early.  ``orders`` are the moments stored in the trajectory.
    """
    op = RateOperator.build(kernel, state0.N, cfg.rate_path)
    stepper = _make_stepper(op, cfg)
    orders = tuple(float(p) for p in orders)
    t0 = state0.t
    t_end = t0 + cfg.t_end
    y = state0.f.copy()
    t = t0
    dt = cfg.dt_init
    stats = StepStats()
    states = [state0]
    dts = [0.0]
    stop = "reached_t_end"
    rec_index = 1
    last_dt = 0.0
    blow_p = cfg.blowup_moment_order
    weights = np.power(np.arange(y.size, dtype=float), blow_p)

    def next_record() -> float:
        if cfg.record_every is None:
            return t_end
        return min(t0 + rec_index * cfg.record_every, t_end)

    target = next_record()
    while t < t_end:
        h = min(dt, target - t)
        try:
            y_new, dt_next, accepted = _advance(stepper, y, t, h, cfg)
        except StepSizeUnderflow as exc:
            logger.warning("%s", exc)
            stop = "dt_underflow"
            stats.final_dt = exc.dt
            break
        if not accepted:
            stats.rejected += 1
            dt = dt_next
            continue
        stats.accepted += 1
        last_dt = h
        # keep the controller's proposal when the step was clipped to a record time
        dt = dt_next if h == dt else max(dt, dt_next)
        dt = min(dt, cfg.dt_max)
        y = y_new
        t_new = t + h
        if abs(t_new - target) <= 1e-12 * max(1.0, abs(target)) or h == target - t:
            t_new = target
        t = t_new
        blown = float(weights @ y) > cfg.blowup_threshold
        if t == target or blown:
            states.append(DensityState(t, y.copy()))
            dts.append(last_dt)
            if t == target:
                rec_index += 1
                target = next_record()
        if blown:
            stop = "blowup_detected"
            break
    if stop == "dt_underflow" and states[-1].t != t:
        states.append(DensityState(t, y.copy()))
        dts.append(last_dt)
    if stop != "dt_underflow":
        stats.final_dt = dt
    stats.rhs_evals = stepper.evals
    series = MomentSeries(
        orders,
        np.array([s.t for s in states]),
        moments(np.array([s.f for s in states]), orders),
    )
    return Trajectory(states, series, np.array(dts), stats, stop, cfg)
