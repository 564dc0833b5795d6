"""Truncated cluster-density vectors and their moments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

INIT_FAMILIES = ("monodisperse", "delta_at", "geometric", "custom")


class StateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DensityState:
    """Densities ``f[0..N]`` of clusters of each size at time ``t``.

    The array is copied and made read-only on construction.
    """

    t: float
    f: np.ndarray

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.ndim != 1 or f.size < 3:
            raise StateError("density vector must be one-dimensional with N + 1 >= 3 entries")
        if not np.all(np.isfinite(f)):
            raise StateError("density vector contains non-finite entries")
        if np.any(f < 0):
            raise StateError("densities must be non-negative")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "t", float(self.t))

    @property
    def N(self) -> int:
        return self.f.size - 1

    def with_values(self, t: float, f: np.ndarray) -> "DensityState":
        return DensityState(t, f)


@dataclass(frozen=True)
class InitSpec:
    """Initial-data recipe.

    Parameters
    ----------
    family : {'monodisperse', 'delta_at', 'geometric', 'custom'}
    amplitude : float
        Density placed at size 1 (``monodisperse``) or at size ``s``
        (``delta_at``); for ``geometric`` the zeroth moment of the truncated
        vector.
    s : int
        Occupied size for ``delta_at``.
    q : float
        Ratio of the geometric profile ``f_j ~ q**j``; must lie in [0, 1).
    values : sequence of float, optional
        Explicit densities ``f_0, f_1, ...`` for ``custom``.
    """

    family: str = "monodisperse"
    amplitude: float = 1.0
    s: int = 1
    q: float = 0.5
    values: Optional[tuple] = field(default=None)


def make_state(init: InitSpec, N: int) -> DensityState:
    """Initial :class:`DensityState` at ``t = 0`` on sizes ``0..N``."""
    if int(N) != N or N < 2:
        raise StateError(f"truncation size N must be an integer >= 2, got {N!r}")
    N = int(N)
    if init.family not in INIT_FAMILIES:
        raise StateError(f"unknown init family {init.family!r}")
    if init.family != "custom" and init.amplitude < 0:
        raise StateError("amplitude must be non-negative")
    f = np.zeros(N + 1)
    if init.family == "monodisperse":
        f[1] = init.amplitude
    elif init.family == "delta_at":
        if not 0 <= init.s <= N:
            raise StateError(f"delta_at size {init.s} outside 0..{N}")
        f[init.s] = init.amplitude
    elif init.family == "geometric":
        if not 0.0 <= init.q < 1.0:
            raise StateError(f"geometric ratio q must lie in [0, 1), got {init.q}")
        w = np.power(init.q, np.arange(N + 1, dtype=float))
        f = init.amplitude * w / w.sum()
    else:
        if init.values is None:
            raise StateError("custom init requires values")
        vals = np.asarray(init.values, dtype=float)
        if vals.size > N + 1:
            raise StateError(f"custom init has {vals.size} values, more than N + 1 = {N + 1}")
        if np.any(vals < 0):
            raise StateError("custom init values must be non-negative")
        f[: vals.size] = vals
    return DensityState(0.0, f)


def size_powers(N: int, p: float) -> np.ndarray:
    """``j**p`` for ``j = 0..N`` with ``0**0 = 1`` and ``0**p = 0`` for ``p > 0``."""
    return np.power(np.arange(N + 1, dtype=float), float(p))


def moment(state: DensityState, p: float) -> float:
    """``M_p = sum_j j**p f_j`` over the truncated range."""
    if p < 0:
        raise StateError("moment order must be non-negative")
    return float(np.dot(size_powers(state.N, p), state.f))


def moments(f: np.ndarray, orders: Sequence[float]) -> np.ndarray:
    """Several moments of a raw density vector (or a stack of them, last axis = size)."""
    f = np.asarray(f, dtype=float)
    j = np.arange(f.shape[-1], dtype=float)
    return np.stack([f @ np.power(j, float(p)) for p in orders], axis=-1)


def weighted_sum(state: DensityState, h) -> float:
    h = np.asarray(h, dtype=float)
    if h.shape != state.f.shape:
        raise StateError(f"weight vector has length {h.size}, expected {state.N + 1}")
    return float(np.dot(h, state.f))


def tail_moment(state: DensityState, m: int, p: float) -> float:
    """``sum_{j >= m} j**p f_j``."""
    if m > state.N or m < 0:
        raise StateError(f"tail start {m} outside 0..{state.N}")
    return float(np.dot(size_powers(state.N, p)[m:], state.f[m:]))


@dataclass(frozen=True)
class MomentSeries:
    orders: tuple
    times: np.ndarray
    values: np.ndarray  # shape (len(times), len(orders))

    def column(self, p: float) -> np.ndarray:
        return self.values[:, self.orders.index(p)]
