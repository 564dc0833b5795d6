"""Right-hand side of the truncated exchange-driven growth system.

For sizes ``0..N`` the truncated equations read ::

    df_0/dt = F_1 - G_0
    df_j/dt = F_{j+1} - F_j - G_j + G_{j-1}      1 <= j <= N-1
    df_N/dt = -F_N + G_{N-1}

with export fluxes ``F_j = f_j A_j`` and import fluxes ``G_j = f_j B_j``,

    A_j = sum_{k=0}^{N-1} K(j, k) f_k       (1 <= j <= N)
    B_j = sum_{k=1}^{N}   K(k, j) f_k       (0 <= j <= N-1).

The index limits matter: a donor of size ``N`` cannot receive and a size-0
cluster cannot export, which is what makes the truncated zeroth and first
moments exact invariants.

Rate vectors are returned aligned with sizes, length ``N + 1``, with the
unused entries ``A[0]`` and ``B[N]`` set to zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .kernel import Kernel
from .state import DensityState

PATHS = ("auto", "dense", "separable")

# rows per block in the dense O(N^2) reductions
_BLOCK = 512


class DynamicsError(ValueError):
    pass


@lru_cache(maxsize=16)
def _factors(kernel: Kernel, N: int) -> tuple[np.ndarray, np.ndarray]:
    # a1 zero at size 0 (no export from empty clusters), b1 zero at size N
    a, b = kernel.separable.factor_arrays(N)
    a1 = a.copy()
    a1[:, 0] = 0.0
    b1 = b.copy()
    b1[:, N] = 0.0
    a1.setflags(write=False)
    b1.setflags(write=False)
    return a1, b1


@lru_cache(maxsize=2)
def _dense_matrix(kernel: Kernel, N: int) -> np.ndarray:
    m = np.array(kernel.matrix(N), dtype=float)
    m.setflags(write=False)
    return m


def _resolve_path(kernel: Kernel, path: str) -> str:
    if path not in PATHS:
        raise DynamicsError(f"unknown rate path {path!r}")
    if path == "auto":
        return "separable" if kernel.separable is not None else "dense"
    if path == "separable" and kernel.separable is None:
        raise DynamicsError("kernel has no separable decomposition")
    return path


def _check_size(kernel: Kernel, N: int) -> None:
    size = kernel.table_size
    if size is not None and size < N + 1:
        raise DynamicsError(f"tabulated kernel covers sizes 0..{size - 1}, state needs 0..{N}")


@dataclass(frozen=True, eq=False)
class RateOperator:
    """Right-hand side evaluator bound to one kernel and truncation size.

    Holds the tabulated separable factors (or the dense kernel matrix) so
    repeated evaluations inside an integrator do no set-up work.
    """

    kernel: Kernel
    N: int
    path: str

    @classmethod
    def build(cls, kernel: Kernel, N: int, path: str = "auto") -> "RateOperator":
        _check_size(kernel, N)
        return cls(kernel, int(N), _resolve_path(kernel, path))

    def rates(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N = self.N
        if self.path == "separable":
            a1, b1 = _factors(self.kernel, N)
            S = b1 @ f  # S_m = sum_{k<=N-1} b_m(k) f_k
            R = a1 @ f  # R_m = sum_{k>=1} a_m(k) f_k
            A = S @ a1
            B = R @ b1
            return A, B
        K = _dense_matrix(self.kernel, N)
        A = np.zeros(N + 1)
        B = np.zeros(N + 1)
        fN = f[:N]
        for lo in range(1, N + 1, _BLOCK):
            hi = min(lo + _BLOCK, N + 1)
            A[lo:hi] = (K[lo:hi, :N] * fN).sum(axis=1)
        f1 = f[1:, None]
        for lo in range(0, N, _BLOCK):
            hi = min(lo + _BLOCK, N)
            B[lo:hi] = (K[1:, lo:hi] * f1).sum(axis=0)
        return A, B

    def __call__(self, f: np.ndarray) -> np.ndarray:
        A, B = self.rates(f)
        return _assemble(f, A, B)

    def jacobian(self, f: np.ndarray) -> "Jacobian":
        """Exact Jacobian of the right-hand side at ``f``."""
        A, B = self.rates(f)
        lower = B[:-1].copy()  # d(df_j)/d f_{j-1}
        upper = A[1:].copy()  # d(df_j)/d f_{j+1}
        diag = -(A + B)
        if self.path == "separable":
            a1, b1 = _factors(self.kernel, self.N)
            U = np.concatenate([_forward_diff(f * a1), _backward_diff(f * b1)]).T
            V = np.concatenate([b1, a1]).T
            return Jacobian(lower, diag, upper, U, V, None)
        K = _dense_matrix(self.kernel, self.N)
        N = self.N
        Kx = K.copy()
        Kx[0, :] = 0.0
        Kx[:, N] = 0.0
        Ki = K.T.copy()
        Ki[N, :] = 0.0
        Ki[:, 0] = 0.0
        dense = _forward_diff(f[:, None] * Kx, axis=0) + _backward_diff(f[:, None] * Ki, axis=0)
        return Jacobian(lower, diag, upper, None, None, dense)


def _forward_diff(x: np.ndarray, axis: int = -1) -> np.ndarray:
    # (D x)_j = x_{j+1} - x_j, with x_{N+1} = 0
    x = np.moveaxis(np.asarray(x), axis, -1)
    out = -x.copy()
    out[..., :-1] += x[..., 1:]
    return np.moveaxis(out, -1, axis)


def _backward_diff(x: np.ndarray, axis: int = -1) -> np.ndarray:
    # (E x)_j = x_{j-1} - x_j, with x_{-1} = 0
    x = np.moveaxis(np.asarray(x), axis, -1)
    out = -x.copy()
    out[..., 1:] += x[..., :-1]
    return np.moveaxis(out, -1, axis)


@dataclass(frozen=True)
class Jacobian:
    """``J = tridiag(lower, diag, upper) + U @ V.T`` or ``tridiag + dense``."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    U: Optional[np.ndarray]
    V: Optional[np.ndarray]
    dense: Optional[np.ndarray]

    def to_dense(self) -> np.ndarray:
        n = self.diag.size
        J = np.diag(self.diag) + np.diag(self.lower, -1) + np.diag(self.upper, 1)
        if self.dense is not None:
            J = J + self.dense
        else:
            J = J + self.U @ self.V.T
        return J

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        if self.dense is not None:
            y += self.dense @ x
        else:
            y += self.U @ (self.V.T @ x)
        return y


def _assemble(f: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    F = f * A  # F_0 = 0 since A_0 = 0
    G = f * B  # G_N = 0 since B_N = 0
    out = -F
    out[:-1] += F[1:]
    out -= G
    out[1:] += G[:-1]
    return out


def export_rates(state: DensityState, kernel: Kernel, path: str = "auto") -> np.ndarray:
    """``A[j] = sum_{k=0}^{N-1} K(j,k) f_k`` for ``j = 1..N``; ``A[0] = 0``."""
    return RateOperator.build(kernel, state.N, path).rates(state.f)[0]


def import_rates(state: DensityState, kernel: Kernel, path: str = "auto") -> np.ndarray:
    """``B[j] = sum_{k=1}^{N} K(k,j) f_k`` for ``j = 0..N-1``; ``B[N] = 0``."""
    return RateOperator.build(kernel, state.N, path).rates(state.f)[1]


def rhs(state: DensityState, kernel: Kernel, path: str = "auto") -> np.ndarray:
    """Time derivative of every density in ``state``."""
    return RateOperator.build(kernel, state.N, path)(state.f)


def divergence_form(state: DensityState, kernel: Kernel, h) -> float:
    """``sum_j h_j df_j/dt`` computed from the symmetric rearrangement.

    The sum is split into an interior curvature term and three boundary
    terms that involve size 0 and size ``N``.  It is evaluated directly
    from kernel values and never calls :func:`rhs`, so it serves as an
    independent check of the right-hand side.  Only valid for symmetric
    kernels.
    """
    if not kernel.symmetric:
        raise DynamicsError("divergence form requires a symmetric kernel")
    f = state.f
    N = state.N
    h = np.asarray(h, dtype=float)
    if h.shape != f.shape:
        raise DynamicsError(f"weight vector has length {h.size}, expected {N + 1}")
    _check_size(kernel, N)
    K = _dense_matrix(kernel, N)
    inner = np.arange(1, N)
    curvature = h[2:] - 2.0 * h[1:-1] + h[:-2]
    interior = K[1:N, 1:N] @ f[1:N]
    t1 = np.sum(curvature * f[inner] * interior)
    t2 = np.sum(((h[:-2] - h[1:-1]) + (h[1] - h[0])) * K[inner, 0] * f[inner] * f[0])
    t3 = np.sum(((h[2:] - h[1:-1]) + (h[N - 1] - h[N])) * f[inner] * K[N, inner] * f[N])
    t4 = ((h[N - 1] - h[N]) + (h[1] - h[0])) * f[N] * K[N, 0] * f[0]
    return float(t1 + t2 + t3 + t4)
