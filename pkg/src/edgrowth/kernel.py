"""Interaction kernels for exchange-driven growth.

A kernel ``K(j, k)`` is the rate at which a cluster of size ``j`` hands one
monomer to a cluster of size ``k``.  Kernels are built from a
:class:`KernelSpec` by :func:`make_kernel` and are immutable afterwards.

Parametric families
-------------------
``product_power``
    ``C (j^mu k^nu + j^nu k^mu)``
``homogeneous_eta``
    ``C (j k)^eta`` for ``eta > 0`` and ``C (1 - delta_{j,0})`` for ``eta = 0``
``sum_power``
    ``C (j^beta + k^beta)``
``separable_custom``
    ``sum_m a_m(j) b_m(k)`` from user supplied factor pairs
``tabulated``
    dense matrix of rates

Every family except ``tabulated`` carries a :class:`SeparableDecomposition`
which the right-hand side uses to evaluate the rate sums in O(N) instead of
O(N^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

FAMILIES = (
    "product_power",
    "sum_power",
    "homogeneous_eta",
    "tabulated",
    "separable_custom",
)

REGIMES = (
    "global_existence",
    "local_existence",
    "finite_gelation",
    "instantaneous_gelation",
    "unknown",
)


class KernelError(ValueError):
    """Raised for malformed kernel specifications or out-of-range lookups."""


@dataclass(frozen=True)
class PowerFactor:
    """Size factor ``coef * j**exponent``.

    ``positive_only`` zeroes the value at ``j = 0``.  Note that ``0**0 = 1``,
    so a zero exponent gives a constant factor unless ``positive_only`` is set.
    """

    coef: float = 1.0
    exponent: float = 0.0
    positive_only: bool = False

    def __call__(self, sizes):
        j = np.asarray(sizes, dtype=float)
        out = self.coef * np.power(j, self.exponent)
        if self.positive_only:
            out = np.where(j > 0, out, 0.0)
        return out


@dataclass(frozen=True)
class _Masked:
    # factor restricted to positive sizes (used for zero_receiver_row)
    inner: Callable

    def __call__(self, sizes):
        j = np.asarray(sizes, dtype=float)
        return np.where(j > 0, self.inner(j), 0.0)


@dataclass(frozen=True)
class SeparableDecomposition:
    """``K(j, k) = sum_m a_m(j) * b_m(k)``.

    Each factor is a vectorised callable mapping an array of sizes to an
    array of values.
    """

    terms: tuple

    def __len__(self):
        return len(self.terms)

    def factor_arrays(self, n_max: int) -> tuple[np.ndarray, np.ndarray]:
        """Tabulate the factors on sizes ``0..n_max``.

        Returns
        -------
        a, b : ndarray, shape (M, n_max + 1)
        """
        sizes = np.arange(n_max + 1, dtype=float)
        a = np.array([np.broadcast_to(t[0](sizes), sizes.shape) for t in self.terms], dtype=float)
        b = np.array([np.broadcast_to(t[1](sizes), sizes.shape) for t in self.terms], dtype=float)
        return a.reshape(len(self.terms), -1), b.reshape(len(self.terms), -1)

    def reconstruct(self, j, k):
        j = np.asarray(j, dtype=float)
        k = np.asarray(k, dtype=float)
        total = np.zeros(np.broadcast(j, k).shape)
        for a, b in self.terms:
            total = total + a(j) * b(k)
        return total


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of an interaction kernel.

    Only the parameters of the chosen ``family`` are read.  ``C1`` is the
    optional lower-bound constant used for gelation classification, and
    ``zero_receiver_row`` forces ``K(j, 0) = 0``.
    """

    family: str
    C: float = 1.0
    mu: Optional[float] = None
    nu: Optional[float] = None
    eta: Optional[float] = None
    beta: Optional[float] = None
    C1: Optional[float] = None
    zero_receiver_row: bool = False
    table: Optional[np.ndarray] = field(default=None, compare=False)
    terms: Optional[tuple] = field(default=None, compare=False)


@dataclass(frozen=True)
class RegimeClass:
    regime: str
    citation: str


@dataclass(frozen=True, eq=False)
class Kernel:
    """An evaluable interaction kernel.

    Use :func:`make_kernel` rather than constructing this directly.

    ``symmetric`` means ``K(j, k) = K(k, j)`` for all ``j, k >= 1``.  The
    donor row ``K(0, .)`` never enters the dynamics, so it is not compared;
    the homogeneous kernel with ``eta = 0`` (``1`` for ``j >= 1``, ``0`` for
    ``j = 0``) is symmetric in this sense.
    """

    spec: KernelSpec
    symmetric: bool
    separable: Optional[SeparableDecomposition]
    _table: Optional[np.ndarray] = field(default=None, repr=False)

    def __call__(self, j, k):
        return kernel_eval(self, j, k)

    def matrix(self, n_max: int) -> np.ndarray:
        """Dense ``(n_max + 1) x (n_max + 1)`` matrix with entries ``K(j, k)``."""
        sizes = np.arange(n_max + 1)
        return kernel_eval(self, sizes[:, None], sizes[None, :])

    @property
    def table_size(self) -> Optional[int]:
        return None if self._table is None else self._table.shape[0]


def _require(spec: KernelSpec, *names: str) -> None:
    for name in names:
        if getattr(spec, name) is None:
            raise KernelError(f"kernel family {spec.family!r} requires parameter {name!r}")


def _separable_for(spec: KernelSpec) -> Optional[SeparableDecomposition]:
    C = float(spec.C)
    fam = spec.family
    if fam == "product_power":
        mu, nu = float(spec.mu), float(spec.nu)
        terms = [
            (PowerFactor(C, mu), PowerFactor(1.0, nu)),
            (PowerFactor(C, nu), PowerFactor(1.0, mu)),
        ]
    elif fam == "homogeneous_eta":
        eta = float(spec.eta)
        if eta == 0.0:
            terms = [(PowerFactor(C, 0.0, positive_only=True), PowerFactor(1.0, 0.0))]
        else:
            terms = [(PowerFactor(C, eta), PowerFactor(1.0, eta))]
    elif fam == "sum_power":
        beta = float(spec.beta)
        terms = [
            (PowerFactor(C, beta), PowerFactor(1.0, 0.0)),
            (PowerFactor(1.0, 0.0), PowerFactor(C, beta)),
        ]
    elif fam == "separable_custom":
        terms = list(spec.terms)
    else:
        return None
    if spec.zero_receiver_row:
        # zero both K(j,0) and K(0,k) so symmetric families stay symmetric
        terms = [(_Masked(a), _Masked(b)) for a, b in terms]
    return SeparableDecomposition(tuple(terms))


def make_kernel(spec: KernelSpec) -> Kernel:
    """Build a :class:`Kernel` from a specification.

    Raises
    ------
    KernelError
        Unknown family, missing parameters, negative coefficient, or a
        tabulated matrix that is not square or has negative entries.
    """
    if spec.family not in FAMILIES:
        raise KernelError(f"unknown kernel family {spec.family!r}; expected one of {FAMILIES}")
    if spec.C is None or not np.isfinite(spec.C) or spec.C < 0:
        raise KernelError(f"kernel coefficient C must be a finite non-negative number, got {spec.C!r}")
    if spec.C1 is not None and spec.C1 < 0:
        raise KernelError(f"lower-bound constant C1 must be non-negative, got {spec.C1!r}")

    fam = spec.family
    table = None
    if fam == "product_power":
        _require(spec, "mu", "nu")
    elif fam == "homogeneous_eta":
        _require(spec, "eta")
        if spec.eta < 0:
            raise KernelError("homogeneous_eta requires eta >= 0")
    elif fam == "sum_power":
        _require(spec, "beta")
    elif fam == "separable_custom":
        if not spec.terms:
            raise KernelError("separable_custom requires a non-empty list of factor pairs")
        for pair in spec.terms:
            if len(pair) != 2 or not all(callable(x) for x in pair):
                raise KernelError("separable_custom terms must be (a, b) pairs of callables")
    elif fam == "tabulated":
        if spec.table is None:
            raise KernelError("tabulated kernel requires a table")
        table = np.array(spec.table, dtype=float)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise KernelError(f"tabulated kernel must be a square matrix, got shape {table.shape}")
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise KernelError("tabulated kernel entries must be finite and non-negative")
        if spec.zero_receiver_row:
            table[:, 0] = 0.0
        table.setflags(write=False)

    separable = _separable_for(spec)
    if fam == "tabulated":
        inner = table[1:, 1:]
        symmetric = bool(np.array_equal(inner, inner.T))
    elif fam == "separable_custom":
        n = 64
        m = separable.reconstruct(np.arange(n + 1)[:, None], np.arange(n + 1)[None, :])
        symmetric = bool(np.allclose(m[1:, 1:], m[1:, 1:].T, rtol=1e-13, atol=0.0))
    else:
        symmetric = True
    return Kernel(spec=spec, symmetric=symmetric, separable=separable, _table=table)


def _formula(spec: KernelSpec, j: np.ndarray, k: np.ndarray) -> np.ndarray:
    C = float(spec.C)
    fam = spec.family
    if fam == "product_power":
        mu, nu = float(spec.mu), float(spec.nu)
        return C * (np.power(j, mu) * np.power(k, nu) + np.power(j, nu) * np.power(k, mu))
    if fam == "homogeneous_eta":
        eta = float(spec.eta)
        if eta == 0.0:
            return C * np.where(j > 0, 1.0, 0.0) * np.ones_like(k)
        return C * np.power(j * k, eta)
    if fam == "sum_power":
        beta = float(spec.beta)
        return C * (np.power(j, beta) + np.power(k, beta))
    raise AssertionError(fam)


def kernel_eval(kernel: Kernel, j, k):
    """Evaluate ``K(j, k)``; broadcasts over array arguments.

    Raises
    ------
    KernelError
        Negative sizes, or a tabulated kernel queried outside its table.
    """
    j_arr = np.asarray(j)
    k_arr = np.asarray(k)
    if np.any(j_arr < 0) or np.any(k_arr < 0):
        raise KernelError("cluster sizes must be non-negative")
    spec = kernel.spec
    if spec.family == "tabulated":
        n = kernel._table.shape[0]
        if np.any(j_arr >= n) or np.any(k_arr >= n):
            raise KernelError(f"size outside tabulated kernel range 0..{n - 1}")
        out = kernel._table[j_arr.astype(int), k_arr.astype(int)]
    elif spec.family == "separable_custom":
        out = kernel.separable.reconstruct(j_arr, k_arr)
    else:
        jf = j_arr.astype(float)
        kf = k_arr.astype(float)
        out = _formula(spec, jf, kf)
        if spec.zero_receiver_row:
            out = np.where((jf > 0) & (kf > 0), out, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def separable_terms(kernel: Kernel) -> Optional[SeparableDecomposition]:
    """Return the attached separable decomposition, or ``None``."""
    return kernel.separable


def classify_regime(kernel: Kernel) -> RegimeClass:
    """Place a parametric kernel in its existence/gelation regime.

    Power-law families are mapped onto ``C (j^mu k^nu + j^nu k^mu)``
    (``homogeneous_eta`` as ``mu = nu = eta``, ``sum_power`` as
    ``mu = beta, nu = 0``) and then tested against the growth conditions.
    Tabulated, custom separable and non-symmetric kernels are ``unknown``.
    """
    spec = kernel.spec
    if spec.family in ("tabulated", "separable_custom") or not kernel.symmetric:
        return RegimeClass("unknown", "no growth exponents available for this kernel")

    if spec.family == "sum_power":
        beta = float(spec.beta)
        if beta > 2:
            if spec.zero_receiver_row and spec.C > 0:
                return RegimeClass(
                    "instantaneous_gelation",
                    "K >= C (j^beta + k^beta) with beta > 2 and K(j,0) = 0: gelation time is 0",
                )
            return RegimeClass("unknown", "super-quadratic sum kernel without a zero receiver row")
        if beta < 0:
            return RegimeClass("unknown", "negative exponent")
        mu, nu, implied_c1 = beta, 0.0, None
    elif spec.family == "homogeneous_eta":
        mu = nu = float(spec.eta)
        implied_c1 = spec.C / 2.0
    else:
        mu, nu = float(spec.mu), float(spec.nu)
        implied_c1 = spec.C

    lam, low = max(mu, nu), min(mu, nu)
    if low < 0 or lam > 2:
        return RegimeClass("unknown", "exponents outside [0, 2]")
    if mu + nu <= 3:
        return RegimeClass(
            "global_existence",
            "K <= C (j^mu k^nu + j^nu k^mu), mu, nu <= 2, mu + nu <= 3: global mass-conserving solution",
        )
    # 3 < mu + nu <= 4, so K <= 2C j^2 k^2 and a local solution exists
    if spec.C > 0 and lam == 2.0 and 1.0 < low <= 2.0 and implied_c1 is not None:
        c1 = implied_c1 if spec.C1 is None else float(spec.C1)
        if 0 < c1 <= implied_c1:
            return RegimeClass(
                "finite_gelation",
                f"C1 (j^2 k^a + j^a k^2) <= K <= C j^2 k^2 with a = {low:g}: finite gelation time",
            )
    return RegimeClass(
        "local_existence",
        "K <= C j^2 k^2 without a gelation lower bound: solution exists up to (2 M2(0) C)^-1",
    )


def gelation_lower_bound(kernel: Kernel) -> Optional[tuple[float, float]]:
    """``(alpha, C1)`` of the gelation lower bound, when the kernel has one."""
    if classify_regime(kernel).regime != "finite_gelation":
        return None
    spec = kernel.spec
    if spec.family == "homogeneous_eta":
        alpha, implied = 2.0, spec.C / 2.0
    else:
        alpha, implied = min(spec.mu, spec.nu), spec.C
    return float(alpha), float(implied if spec.C1 is None else spec.C1)


def kernel_from_table(table: Sequence[Sequence[float]], zero_receiver_row: bool = False) -> Kernel:
    return make_kernel(KernelSpec("tabulated", table=np.asarray(table, dtype=float),
                                  zero_receiver_row=zero_receiver_row))
