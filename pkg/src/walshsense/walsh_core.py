"""Walsh and Rademacher functions, index orderings and fast transforms.

Conventions
-----------
Walsh functions live on the unit interval ``[0, 1)`` and are rescaled to an
acquisition period ``T`` by ``w_m(t / T)``. Three orderings are supported:

* ``SEQUENCY``: ``w_m`` has exactly ``m`` sign changes on ``[0, 1)``. This is
  the ordering used for control sequences (``m`` pi-pulses).
* ``PALEY``: ``w_m = prod_k r_k ** bit_{k-1}(m)``, bit 0 selecting ``r_1``.
* ``HADAMARD``: row ``m`` of the Sylvester Walsh-Hadamard matrix of order
  ``n``. This ordering depends on ``n``.

Coefficients carry the ``1/T`` averaging, so the ``m = 0`` coefficient is
the mean field and a sampled trace ``x`` on the dyadic grid satisfies
``mean(x**2) == sum(c**2)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Ordering",
    "WalshIndex",
    "DigitalFilter",
    "WalshSpectrum",
    "DEFAULT_GRID_MULTIPLIER",
    "MIN_QUADRATURE_POINTS",
    "order_of",
    "gray_code",
    "inverse_gray_code",
    "bit_reverse",
    "rademacher",
    "walsh",
    "walsh_values",
    "walsh_matrix",
    "sign_changes",
    "convert_index",
    "switching_times",
    "hadamard_matrix",
    "fwht",
    "ifwht",
    "naive_walsh_transform",
    "cell_averages",
    "walsh_coefficient",
    "walsh_spectrum",
    "inverse_walsh",
    "truncation_bound",
]

DEFAULT_GRID_MULTIPLIER = 64
# floor on quadrature points so low-order coefficients reach ~1e-7 accuracy
MIN_QUADRATURE_POINTS = 4096
HADAMARD_MAX_ORDER = 14


class Ordering(str, enum.Enum):
    SEQUENCY = "sequency"
    PALEY = "paley"
    HADAMARD = "hadamard"

    @classmethod
    def parse(cls, value: Union[str, "Ordering"]) -> "Ordering":
        if isinstance(value, Ordering):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown ordering {value!r}; expected one of "
                f"{[o.value for o in cls]}"
            ) from None


def order_of(m: int) -> int:
    """Smallest ``n`` with ``m <= 2**n - 1``."""
    if m < 0:
        raise ValueError(f"Walsh index must be non-negative, got {m}")
    return int(m).bit_length()


@dataclass(frozen=True)
class WalshIndex:
    """Sequency index ``m`` of a digital filter together with its order."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"Walsh index must be a non-negative integer, got {self.m}")

    @property
    def n(self) -> int:
        return order_of(self.m)

    def __int__(self) -> int:
        return int(self.m)

    def __index__(self) -> int:
        return int(self.m)


def _as_int(m) -> int:
    m = int(m)
    if m < 0:
        raise ValueError(f"Walsh index must be non-negative, got {m}")
    return m


def gray_code(m):
    return m ^ (m >> 1)


def inverse_gray_code(g):
    if isinstance(g, np.ndarray):
        out = g.copy()
        shift = g >> 1
        while np.any(shift):
            out ^= shift
            shift >>= 1
        return out
    g = int(g)
    out = g
    g >>= 1
    while g:
        out ^= g
        g >>= 1
    return out


def bit_reverse(m, n: int):
    """Reverse the lowest ``n`` bits of ``m`` (int or integer array)."""
    if isinstance(m, np.ndarray):
        out = np.zeros_like(m)
        for b in range(n):
            out |= ((m >> b) & 1) << (n - 1 - b)
        return out
    out = 0
    for b in range(n):
        out |= ((m >> b) & 1) << (n - 1 - b)
    return out


def _check_fraction(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0) or np.any(arr >= 1.0) or np.any(~np.isfinite(arr)):
        raise ValueError("time fraction must lie in [0, 1)")
    return arr


def rademacher(k: int, t):
    """Rademacher square wave ``r_k(t) = r(2**(k-1) t)`` on ``[0, 1)``.

    ``r`` is +1 on ``[0, 1/2)`` and -1 on ``[1/2, 1)``, extended periodically,
    so ``r_k`` has ``2**k - 1`` jumps on the unit interval.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"Rademacher order must be >= 1, got {k}")
    arr = _check_fraction(t)
    # floor(2^k t) is exact in binary floating point for dyadic t
    parity = np.floor(np.ldexp(arr, int(k))).astype(np.int64) & 1
    out = 1 - 2 * parity
    return int(out) if out.ndim == 0 else out


def _hadamard_index(m: int, ordering: Ordering, n: Optional[int]) -> tuple[int, int]:
    """Map ``(m, ordering)`` to ``(paley index, bit count)``."""
    if ordering is Ordering.SEQUENCY:
        p = gray_code(m)
        return p, max(p.bit_length(), 1)
    if ordering is Ordering.PALEY:
        return m, max(m.bit_length(), 1)
    if n is None:
        raise ValueError("Hadamard ordering requires the order n")
    if m >= 1 << n:
        raise ValueError(f"index {m} out of range for order {n}")
    return bit_reverse(m, n), max(n, 1)


def walsh(m, t, ordering: Union[Ordering, str] = Ordering.SEQUENCY,
          n: Optional[int] = None):
    """Evaluate the Walsh function ``w_m`` at fractions ``t`` in ``[0, 1)``.

    ``n`` is only needed for the Hadamard ordering, where row ``m`` of the
    order-``n`` matrix is meant.
    """
    ordering = Ordering.parse(ordering)
    m = _as_int(m)
    arr = _check_fraction(t)
    p, nbits = _hadamard_index(m, ordering, n)
    exponent = np.zeros(arr.shape, dtype=np.int64)
    for k in range(1, nbits + 1):
        if (p >> (k - 1)) & 1:
            exponent += np.floor(np.ldexp(arr, k)).astype(np.int64)
    out = 1 - 2 * (exponent & 1)
    return int(out) if out.ndim == 0 else out


def _sequency_to_hadamard(s, n: int):
    return bit_reverse(gray_code(s), n)


def _hadamard_to_sequency(h, n: int):
    return inverse_gray_code(bit_reverse(h, n))


def _rows_in_hadamard_order(n: int, ordering: Ordering) -> np.ndarray:
    """``idx[i]`` = Hadamard row holding function ``i`` of ``ordering``."""
    i = np.arange(1 << n, dtype=np.int64)
    if ordering is Ordering.HADAMARD:
        return i
    if ordering is Ordering.PALEY:
        return bit_reverse(i, n)
    return _sequency_to_hadamard(i, n)


def walsh_values(m: int, n: int, ordering: Union[Ordering, str] = Ordering.SEQUENCY
                 ) -> np.ndarray:
    """Values of ``w_m`` on the ``2**n`` dyadic cells of ``[0, 1)``."""
    ordering = Ordering.parse(ordering)
    m = _as_int(m)
    if m >= 1 << n:
        raise ValueError(f"index {m} needs order > {n}")
    h = int(_rows_in_hadamard_order(n, ordering)[m]) if n > 0 else 0
    j = np.arange(1 << n, dtype=np.int64)
    return (1 - 2 * (np.bitwise_count(j & h) & 1)).astype(np.int8)


def walsh_matrix(n: int, ordering: Union[Ordering, str] = Ordering.SEQUENCY
                 ) -> np.ndarray:
    """``2**n x 2**n`` matrix whose row ``i`` is ``w_i`` on the dyadic grid."""
    ordering = Ordering.parse(ordering)
    rows = _rows_in_hadamard_order(n, ordering)
    j = np.arange(1 << n, dtype=np.int64)
    return (1 - 2 * (np.bitwise_count(rows[:, None] & j[None, :]) & 1)).astype(np.int8)


def sign_changes(values) -> int:
    v = np.asarray(values)
    return int(np.count_nonzero(v[1:] != v[:-1]))


def convert_index(m: int, source: Union[Ordering, str], target: Union[Ordering, str],
                  n: int) -> int:
    """Index of the same Walsh function in another ordering (order ``n``)."""
    source, target = Ordering.parse(source), Ordering.parse(target)
    m = _as_int(m)
    if n < 0 or m >= 1 << n:
        raise ValueError(f"index {m} out of range for order {n}")
    if source is Ordering.SEQUENCY:
        h = _sequency_to_hadamard(m, n)
    elif source is Ordering.PALEY:
        h = bit_reverse(m, n)
    else:
        h = m
    if target is Ordering.SEQUENCY:
        return int(_hadamard_to_sequency(h, n))
    if target is Ordering.PALEY:
        return int(bit_reverse(h, n))
    return int(h)


@dataclass(frozen=True)
class DigitalFilter:
    """Control sequence: pi-pulses at the sign switches of ``w_m(t / T)``."""

    index: WalshIndex
    period: float
    switching_times: tuple

    @property
    def n_pulses(self) -> int:
        return len(self.switching_times)

    def __call__(self, t):
        """Filter value (+1/-1) at times ``t`` in ``[0, T)``."""
        return walsh(self.index.m, np.asarray(t, dtype=float) / self.period)


def switching_times(m, T: float) -> DigitalFilter:
    """Pi-pulse times of the sequency-``m`` Walsh filter over period ``T``."""
    if T <= 0:
        raise ValueError(f"period must be positive, got {T}")
    idx = m if isinstance(m, WalshIndex) else WalshIndex(_as_int(m))
    n = idx.n
    vals = walsh_values(idx.m, n)
    cells = np.flatnonzero(vals[1:] != vals[:-1]) + 1
    times = tuple(float(T * c / (1 << n)) for c in cells)
    return DigitalFilter(idx, float(T), times)


def hadamard_matrix(n: int, max_order: int = HADAMARD_MAX_ORDER) -> np.ndarray:
    """Sylvester Walsh-Hadamard matrix ``H[i, j] = (-1)**popcount(i & j)``.

    Orders above ``max_order`` are rejected; use :func:`fwht` instead.
    """
    if int(n) != n or n < 0:
        raise ValueError(f"order must be a non-negative integer, got {n}")
    if n > max_order:
        raise ValueError(
            f"refusing to materialise a 2**{n} square matrix "
            f"(max_order={max_order}); use fwht for large orders"
        )
    h = np.ones((1, 1), dtype=np.int8)
    for _ in range(int(n)):
        h = np.block([[h, h], [h, -h]])
    return h


@dataclass
class WalshSpectrum:
    """Walsh coefficients over an acquisition period.

    Attributes
    ----------
    period : float
        Acquisition period ``T`` in microseconds.
    coeffs : ndarray
        Coefficients in ``ordering``; units of the field (nT) or
        dimensionless for normalised fields.
    ordering : Ordering
    sigmas : ndarray, optional
        Standard uncertainties, same shape as ``coeffs``.
    """

    period: float
    coeffs: np.ndarray
    ordering: Ordering = Ordering.SEQUENCY
    sigmas: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.ordering = Ordering.parse(self.ordering)
        if self.sigmas is not None:
            self.sigmas = np.asarray(self.sigmas, dtype=float)
            if self.sigmas.shape != self.coeffs.shape:
                raise ValueError("sigmas and coeffs must have the same shape")

    def __len__(self) -> int:
        return len(self.coeffs)

    @property
    def order(self) -> int:
        return _power_of_two_order(len(self.coeffs))

    def reorder(self, ordering: Union[Ordering, str]) -> "WalshSpectrum":
        """Same spectrum listed in another ordering."""
        ordering = Ordering.parse(ordering)
        if ordering is self.ordering:
            return self
        n = self.order
        perm = np.array(
            [convert_index(i, ordering, self.ordering, n) for i in range(1 << n)],
            dtype=np.int64,
        )
        sig = None if self.sigmas is None else self.sigmas[perm]
        return WalshSpectrum(self.period, self.coeffs[perm], ordering, sig)


def _power_of_two_order(size: int) -> int:
    if size < 1 or size & (size - 1):
        raise ValueError(f"length must be a power of two, got {size}")
    return size.bit_length() - 1


def _butterfly(x: np.ndarray) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform along the last axis (natural order)."""
    x = np.array(x, dtype=float, copy=True)
    size = x.shape[-1]
    lead = x.shape[:-1]
    h = 1
    while h < size:
        y = x.reshape(*lead, size // (2 * h), 2, h)
        a = y[..., 0, :].copy()
        b = y[..., 1, :]
        y[..., 0, :] += b
        y[..., 1, :] = a - b
        x = y.reshape(*lead, size)
        h *= 2
    return x


def fwht(samples, ordering: Union[Ordering, str] = Ordering.SEQUENCY,
         period: float = 1.0) -> WalshSpectrum:
    """Fast Walsh transform of values on the ``N = 2**n`` dyadic cells.

    Returns ``c[m] = (1/N) sum_j x_j w_m(j)``, which equals the continuous
    coefficient ``(1/T) int b w_m dt`` for a field that is constant on each
    cell.
    """
    ordering = Ordering.parse(ordering)
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("fwht expects a one-dimensional array")
    n = _power_of_two_order(x.shape[0])
    nat = _butterfly(x) / x.shape[0]
    return WalshSpectrum(period, nat[_rows_in_hadamard_order(n, ordering)], ordering)


def ifwht(spectrum: Union[WalshSpectrum, Sequence[float]],
          ordering: Union[Ordering, str] = Ordering.SEQUENCY) -> np.ndarray:
    """Cell values ``x_j = sum_m c_m w_m(j)``; inverse of :func:`fwht`."""
    if isinstance(spectrum, WalshSpectrum):
        coeffs, ordering = spectrum.coeffs, spectrum.ordering
    else:
        coeffs, ordering = np.asarray(spectrum, dtype=float), Ordering.parse(ordering)
    n = _power_of_two_order(coeffs.shape[-1])
    nat = np.empty_like(coeffs)
    nat[..., _rows_in_hadamard_order(n, ordering)] = coeffs
    return _butterfly(nat)


def naive_walsh_transform(samples, ordering: Union[Ordering, str] = Ordering.SEQUENCY
                          ) -> np.ndarray:
    """O(N^2) reference transform built from pointwise :func:`walsh` evaluation."""
    x = np.asarray(samples, dtype=float)
    size = x.shape[0]
    n = _power_of_two_order(size)
    ordering = Ordering.parse(ordering)
    grid = (np.arange(size) + 0.5) / size
    out = np.empty(size)
    for m in range(size):
        out[m] = np.dot(walsh(m, grid, ordering, n=n), x) / size
    return out


def _resolve_grid(n: int, grid: Optional[int], multiplier: int) -> int:
    if grid is None:
        grid = max(multiplier << n, MIN_QUADRATURE_POINTS, 1 << n)
    grid = int(grid)
    if grid < 1 or grid & (grid - 1) or grid < (1 << n):
        raise ValueError(
            f"quadrature grid of {grid} points is not aligned to the "
            f"2**{n} filter cells (must be a power-of-two multiple)"
        )
    return grid


def _sample(field, t: np.ndarray) -> np.ndarray:
    fn = field.evaluate if hasattr(field, "evaluate") else field
    return np.asarray(fn(t), dtype=float) * np.ones_like(t)


def cell_averages(field, T: float, n: int, grid: Optional[int] = None,
                  multiplier: int = DEFAULT_GRID_MULTIPLIER) -> np.ndarray:
    """Midpoint-rule averages of ``field`` over the ``2**n`` dyadic cells."""
    if T <= 0:
        raise ValueError(f"period must be positive, got {T}")
    g = _resolve_grid(n, grid, multiplier)
    t = (np.arange(g) + 0.5) * (T / g)
    return _sample(field, t).reshape(1 << n, g >> n).mean(axis=1)


def walsh_coefficient(field, m, T: float, grid: Optional[int] = None,
                      multiplier: int = DEFAULT_GRID_MULTIPLIER) -> float:
    """``(1/T) int_0^T b(t) w_m(t/T) dt`` by midpoint quadrature.

    The grid has ``grid`` points (a power-of-two multiple of ``2**n``, with
    ``n`` the order of ``m``) so that filter switches fall on cell edges.
    ``field`` is a waveform or any vectorised callable of time.
    """
    m = int(m)
    n = order_of(m)
    g = _resolve_grid(n, grid, multiplier)
    t = (np.arange(g) + 0.5) * (T / g)
    filt = np.repeat(walsh_values(m, n), g >> n)
    return float(np.mean(_sample(field, t) * filt))


def walsh_spectrum(field, T: float, n: int, grid: Optional[int] = None,
                   ordering: Union[Ordering, str] = Ordering.SEQUENCY,
                   multiplier: int = DEFAULT_GRID_MULTIPLIER) -> WalshSpectrum:
    """First ``2**n`` Walsh coefficients of a field, all at once."""
    cells = cell_averages(field, T, n, grid, multiplier)
    return fwht(cells, ordering, period=T)


def inverse_walsh(spectrum: WalshSpectrum, t):
    """Partial Walsh sum ``b_N(t) = sum_m c_m w_m(t/T)`` at times ``t``."""
    T = spectrum.period
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0) or np.any(tt >= T):
        raise ValueError(f"time outside [0, {T})")
    cells = ifwht(spectrum)
    size = cells.shape[0]
    j = np.minimum((tt / T * size).astype(np.int64), size - 1)
    out = cells[j]
    return float(out) if out.ndim == 0 else out


def truncation_bound(max_derivative: float, n: int, period: Optional[float] = None
                     ) -> float:
    """Upper bound on the order-``2**n`` truncation error.

    With ``period`` given, ``max_derivative`` is ``max |db/dt|`` in field
    units per microsecond and is rescaled to the unit interval; otherwise it
    is taken to be ``max |d b(T s)/ds|`` already.
    """
    if max_derivative < 0:
        raise ValueError("max_derivative must be non-negative")
    scale = 1.0 if period is None else float(period)
    return float(max_derivative) * scale / 2.0 ** (n + 1)
