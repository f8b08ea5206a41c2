"""Piecewise-constant reconstruction from Walsh coefficients, errors and
coefficient subsets (top-k, CPMG, PDD)."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .estimation import CoefficientEstimate, amplitude_resolution
from .walsh_core import (
    DEFAULT_GRID_MULTIPLIER,
    Ordering,
    WalshSpectrum,
    _resolve_grid,
    _sample,
    ifwht,
    truncation_bound,
    walsh_spectrum,
)
from .waveform import max_abs_derivative

__all__ = [
    "Subset",
    "Reconstruction",
    "SubsetReport",
    "reconstruct",
    "l2_error",
    "compress_top_k",
    "subset_members",
    "subset_reconstruct",
]


class Subset(str, enum.Enum):
    FULL = "full"
    CPMG = "cpmg"
    PDD = "pdd"
    CPMG_PDD = "cpmg+pdd"

    @classmethod
    def parse(cls, value) -> "Subset":
        if isinstance(value, Subset):
            return value
        key = str(value).lower().replace("_", "+").replace(" ", "")
        aliases = {"fullwalsh": "full", "walsh": "full", "pdd+cpmg": "cpmg+pdd"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown subset {value!r}") from None


@dataclass(eq=False)
class Reconstruction:
    """``N``-point piecewise-constant trace on ``[0, T)``.

    ``sigma`` is the standard uncertainty shared by every point.
    """

    period: float
    values: np.ndarray
    sigma: float
    spectrum: WalshSpectrum
    subset: str = "full"

    @property
    def N(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        """Start time of each cell."""
        return np.arange(self.N) * (self.period / self.N)

    def evaluate(self, t):
        tt = np.asarray(t, dtype=float)
        if np.any(tt < 0) or np.any(tt >= self.period):
            raise ValueError(f"time outside [0, {self.period})")
        j = np.minimum((tt / self.period * self.N).astype(np.int64), self.N - 1)
        out = self.values[j]
        return float(out) if out.ndim == 0 else out

    __call__ = evaluate


def _spectrum_from_estimates(estimates: Sequence[CoefficientEstimate], period: float,
                             N: Optional[int]) -> WalshSpectrum:
    top = max(e.m for e in estimates)
    if N is None:
        N = 1 << (top.bit_length())
    if top >= N:
        raise ValueError(f"estimate index {top} does not fit in N={N}")
    coeffs = np.zeros(N)
    sig = np.zeros(N)
    for e in estimates:
        coeffs[e.m] = e.value
        sig[e.m] = e.sigma
    return WalshSpectrum(period, coeffs, Ordering.SEQUENCY, sig)


def reconstruct(spectrum: Union[WalshSpectrum, Sequence[CoefficientEstimate]],
                period: Optional[float] = None, N: Optional[int] = None,
                subset: str = "full") -> Reconstruction:
    """Inverse Walsh transform of a spectrum or of a list of estimates.

    Indices absent from a list of estimates count as zero and do not
    contribute to the uncertainty.
    """
    if isinstance(spectrum, WalshSpectrum):
        if len(spectrum) == 0:
            raise ValueError("empty spectrum")
        spec = spectrum
    else:
        estimates = list(spectrum)
        if not estimates:
            raise ValueError("empty spectrum")
        if period is None:
            raise ValueError("period is required when reconstructing from estimates")
        spec = _spectrum_from_estimates(estimates, period, N)
    values = ifwht(spec)
    if spec.sigmas is None:
        sigma = 0.0
    else:
        sigma = amplitude_resolution(spec.sigmas)
    return Reconstruction(spec.period, values, sigma, spec, subset)


def l2_error(rec: Reconstruction, truth, multiplier: int = DEFAULT_GRID_MULTIPLIER,
             grid: Optional[int] = None) -> float:
    """RMS distance ``sqrt((1/T) int (b_N - b)^2 dt)`` on a dense midpoint grid."""
    n = rec.N.bit_length() - 1
    g = _resolve_grid(n, grid, multiplier)
    t = (np.arange(g) + 0.5) * (rec.period / g)
    diff = np.repeat(rec.values, g // rec.N) - _sample(truth, t)
    return float(math.sqrt(np.mean(diff * diff)))


def _top_k_mask(coeffs_seq: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps lower sequency first among equal magnitudes
    order = np.argsort(-np.abs(coeffs_seq), kind="stable")
    mask = np.zeros(coeffs_seq.shape, dtype=bool)
    mask[order[:k]] = True
    return mask


def compress_top_k(spectrum: WalshSpectrum, k: int) -> WalshSpectrum:
    """Keep the ``k`` largest-magnitude coefficients, zero the rest."""
    N = len(spectrum)
    if not 1 <= k <= N:
        raise ValueError(f"k must be in [1, {N}], got {k}")
    seq = spectrum.reorder(Ordering.SEQUENCY)
    mask = _top_k_mask(seq.coeffs, int(k))
    sig = None if seq.sigmas is None else np.where(mask, seq.sigmas, 0.0)
    out = WalshSpectrum(seq.period, np.where(mask, seq.coeffs, 0.0), Ordering.SEQUENCY, sig)
    return out.reorder(spectrum.ordering)


def subset_members(subset, N: int) -> list[int]:
    """Sequency indices below ``N`` in a subset, ascending.

    CPMG is ``{2**k, k >= 1}``, PDD ``{2**k - 1, k >= 1}``; the constant
    (Ramsey) filter belongs to the full set only.
    """
    subset = Subset.parse(subset)
    if subset is Subset.FULL:
        return list(range(N))
    cpmg = [1 << k for k in range(1, N.bit_length()) if (1 << k) < N]
    pdd = [(1 << k) - 1 for k in range(1, N.bit_length() + 1) if (1 << k) - 1 < N]
    if subset is Subset.CPMG:
        return cpmg
    if subset is Subset.PDD:
        return pdd
    return sorted(set(cpmg) | set(pdd))


@dataclass(frozen=True)
class SubsetReport:
    subset: str
    budget: int
    used: int
    members: tuple
    e_N: float
    e_full: float
    bound: float

    def as_dict(self) -> dict:
        return {"subset": self.subset, "budget": self.budget, "used": self.used,
                "e_N": self.e_N, "e_full": self.e_full, "bound": self.bound}


def subset_reconstruct(field, subset, budget: int, N: int, T: float,
                       grid: Optional[int] = None,
                       multiplier: int = DEFAULT_GRID_MULTIPLIER
                       ) -> tuple[Reconstruction, SubsetReport]:
    """Noise-free reconstruction from the first ``budget`` members of a subset.

    The error is compared with the full Walsh set restricted to the same
    number of coefficients (sequencies ``0 .. budget-1``). ``bound`` is the
    truncation bound of that full set, i.e. at order ``floor(log2 budget)``.
    """
    subset = Subset.parse(subset)
    if N < 1 or N & (N - 1):
        raise ValueError(f"N must be a power of two, got {N}")
    if budget < 1:
        raise ValueError("budget must be positive")
    n = N.bit_length() - 1
    members = subset_members(subset, N)
    if budget > len(members):
        warnings.warn(
            f"{subset.value}: only {len(members)} members below N={N}, "
            f"budget {budget} truncated", RuntimeWarning, stacklevel=2)
    chosen = members[:budget]
    spec = walsh_spectrum(field, T, n, grid=grid, multiplier=multiplier)

    def partial(idx) -> Reconstruction:
        mask = np.zeros(N, dtype=bool)
        mask[list(idx)] = True
        part = WalshSpectrum(T, np.where(mask, spec.coeffs, 0.0), Ordering.SEQUENCY)
        return reconstruct(part)

    rec = partial(chosen)
    rec.subset = subset.value
    err_grid = None if grid is None else max(grid, N)
    e = l2_error(rec, field, multiplier, err_grid)
    e_full = l2_error(partial(range(min(budget, N))), field, multiplier, err_grid)
    n_budget = min(int(budget), N).bit_length() - 1
    bound = truncation_bound(max_abs_derivative(field, T), n_budget, period=T)
    return rec, SubsetReport(subset.value, int(budget), len(chosen), tuple(chosen),
                             e, e_full, bound)
