"""Time-varying field models.

Times are in microseconds, frequencies in kHz, fields in nT. All waveforms
are immutable and evaluate vectorised over numpy arrays.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Waveform",
    "Sinusoid",
    "Component",
    "Polychromatic",
    "SkewNormalAP",
    "Sampled",
    "Superposition",
    "Scaled",
    "NeuronConversion",
    "RadiatedField",
    "evaluate",
    "skew_normal_phi",
    "radiated_field",
    "max_abs_derivative",
    "two_tone_fixture",
    "read_sampled_csv",
    "write_sampled_csv",
]

TWO_PI_KHZ_US = 2e-3 * math.pi  # 2*pi * (1 kHz * 1 us)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class Waveform:
    """Base class. Subclasses implement ``evaluate`` and, when they can,
    an analytic ``derivative`` (field units per microsecond)."""

    period: Optional[float] = None

    def evaluate(self, t):
        raise NotImplementedError

    def derivative(self, t):
        return _central_difference(self, t, 1e-4)

    def __call__(self, t):
        return self.evaluate(t)

    def __add__(self, other: "Waveform") -> "Waveform":
        if isinstance(other, Waveform):
            return Superposition((self, other))
        return NotImplemented

    def __mul__(self, k: float) -> "Waveform":
        return Scaled(self, float(k))

    __rmul__ = __mul__

    def __neg__(self) -> "Waveform":
        return Scaled(self, -1.0)


def _central_difference(w: Waveform, t, h: float):
    t = np.asarray(t, dtype=float)
    return (w.evaluate(t + h) - w.evaluate(t - h)) / (2 * h)


def _scalarize(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class Sinusoid(Waveform):
    """``b sin(2 pi nu t + alpha)``."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return _scalarize(self.amplitude * np.sin(TWO_PI_KHZ_US * self.frequency * t
                                                  + self.phase))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        w = TWO_PI_KHZ_US * self.frequency
        return _scalarize(self.amplitude * w * np.cos(w * t + self.phase))


@dataclass(frozen=True)
class Component:
    weight: float
    frequency: float
    phase: float = 0.0


@dataclass(frozen=True)
class Polychromatic(Waveform):
    """``b * sum_i a_i sin(2 pi nu_i t + alpha_i)``."""

    amplitude: float
    components: Tuple[Component, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for c in self.components:
            out = out + c.weight * np.sin(TWO_PI_KHZ_US * c.frequency * t + c.phase)
        return _scalarize(self.amplitude * out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for c in self.components:
            w = TWO_PI_KHZ_US * c.frequency
            out = out + c.weight * w * np.cos(w * t + c.phase)
        return _scalarize(self.amplitude * out)

    def __add__(self, other):
        if isinstance(other, Polychromatic):
            mine = [Component(self.amplitude * c.weight, c.frequency, c.phase)
                    for c in self.components]
            theirs = [Component(other.amplitude * c.weight, c.frequency, c.phase)
                      for c in other.components]
            return Polychromatic(1.0, tuple(mine + theirs))
        return super().__add__(other)


def two_tone_fixture(amplitude: float = 1.0) -> Polychromatic:
    """Two-tone field with weights 3/10, 1/5 at 100 and 250 kHz."""
    return Polychromatic(
        amplitude,
        (Component(0.3, 100.0, -0.0741), Component(0.2, 250.0, -1.9686)),
    )


def skew_normal_phi(t, amplitude: float, location: float, scale: float,
                    shape: float):
    """Skew-normal impulse ``A (2/w) phi(z) Phi(a z)``, ``z = (t - xi)/w``."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = (np.asarray(t, dtype=float) - location) / scale
    pdf = np.exp(-0.5 * z * z) / _SQRT_2PI
    return _scalarize(amplitude * (2.0 / scale) * pdf * ndtr(shape * z))


@dataclass(frozen=True)
class SkewNormalAP(Waveform):
    """Skew-normal action-potential model ``Phi(t)`` in Vpp.

    The defaults are placeholders giving a visibly asymmetric impulse on a
    14 us window; no fitted action-potential parameters are implied.
    """

    amplitude: float = 1.0
    location: float = 14.0 / 3.0
    scale: float = 1.4
    shape: float = 4.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def evaluate(self, t):
        return skew_normal_phi(t, self.amplitude, self.location, self.scale, self.shape)

    def derivative(self, t):
        z = (np.asarray(t, dtype=float) - self.location) / self.scale
        pdf = np.exp(-0.5 * z * z) / _SQRT_2PI
        pdf_a = np.exp(-0.5 * (self.shape * z) ** 2) / _SQRT_2PI
        d = -z * pdf * ndtr(self.shape * z) + self.shape * pdf * pdf_a
        return _scalarize(self.amplitude * 2.0 / self.scale ** 2 * d)

    def second_derivative(self, t):
        z = (np.asarray(t, dtype=float) - self.location) / self.scale
        a = self.shape
        pdf = np.exp(-0.5 * z * z) / _SQRT_2PI
        pdf_a = np.exp(-0.5 * (a * z) ** 2) / _SQRT_2PI
        cdf_a = ndtr(a * z)
        # d/dz of [-z pdf cdf_a + a pdf pdf_a]
        d2 = ((z * z - 1.0) * pdf * cdf_a - 2.0 * a * z * pdf * pdf_a
              - a ** 3 * z * pdf * pdf_a)
        return _scalarize(self.amplitude * 2.0 / self.scale ** 3 * d2)


@dataclass(frozen=True, eq=False)
class Sampled(Waveform):
    """Uniformly spaced trace on ``[0, T)``, linearly interpolated.

    ``T`` is ``len(values) * spacing``; between the last sample and ``T``
    the last value is held.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("need matching 1-D times and values with >= 2 samples")
        dt = np.diff(t)
        if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
            raise ValueError("sample times must be uniformly spaced and increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def period(self) -> float:
        return float(self.times[0] + self.times.size * self.spacing)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t >= self.period):
            raise ValueError(f"time outside [{self.times[0]}, {self.period})")
        return _scalarize(np.interp(t, self.times, self.values))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        grad = np.gradient(self.values, self.spacing)
        return _scalarize(np.interp(t, self.times, grad))


@dataclass(frozen=True)
class Superposition(Waveform):
    terms: Tuple[Waveform, ...]

    def evaluate(self, t):
        return _scalarize(sum(np.asarray(w.evaluate(t), dtype=float) for w in self.terms))

    def derivative(self, t):
        return _scalarize(sum(np.asarray(w.derivative(t), dtype=float)
                              for w in self.terms))


@dataclass(frozen=True)
class Scaled(Waveform):
    source: Waveform
    factor: float

    def evaluate(self, t):
        return _scalarize(self.factor * np.asarray(self.source.evaluate(t)))

    def derivative(self, t):
        return _scalarize(self.factor * np.asarray(self.source.derivative(t)))


@dataclass(frozen=True)
class NeuronConversion:
    """Waveguide response ``b = -c dPhi/dt``, ``c`` in uT per (Vpp kHz)."""

    c: float = 25.4

    @property
    def nT_per_Vpp_per_us(self) -> float:
        # uT -> nT is 1e3; one 1/us is 1e3 kHz
        return self.c * 1e3 * 1e3


@dataclass(frozen=True)
class RadiatedField(Waveform):
    source: Waveform
    conversion: NeuronConversion = field(default_factory=NeuronConversion)

    def evaluate(self, t):
        return _scalarize(-self.conversion.nT_per_Vpp_per_us
                          * np.asarray(self.source.derivative(t)))

    def derivative(self, t):
        if hasattr(self.source, "second_derivative"):
            d2 = self.source.second_derivative(t)
        else:
            d2 = _central_difference(_Derivative(self.source), t, 1e-4)
        return _scalarize(-self.conversion.nT_per_Vpp_per_us * np.asarray(d2))


@dataclass(frozen=True)
class _Derivative(Waveform):
    source: Waveform

    def evaluate(self, t):
        return self.source.derivative(t)


def radiated_field(phi: Waveform, conversion: Optional[NeuronConversion] = None
                   ) -> RadiatedField:
    """Field radiated by the electric waveform ``phi``: ``-c dPhi/dt`` in nT.

    Sampled sources are differentiated by central differences at the
    sample spacing; parametric ones analytically.
    """
    return RadiatedField(phi, conversion or NeuronConversion())


def evaluate(w: Waveform, t, period: Optional[float] = None):
    """Evaluate ``w`` at ``t``; with ``period`` given, reject ``t`` outside ``[0, T)``."""
    if period is not None:
        tt = np.asarray(t, dtype=float)
        if np.any(tt < 0) or np.any(tt >= period):
            raise ValueError(f"time outside [0, {period})")
    return w.evaluate(t)


def max_abs_derivative(w: Waveform, T: float, grid: int = 1 << 16) -> float:
    """``max |db/dt|`` over ``[0, T)`` from central differences on ``grid`` points."""
    if grid < 1 << 10:
        raise ValueError("grid must have at least 2**10 points")
    h = T / grid
    if isinstance(w, Sampled):
        return float(np.max(np.abs(np.gradient(w.values, w.spacing))))
    t = (np.arange(grid) + 0.5) * h
    d = (np.asarray(w.evaluate(t + 0.5 * h)) - np.asarray(w.evaluate(t - 0.5 * h))) / h
    return float(np.max(np.abs(d)))


def read_sampled_csv(path) -> Sampled:
    """Read a ``time_us,field_nT`` CSV with header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:2] != ["time_us", "field_nT"]:
            raise ValueError(f"{path}: expected header 'time_us,field_nT', got {header}")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    arr = np.array(rows, dtype=float)
    return Sampled(arr[:, 0], arr[:, 1])


def write_sampled_csv(path, times: Sequence[float], values: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("time_us,field_nT\n")
        for t, v in zip(times, values):
            fh.write(f"{t:.12g},{v:.12g}\n")
