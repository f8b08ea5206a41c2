"""Qubit sensor under Walsh control: phase, visibility, fluorescence read-out.

Read-out model
--------------
Every repetition projects the qubit: it is found in the bright state with
probability ``q = (1 + C s) / 2`` where ``s`` is the ideal signal in
``[-1, 1]`` and ``C`` the contrast. The detector then registers a Poisson
number of photons with mean ``S0`` (bright) or ``S1`` (dark). Two
read-outs with opposite final-pulse phase (signal ``+s`` and ``-s``) are
combined into the normalised estimator

    (A - B) / (A + B) * (S0 + S1) / (C (S0 - S1))

which converges to ``s`` for many repetitions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .walsh_core import WalshIndex, walsh_coefficient

__all__ = [
    "GAMMA_NV",
    "SensorModel",
    "InfeasibleScenario",
    "AmplitudeSweep",
    "PhaseSweep",
    "MeasurementCurve",
    "rng_stream",
    "accumulated_phase",
    "visibility",
    "signal_expectation",
    "ideal_signal",
    "simulate_readout",
    "readout_batch",
    "acquire_curve",
    "check_bandwidth",
]

GAMMA_NV = 2 * math.pi * 28.0  # rad s^-1 nT^-1


class InfeasibleScenario(ValueError):
    """A physical constraint (bandwidth, sampling interval) is violated."""


@dataclass(frozen=True)
class SensorModel:
    """Parameters of the qubit sensor.

    ``t2_base`` and ``pi_pulse`` are in microseconds, ``gamma`` in
    rad s^-1 nT^-1, ``s0``/``s1`` in photons per read-out.
    """

    gamma: float = GAMMA_NV
    contrast: float = 1.0
    s0: float = 0.03
    s1: float = 0.02
    t2_base: float = 300.0
    p_base: float = 1.5
    t2_scaling: float = 2.0 / 3.0
    n_nv: float = 1.0
    pi_pulse: float = 0.02

    def __post_init__(self):
        if not 0 < self.contrast <= 1:
            raise ValueError(f"contrast must be in (0, 1], got {self.contrast}")
        if not self.s0 > self.s1 >= 0:
            raise ValueError("photon rates need s0 > s1 >= 0")
        if self.t2_base <= 0:
            raise ValueError("t2_base must be positive")
        if self.n_nv < 1:
            raise ValueError("n_nv must be >= 1")
        if self.pi_pulse < 0:
            raise ValueError("pi_pulse must be non-negative")

    @property
    def gamma_per_us(self) -> float:
        """Gyromagnetic ratio in rad us^-1 nT^-1."""
        return self.gamma * 1e-6

    def t2(self, m: int) -> float:
        return self.t2_base * max(int(m), 1) ** self.t2_scaling

    def with_(self, **changes) -> "SensorModel":
        return replace(self, **changes)


def check_bandwidth(T: float, N: int, pi_pulse: float) -> None:
    """Reject sampling intervals ``T/N`` shorter than the pi-pulse."""
    if pi_pulse > 0 and T / N < pi_pulse:
        raise InfeasibleScenario(
            f"bandwidth cap violated: T/N = {T / N:.6g} us is shorter than the "
            f"pi-pulse duration {pi_pulse:.6g} us"
        )


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream labelled ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def accumulated_phase(field, m, T: float, model: Optional[SensorModel] = None,
                      grid: Optional[int] = None) -> float:
    """Phase ``gamma T b_hat(m)`` (rad) picked up under the ``m``-th filter."""
    model = model or SensorModel()
    return model.gamma_per_us * T * walsh_coefficient(field, int(m), T, grid=grid)


def visibility(model: SensorModel, m, T: float) -> float:
    """``exp(-(T / T2(m)) ** p)``."""
    if T < 0:
        raise ValueError("T must be non-negative")
    return math.exp(-((T / model.t2(int(m))) ** model.p_base))


def ideal_signal(phase, vis: float = 1.0, theta=0.0, mode: str = "amplitude"):
    """Noise-free normalised signal.

    ``amplitude`` mode: ``v sin(phase + theta)``; ``phase`` mode:
    ``v cos(phase - theta)``. They coincide for ``theta = pi/2`` in phase
    mode and ``theta = 0`` in amplitude mode.
    """
    phase = np.asarray(phase, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if mode == "amplitude":
        out = vis * np.sin(phase + theta)
    elif mode == "phase":
        out = vis * np.cos(phase - theta)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def signal_expectation(model: SensorModel, field, m, T: float, theta: float = 0.0,
                       mode: str = "amplitude", grid: Optional[int] = None) -> float:
    phi = accumulated_phase(field, m, T, model, grid=grid)
    return ideal_signal(phi, visibility(model, m, T), theta, mode)


def _arm_counts(rng: np.random.Generator, q, M: int, s0: float, s1: float, size=None):
    bright = rng.binomial(M, q, size=size)
    return np.asarray(rng.poisson(s0 * bright + s1 * (M - bright)), dtype=float)


def _arm_variance(counts, M: int, s0: float, s1: float):
    # Poisson photon noise plus binomial projection noise, from plug-in q
    mean = counts / M
    q = np.clip((mean - s1) / (s0 - s1), 0.0, 1.0)
    return M * (mean + (s0 - s1) ** 2 * q * (1 - q))


def readout_batch(model: SensorModel, p_signal, M: int, rng: np.random.Generator,
                  size=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised core of :func:`simulate_readout`.

    ``p_signal`` broadcasts against ``size``; returns arrays of estimates
    and standard errors.
    """
    s = np.clip(np.asarray(p_signal, dtype=float), -1.0, 1.0)
    if size is None:
        size = s.shape
    c = model.contrast
    a = _arm_counts(rng, 0.5 * (1 + c * s), M, model.s0, model.s1, size)
    b = _arm_counts(rng, 0.5 * (1 - c * s), M, model.s0, model.s1, size)
    scale = (model.s0 + model.s1) / (c * (model.s0 - model.s1))
    total = a + b
    safe = np.where(total > 0, total, 1.0)
    ratio = np.where(total > 0, (a - b) / safe, 0.0)
    va = _arm_variance(a, M, model.s0, model.s1)
    vb = _arm_variance(b, M, model.s0, model.s1)
    std = scale * np.sqrt(4.0 * (b * b * va + a * a * vb) / safe ** 4)
    # no photons, or all in one arm with zero plug-in variance
    std = np.where((total > 0) & (std > 0), std, scale / math.sqrt(M))
    return scale * ratio, std


def simulate_readout(model: SensorModel, p_signal: float, M: int,
                     rng: Union[np.random.Generator, int, None] = None
                     ) -> tuple[float, float]:
    """Shot-noise-limited estimate of a signal from ``M`` paired read-outs.

    Returns ``(mean, std_err)`` of the normalised signal estimator.
    """
    if M is None or int(M) != M or M < 1:
        raise ValueError(f"repetitions must be a positive integer, got {M}")
    if model.s0 == model.s1:
        raise ValueError("degenerate photon rates: s0 == s1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mean, std = readout_batch(model, float(p_signal), int(M), rng)
    return float(mean), float(std)


@dataclass(frozen=True, eq=False)
class AmplitudeSweep:
    """Field amplitudes (nT) applied to a normalised waveform."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def symmetric(cls, max_amplitude: float, points: int = 11) -> "AmplitudeSweep":
        """Odd number of points on ``[-max, max]``, zero included."""
        half = max(int(points) // 2, 1)
        return cls(np.linspace(-max_amplitude, max_amplitude, 2 * half + 1))

    @property
    def label(self) -> str:
        return "amplitude_nT"


@dataclass(frozen=True, eq=False)
class PhaseSweep:
    """Phases (rad) of the final read-out pulse."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def full_turn(cls, points: int = 16) -> "PhaseSweep":
        return cls(np.arange(points) * (2 * math.pi / points))

    @property
    def label(self) -> str:
        return "phase_rad"


@dataclass(frozen=True, eq=False)
class MeasurementCurve:
    """Normalised signal versus a swept control, with standard errors.

    ``M`` is None for noise-free curves, whose ``std_err`` is all zeros.
    """

    sweep: Union[AmplitudeSweep, PhaseSweep]
    mean_signal: np.ndarray
    std_err: np.ndarray
    M: Optional[int]
    m: int
    T: float
    visibility: float = 1.0

    def __post_init__(self):
        if not (len(self.sweep.values) == len(self.mean_signal) == len(self.std_err)):
            raise ValueError("sweep, mean_signal and std_err lengths differ")

    @property
    def mode(self) -> str:
        return "amplitude" if isinstance(self.sweep, AmplitudeSweep) else "phase"


def acquire_curve(model: SensorModel, field_shape, m, T: float,
                  sweep: Union[AmplitudeSweep, PhaseSweep], M: Optional[int],
                  rng_seed: int = 0, grid: Optional[int] = None,
                  stream: int = 0) -> MeasurementCurve:
    """Simulate one measurement curve for the ``m``-th Walsh sequence.

    In an amplitude sweep the applied field is ``b * field_shape`` for each
    swept ``b``, read out with ``theta = 0``. In a phase sweep the field is
    ``field_shape`` itself and the read-out phase is swept. Each sweep
    point draws from its own stream ``(stream, m, point)`` of ``rng_seed``.
    ``M=None`` gives the noise-free curve.
    """
    m = int(WalshIndex(int(m)).m)
    values = np.asarray(sweep.values, dtype=float)
    if values.size == 0:
        raise ValueError("sweep must not be empty")
    if M is not None and (int(M) != M or M < 1):
        raise ValueError(f"repetitions must be a positive integer, got {M}")
    vis = visibility(model, m, T)
    coeff = walsh_coefficient(field_shape, m, T, grid=grid)
    g = model.gamma_per_us * T
    if isinstance(sweep, AmplitudeSweep):
        expected = ideal_signal(g * coeff * values, vis, 0.0, "amplitude")
    elif isinstance(sweep, PhaseSweep):
        expected = ideal_signal(g * coeff, vis, values, "phase")
    else:
        raise TypeError(f"unsupported sweep {type(sweep).__name__}")
    expected = np.atleast_1d(np.asarray(expected, dtype=float))
    if M is None:
        return MeasurementCurve(sweep, expected, np.zeros_like(expected), None, m, T, vis)
    means = np.empty_like(expected)
    errs = np.empty_like(expected)
    for i, p in enumerate(expected):
        means[i], errs[i] = simulate_readout(model, p, int(M),
                                             rng_stream(rng_seed, stream, m, i))
    return MeasurementCurve(sweep, means, errs, int(M), m, T, vis)
