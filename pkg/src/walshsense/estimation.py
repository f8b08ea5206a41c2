"""Coefficient estimation from measurement curves, and sensitivity figures.

Both curve fits are weighted nonlinear least squares solved with a small
Gauss-Newton / Levenberg iteration; weights are ``1 / std_err**2`` (or
uniform for noise-free curves).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .sensor_sim import (
    MeasurementCurve,
    SensorModel,
    ideal_signal,
    readout_batch,
    rng_stream,
    visibility,
)
from .waveform import Sinusoid, Waveform
from .walsh_core import cell_averages, fwht, ifwht

__all__ = [
    "CoefficientEstimate",
    "FitResult",
    "levenberg_marquardt",
    "fit_slope_origin",
    "fit_cosine_phase",
    "SequenceSensitivity",
    "sensitivity_sequence",
    "sensitivity_reconstruction",
    "minimum_detectable_field",
    "amplitude_resolution",
    "SequentialComparison",
    "compare_sequential",
]

Z95 = 1.959963984540054
LINEAR_WINDOW = 0.5  # rad


@dataclass(frozen=True)
class CoefficientEstimate:
    """Estimated Walsh coefficient.

    ``sigma`` is ``inf`` when the fit could not identify the coefficient;
    ``flagged`` marks that case and wrap-ambiguous phase fits.
    """

    m: int
    value: float
    sigma: float
    unit: str = ""
    flagged: bool = False
    note: str = ""

    @property
    def ci95(self) -> tuple[float, float]:
        half = Z95 * self.sigma
        return self.value - half, self.value + half

    def covers(self, truth: float) -> bool:
        lo, hi = self.ci95
        return lo <= truth <= hi


@dataclass
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    iterations: int
    converged: bool


def levenberg_marquardt(model: Callable[[np.ndarray], np.ndarray],
                        jacobian: Callable[[np.ndarray], np.ndarray],
                        y, sigma, p0, *, rtol: float = 1e-9, max_iter: int = 100
                        ) -> FitResult:
    """Minimise ``sum(((y - model(p)) / sigma)**2)``.

    ``sigma=None`` fits unweighted and scales the covariance by the
    residual variance. Stops when every parameter moves by less than
    ``rtol`` relative to its size, or after ``max_iter`` steps.
    """
    y = np.asarray(y, dtype=float)
    p = np.array(p0, dtype=float)
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    lam = 1e-3

    def cost(q):
        r = y - model(q)
        return float(np.sum(w * r * r))

    chi2 = cost(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian(p)
        r = y - model(p)
        A = J.T @ (w[:, None] * J)
        g = J.T @ (w * r)
        improved = False
        while lam < 1e12:
            step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-300), g) \
                if np.all(np.isfinite(A)) and np.any(A) else np.zeros_like(p)
            trial = p + step
            new = cost(trial)
            if new <= chi2:
                lam = max(lam / 10.0, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not improved:
            converged = True
            break
        p, chi2 = trial, new
        if np.all(np.abs(step) <= rtol * np.maximum(np.abs(p), 1e-12)):
            converged = True
            break
    J = jacobian(p)
    A = J.T @ (w[:, None] * J)
    try:
        cov = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        cov = np.full_like(A, np.inf)
    if sigma is None:
        dof = max(y.size - p.size, 1)
        cov = cov * chi2 / dof
    return FitResult(p, cov, chi2, it, converged)


def _weights_sigma(curve: MeasurementCurve, mask=slice(None)):
    err = np.asarray(curve.std_err, dtype=float)[mask]
    if curve.M is None or np.all(err == 0):
        return None
    return err


def _identifiable(jac: np.ndarray, sigma) -> bool:
    w = 1.0 if sigma is None else 1.0 / np.asarray(sigma) ** 2
    info = np.sum(w * jac[:, 0] ** 2)
    return bool(np.isfinite(info) and info > 1e-300 and np.any(jac[:, 0] != 0))


def fit_slope_origin(curve: MeasurementCurve, gamma: float, T: float,
                     visibility: Optional[float] = None) -> CoefficientEstimate:
    """Normalised coefficient from an amplitude sweep.

    Fits ``v sin(gamma b f T)`` for ``f`` over the points inside the linear
    window ``|gamma b f T| < 0.5`` rad; the slope at the origin divided by
    ``v gamma T`` is ``f``. ``gamma`` is in rad s^-1 nT^-1, ``T`` in us.
    """
    if curve.mode != "amplitude":
        raise ValueError("fit_slope_origin needs an amplitude sweep")
    v = curve.visibility if visibility is None else float(visibility)
    b = np.asarray(curve.sweep.values, dtype=float)
    y = np.asarray(curve.mean_signal, dtype=float)
    k = gamma * 1e-6 * T
    if b.size < 4:
        raise ValueError(f"insufficient points for a slope fit ({b.size} < 4)")

    # start from the points nearest the origin whose signal is still small;
    # stop at the first one outside so wrapped points are never used
    small = np.zeros(b.size, dtype=bool)
    for i in np.argsort(np.abs(b), kind="stable"):
        if abs(y[i]) >= LINEAR_WINDOW * v:
            break
        small[i] = True
    x = v * k * b
    sig_all = _weights_sigma(curve)
    wts = np.ones_like(b) if sig_all is None else 1.0 / sig_all ** 2
    denom = np.sum(wts[small] * x[small] ** 2)
    if denom > 0:
        f0 = float(np.sum(wts[small] * x[small] * y[small]) / denom)
    elif np.any(b != 0):
        raise ValueError("insufficient points inside the linear window "
                         "(only the origin is in the small-signal regime)")
    else:
        f0 = 0.0
    window = np.abs(k * b * f0) < LINEAR_WINDOW
    if np.count_nonzero(window) < 4:
        raise ValueError(
            f"insufficient points inside the linear window "
            f"({np.count_nonzero(window)} < 4)")

    bw, yw = b[window], y[window]
    sig = _weights_sigma(curve, window)

    def model(p):
        return v * np.sin(k * bw * p[0])

    def jac(p):
        return (v * k * bw * np.cos(k * bw * p[0]))[:, None]

    if not _identifiable(jac(np.array([f0])), sig):
        return CoefficientEstimate(curve.m, f0, math.inf, "", True, "not identifiable")
    fit = levenberg_marquardt(model, jac, yw, sig, [f0])
    s = math.sqrt(fit.covariance[0, 0]) if np.isfinite(fit.covariance[0, 0]) else math.inf
    note = "" if fit.converged else "fit did not converge"
    return CoefficientEstimate(curve.m, float(fit.params[0]), s, "", not math.isfinite(s),
                               note)


def fit_cosine_phase(curve: MeasurementCurve, gamma: float, T: float
                     ) -> CoefficientEstimate:
    """Absolute coefficient (nT) from a read-out phase sweep.

    Fits ``a cos(phi - theta)`` for amplitude ``a`` and phase ``phi``; the
    coefficient is ``phi / (gamma T)``. Only ``|phi| < pi/2`` is accepted
    as unambiguous; estimates outside are flagged.
    """
    if curve.mode != "phase":
        raise ValueError("fit_cosine_phase needs a phase sweep")
    theta = np.asarray(curve.sweep.values, dtype=float)
    y = np.asarray(curve.mean_signal, dtype=float)
    if theta.size < 3:
        raise ValueError(f"insufficient points for a cosine fit ({theta.size} < 3)")
    span = theta.max() - theta.min()
    if span < 2 * math.pi / 3 - 1e-12:
        raise ValueError(f"phase sweep span {span:.4g} rad is below 2*pi/3")
    k = gamma * 1e-6 * T
    sig = _weights_sigma(curve)
    w = np.ones_like(y) if sig is None else 1.0 / sig ** 2

    # linear start: y = c1 cos(theta) + c2 sin(theta)
    X = np.column_stack([np.cos(theta), np.sin(theta)])
    c = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y))
    p0 = [math.hypot(c[0], c[1]), math.atan2(c[1], c[0])]
    if p0[0] == 0.0:
        return CoefficientEstimate(curve.m, 0.0, math.inf, "nT", True, "not identifiable")

    def model(p):
        return p[0] * np.cos(p[1] - theta)

    def jac(p):
        return np.column_stack([np.cos(p[1] - theta), -p[0] * np.sin(p[1] - theta)])

    fit = levenberg_marquardt(model, jac, y, sig, p0)
    amp, phi = fit.params
    if amp < 0:
        amp, phi = -amp, phi + math.pi
    phi = math.remainder(phi, 2 * math.pi)
    var = fit.covariance[1, 1]
    s_phi = math.sqrt(var) if np.isfinite(var) and var >= 0 else math.inf
    flagged, note = False, ""
    if not math.isfinite(s_phi):
        flagged, note = True, "not identifiable"
    elif abs(phi) >= math.pi / 2:
        flagged, note = True, "phase outside (-pi/2, pi/2): wrap ambiguity"
    elif not fit.converged:
        note = "fit did not converge"
    return CoefficientEstimate(curve.m, phi / k, s_phi / k, "nT", flagged, note)


@dataclass(frozen=True)
class SequenceSensitivity:
    """Per-sequence sensitivity in nT Hz^-1/2.

    ``eta`` is None when the coefficient vanishes; ``eta_hat`` is the
    field-independent factor.
    """

    eta_hat: float
    eta: Optional[float]

    @property
    def defined(self) -> bool:
        return self.eta is not None


def _eta_hat(model: SensorModel, vis: float, T: float) -> float:
    return 1.0 / (vis * model.gamma * model.contrast * math.sqrt(T * 1e-6)
                  * math.sqrt(model.n_nv))


def sensitivity_sequence(model: SensorModel, m: int, T: float, f_hat: float,
                         vis: Optional[float] = None) -> SequenceSensitivity:
    """``eta_m = 1 / (v gamma C sqrt(T) |f|)``, divided by ``sqrt(n_NV)``."""
    if T <= 0:
        raise ValueError("T must be positive")
    v = visibility(model, m, T) if vis is None else float(vis)
    eh = _eta_hat(model, v, T)
    eta = None if f_hat == 0 else eh / abs(f_hat)
    return SequenceSensitivity(eh, eta)


def sensitivity_reconstruction(model: SensorModel, N: int, T: float,
                               visibilities: Optional[Sequence[float]] = None) -> float:
    """``eta_N = sqrt(N sum v_m^-2) / (gamma C sqrt(T) sqrt(n_NV))``."""
    if N < 1 or N & (N - 1):
        raise ValueError(f"N must be a power of two, got {N}")
    if visibilities is None:
        visibilities = [visibility(model, m, T) for m in range(N)]
    v = np.asarray(visibilities, dtype=float)
    if v.shape != (N,):
        raise ValueError(f"need {N} visibilities, got {v.shape}")
    return math.sqrt(N * np.sum(v ** -2.0)) / (
        model.gamma * model.contrast * math.sqrt(T * 1e-6) * math.sqrt(model.n_nv))


def minimum_detectable_field(eta: float, M: int, T: float) -> float:
    """``eta / sqrt(M T)`` in nT for ``M`` repetitions of length ``T`` (us)."""
    return eta / math.sqrt(M * T * 1e-6)


def amplitude_resolution(estimates: Iterable[Union[CoefficientEstimate, float]]) -> float:
    """``sqrt(sum sigma_m**2)``; this is also the (time-independent) standard
    uncertainty of every point of the reconstructed trace. Infinite if any
    input is unresolved."""
    sig = [e.sigma if isinstance(e, CoefficientEstimate) else float(e) for e in estimates]
    if not sig:
        raise ValueError("need at least one estimate")
    if any(math.isinf(s) for s in sig):
        return math.inf
    return math.sqrt(sum(s * s for s in sig))


@dataclass
class SequentialComparison:
    """Walsh acquisition versus ``N`` sequential Ramsey sub-interval readings.

    ``*_ratio`` compare aggregate resolutions ``sqrt(sum_j db_j^2)``
    (sequential points) against ``sqrt(sum_m db_m^2)`` (Walsh coefficients)
    at equal total time; ``*_time_ratio`` is the total time the sequential
    scheme needs to match the Walsh resolution, relative to Walsh.
    ``pointwise_rms_ratio`` compares the RMS scatter of the reconstructed
    traces themselves.
    """

    N: int
    T: float
    tau: float
    admissible: bool
    feasible: bool
    reason: str = ""
    analytic_ratio: Optional[float] = None
    analytic_time_ratio: Optional[float] = None
    mc_ratio: Optional[float] = None
    mc_time_ratio: Optional[float] = None
    pointwise_rms_ratio: Optional[float] = None
    walsh_resolution: Optional[float] = None
    sequential_resolution: Optional[float] = None
    trials: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _estimate_phases(model, phase, vis, M, rng, trials):
    """Single amplitude-mode read-out per trial, inverted to a phase."""
    est, _ = readout_batch(model, ideal_signal(phase, vis), M, rng,
                           size=(trials,) + np.shape(phase))
    return np.arcsin(np.clip(est / vis, -1.0, 1.0))


def _mc_arms(model, cells, coeffs, T, N, M_walsh, M_seq, vis_w, vis_s, trials, seed,
             stream):
    g = model.gamma_per_us
    tau = T / N
    walsh = np.empty((trials, N))
    seq = np.empty((trials, N))
    for m in range(N):
        rng = rng_stream(seed, stream, 0, m)
        walsh[:, m] = _estimate_phases(model, g * T * coeffs[m], vis_w[m], M_walsh,
                                       rng, trials) / (g * T)
    for j in range(N):
        rng = rng_stream(seed, stream, 1, j)
        seq[:, j] = _estimate_phases(model, g * tau * cells[j], vis_s[j], M_seq,
                                     rng, trials) / (g * tau)
    return walsh, seq


def compare_sequential(N: int, T: float, model: Optional[SensorModel] = None, *,
                       field: Optional[Waveform] = None, M: int = 100_000,
                       trials: int = 1000, seed: int = 0,
                       t2_star: Optional[float] = None,
                       min_interval: Optional[float] = None,
                       include_visibility: bool = False) -> SequentialComparison:
    """Shot-noise comparison of Walsh and sequential acquisition.

    Walsh: ``N`` coefficients, ``M`` repetitions each over ``T``.
    Sequential: ``N`` sub-intervals of ``tau = T/N``, ``N M`` repetitions
    each (equal total time). A second run with ``N**2 M`` sequential
    repetitions measures the fixed-resolution time ratio. ``t2_star`` bounds
    the admissible ``tau``; ``min_interval`` (default: the model pi-pulse)
    bounds the feasible one.
    """
    model = model or SensorModel()
    if N < 1 or N & (N - 1):
        raise ValueError(f"N must be a power of two, got {N}")
    tau = T / N
    min_interval = model.pi_pulse if min_interval is None else float(min_interval)
    admissible = t2_star is None or tau <= t2_star
    out = SequentialComparison(N, T, tau, admissible, True, trials=trials)
    if tau < min_interval:
        out.feasible = False
        out.reason = (f"sub-interval tau = {tau:.6g} us is shorter than the minimum "
                      f"read-out interval {min_interval:.6g} us")
        return out
    if not admissible:
        out.reason = f"tau = {tau:.6g} us exceeds T2* = {t2_star:.6g} us"

    if include_visibility:
        vis_w = np.array([visibility(model, m, T) for m in range(N)])
        vis_s = np.full(N, 1.0 if t2_star is None else math.exp(-(tau / t2_star) ** 2))
    else:
        vis_w = np.ones(N)
        vis_s = np.ones(N)
    out.analytic_ratio = math.sqrt(N) * math.sqrt(np.sum(vis_s ** -2.0)
                                                  / np.sum(vis_w ** -2.0))
    out.analytic_time_ratio = out.analytic_ratio ** 2

    if field is None:
        # small test field keeps both arms in the linear read-out regime
        field = Sinusoid(0.1 / (model.gamma_per_us * T), 1e3 / T)
    n = N.bit_length() - 1
    cells = cell_averages(field, T, n)
    coeffs = fwht(cells).coeffs

    walsh, seq = _mc_arms(model, cells, coeffs, T, N, M, N * M, vis_w, vis_s,
                          trials, seed, 0)
    d_walsh = math.sqrt(np.sum(np.var(walsh, axis=0, ddof=1)))
    d_seq = math.sqrt(np.sum(np.var(seq, axis=0, ddof=1)))
    out.walsh_resolution = d_walsh
    out.sequential_resolution = d_seq
    out.mc_ratio = d_seq / d_walsh
    rec = ifwht(walsh)
    rms_w = math.sqrt(np.mean((rec - cells) ** 2))
    rms_s = math.sqrt(np.mean((seq - cells) ** 2))
    out.pointwise_rms_ratio = rms_s / rms_w

    walsh2, seq2 = _mc_arms(model, cells, coeffs, T, N, M, N * N * M, vis_w, vis_s,
                            trials, seed, 1)
    d_walsh2 = math.sqrt(np.sum(np.var(walsh2, axis=0, ddof=1)))
    d_seq2 = math.sqrt(np.sum(np.var(seq2, axis=0, ddof=1)))
    # time to reach a resolution scales as its inverse square
    time_seq = N * N * M * T * d_seq2 ** 2
    time_walsh = N * M * T * d_walsh2 ** 2
    out.mc_time_ratio = time_seq / time_walsh
    return out
