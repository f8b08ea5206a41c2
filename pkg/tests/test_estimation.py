import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.optimize import curve_fit

from walshsense.estimation import (
    Z95,
    CoefficientEstimate,
    amplitude_resolution,
    compare_sequential,
    fit_cosine_phase,
    fit_slope_origin,
    levenberg_marquardt,
    minimum_detectable_field,
    sensitivity_reconstruction,
    sensitivity_sequence,
)
from walshsense.sensor_sim import (
    AmplitudeSweep,
    MeasurementCurve,
    PhaseSweep,
    SensorModel,
    acquire_curve,
    visibility,
)
from walshsense.walsh_core import walsh_coefficient
from walshsense.waveform import Sinusoid

T = 10.0
SINE = Sinusoid(1.0, 100.0)


# -- Levenberg-Marquardt ----------------------------------------------------

def test_lm_linear_problem_matches_lstsq():
    rng = np.random.default_rng(0)
    x = np.linspace(0, 1, 30)
    X = np.column_stack([np.ones_like(x), x, x * x])
    y = X @ [1.0, -2.0, 0.5] + rng.normal(0, 0.1, x.size)
    sig = np.full(x.size, 0.1)
    fit = levenberg_marquardt(lambda p: X @ p, lambda p: X, y, sig, [0.0, 0.0, 0.0])
    ref = np.linalg.lstsq(X, y, rcond=None)[0]
    assert_allclose(fit.params, ref, rtol=1e-8)
    assert_allclose(fit.covariance, 0.01 * np.linalg.inv(X.T @ X), rtol=1e-6)
    assert fit.converged


def test_lm_nonlinear_matches_curve_fit():
    rng = np.random.default_rng(1)
    x = np.linspace(0, 4, 40)
    sig = 0.02 + 0.01 * x
    y = 2.0 * np.exp(-0.7 * x) + rng.normal(0, sig)

    def f(x, a, k):
        return a * np.exp(-k * x)

    ref, cov = curve_fit(f, x, y, p0=[1.0, 0.3], sigma=sig, absolute_sigma=True)
    fit = levenberg_marquardt(
        lambda p: f(x, *p),
        lambda p: np.column_stack([np.exp(-p[1] * x), -p[0] * x * np.exp(-p[1] * x)]),
        y, sig, [1.0, 0.3])
    assert_allclose(fit.params, ref, rtol=1e-6)
    assert_allclose(fit.covariance, cov, rtol=1e-4)


# -- coefficient fits -------------------------------------------------------

def test_noiseless_slope_fit_recovers_coefficient():
    model = SensorModel()
    curve = acquire_curve(model, SINE, 1, T, AmplitudeSweep.symmetric(400.0, 11), None)
    est = fit_slope_origin(curve, model.gamma, T)
    assert est.value == pytest.approx(2 / math.pi, rel=1e-7)
    assert not est.flagged


def test_slope_fit_divides_out_visibility():
    model = SensorModel(t2_base=15.0)
    curve = acquire_curve(model, SINE, 5, T, AmplitudeSweep.symmetric(400.0, 11), None)
    est = fit_slope_origin(curve, model.gamma, T)
    assert curve.visibility < 0.9
    assert est.value == pytest.approx(walsh_coefficient(SINE, 5, T), rel=1e-6)


def test_slope_fit_insufficient_points():
    model = SensorModel()
    curve = acquire_curve(model, SINE, 1, T, AmplitudeSweep([-1.0, 0.0, 1.0]), None)
    with pytest.raises(ValueError, match="insufficient"):
        fit_slope_origin(curve, model.gamma, T)


def test_slope_fit_restricts_to_linear_window():
    # a wide sweep leaves too few points with |phase| < 0.5 rad
    model = SensorModel()
    curve = acquire_curve(model, SINE, 1, T, AmplitudeSweep.symmetric(5000.0, 11), None)
    with pytest.raises(ValueError, match="linear window"):
        fit_slope_origin(curve, model.gamma, T)


def test_slope_fit_not_identifiable():
    sweep = AmplitudeSweep(np.zeros(6))
    curve = MeasurementCurve(sweep, np.zeros(6), np.full(6, 0.01), 1000, 3, T)
    est = fit_slope_origin(curve, SensorModel().gamma, T)
    assert est.flagged and math.isinf(est.sigma)


def test_slope_fit_needs_amplitude_sweep():
    curve = acquire_curve(SensorModel(), SINE, 1, T, PhaseSweep.full_turn(8), None)
    with pytest.raises(ValueError):
        fit_slope_origin(curve, SensorModel().gamma, T)


def test_noiseless_phase_fit_recovers_nT():
    model = SensorModel()
    w = Sinusoid(100.0, 100.0)
    curve = acquire_curve(model, w, 1, T, PhaseSweep.full_turn(16), None)
    est = fit_cosine_phase(curve, model.gamma, T)
    assert est.value == pytest.approx(200 / math.pi, rel=1e-6)
    assert est.unit == "nT" and not est.flagged


def test_phase_fit_flags_wrap_ambiguity():
    model = SensorModel()
    k = model.gamma_per_us * T
    big = Sinusoid(2.0 / (k * 2 / math.pi), 100.0)  # coefficient phase 2 rad
    curve = acquire_curve(model, big, 1, T, PhaseSweep.full_turn(16), None)
    est = fit_cosine_phase(curve, model.gamma, T)
    assert est.flagged and "wrap" in est.note


def test_phase_fit_span_guard():
    sweep = PhaseSweep(np.linspace(0, 1.0, 8))
    curve = acquire_curve(SensorModel(), SINE, 1, T, sweep, None)
    with pytest.raises(ValueError, match="span"):
        fit_cosine_phase(curve, SensorModel().gamma, T)


def test_noisy_fits_are_consistent_with_truth():
    model = SensorModel()
    truth = walsh_coefficient(SINE, 1, T)
    sweep = AmplitudeSweep.symmetric(400.0, 11)
    z = []
    for seed in range(40):
        c = acquire_curve(model, SINE, 1, T, sweep, 100_000, rng_seed=seed)
        est = fit_slope_origin(c, model.gamma, T)
        z.append((est.value - truth) / est.sigma)
    assert abs(np.mean(z)) < 0.6 and 0.7 < np.std(z) < 1.35


def test_ci95_and_covers():
    e = CoefficientEstimate(0, 1.0, 0.5)
    assert e.ci95 == pytest.approx((1 - 0.5 * Z95, 1 + 0.5 * Z95))
    assert e.covers(1.9) and not e.covers(2.0)
    assert Z95 == pytest.approx(1.959963984540054)


# -- sensitivities ----------------------------------------------------------

def test_sequence_sensitivity_formula():
    model = SensorModel(contrast=0.5, n_nv=4.0)
    s = sensitivity_sequence(model, 1, T, 2 / math.pi, vis=0.8)
    eta_hat = 1 / (0.8 * model.gamma * 0.5 * math.sqrt(T * 1e-6) * 2.0)
    assert s.eta_hat == pytest.approx(eta_hat)
    assert s.eta == pytest.approx(eta_hat * math.pi / 2)
    assert sensitivity_sequence(model, 2, T, 0.0).eta is None


def test_reconstruction_sensitivity_formula():
    model = SensorModel()
    v = np.linspace(0.5, 1.0, 8)
    eta = sensitivity_reconstruction(model, 8, T, v)
    ref = math.sqrt(8 * np.sum(v ** -2)) / (model.gamma * math.sqrt(T * 1e-6))
    assert eta == pytest.approx(ref)
    default = sensitivity_reconstruction(model, 4, T)
    vis = [visibility(model, m, T) for m in range(4)]
    assert default == pytest.approx(sensitivity_reconstruction(model, 4, T, vis))


@given(st.floats(1e-3, 1e6), st.integers(1, 10 ** 9), st.floats(0.1, 1e4))
def test_minimum_detectable_field_round_trip(eta, M, T):
    db = minimum_detectable_field(eta, M, T)
    assert math.isclose(db * math.sqrt(M * T * 1e-6), eta, rel_tol=1e-10)


def test_amplitude_resolution():
    assert amplitude_resolution([0.3]) == 0.3
    assert amplitude_resolution([0.2] * 16) == pytest.approx(0.8)
    assert math.isinf(amplitude_resolution([0.1, math.inf]))
    e = [CoefficientEstimate(m, 0.0, 0.5) for m in range(4)]
    assert amplitude_resolution(e) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        amplitude_resolution([])


# -- sequential comparison --------------------------------------------------

def test_compare_trivial_and_analytic():
    assert compare_sequential(1, T, trials=200).analytic_ratio == 1.0
    r = compare_sequential(16, T, trials=200)
    assert r.analytic_ratio == 4.0 and r.analytic_time_ratio == 16.0
    assert r.feasible and r.admissible


def test_compare_infeasible_baseline():
    r = compare_sequential(64, T, min_interval=0.5)
    assert not r.feasible and "minimum" in r.reason and r.mc_ratio is None


def test_compare_inadmissible_baseline_still_reported():
    r = compare_sequential(4, T, t2_star=1.0, trials=200)
    assert not r.admissible and "T2*" in r.reason and r.mc_ratio is not None


def test_compare_visibility_penalty():
    model = SensorModel(t2_base=20.0)
    r = compare_sequential(16, T, model, include_visibility=True, t2_star=5.0, trials=200)
    assert r.analytic_ratio < 4.0


def test_compare_is_seeded():
    a = compare_sequential(4, T, trials=300, seed=9).as_dict()
    b = compare_sequential(4, T, trials=300, seed=9).as_dict()
    assert a == b


def test_pointwise_scatter_is_not_improved():
    # the sqrt(N) gain refers to aggregate resolutions, not per-point scatter
    r = compare_sequential(16, T, trials=1000)
    assert r.pointwise_rms_ratio == pytest.approx(1.0, rel=0.1)
