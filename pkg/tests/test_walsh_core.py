import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.linalg import hadamard

from walshsense.walsh_core import (
    Ordering,
    WalshIndex,
    WalshSpectrum,
    bit_reverse,
    cell_averages,
    convert_index,
    fwht,
    gray_code,
    hadamard_matrix,
    ifwht,
    inverse_gray_code,
    inverse_walsh,
    naive_walsh_transform,
    rademacher,
    sign_changes,
    switching_times,
    truncation_bound,
    walsh,
    walsh_coefficient,
    walsh_matrix,
    walsh_spectrum,
    walsh_values,
)
from walshsense.waveform import Sinusoid

ORDERINGS = list(Ordering)


def sequency_rows_by_sorting(n):
    # independent oracle: sort Sylvester rows by their number of sign changes
    H = hadamard(1 << n)
    changes = [np.count_nonzero(r[1:] != r[:-1]) for r in H]
    return H[np.argsort(changes, kind="stable")]


# -- Rademacher and indexing -------------------------------------------------

def test_rademacher_examples():
    assert rademacher(1, 0.25) == 1
    assert rademacher(1, 0.75) == -1
    assert rademacher(2, 0.3) == -1


def test_rademacher_is_square_wave():
    t = (np.arange(1024) + 0.5) / 1024
    for k in range(1, 8):
        expected = np.where(np.floor(t * 2 ** k) % 2 == 0, 1, -1)
        assert np.array_equal(rademacher(k, t), expected)


@pytest.mark.parametrize("bad", [-0.1, 1.0, np.nan])
def test_time_fraction_outside_unit_interval_rejected(bad):
    with pytest.raises(ValueError):
        walsh(3, bad)


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        WalshIndex(-1)
    with pytest.raises(ValueError):
        walsh(-2, 0.1)


def test_walsh_index_order():
    assert [WalshIndex(m).n for m in (0, 1, 2, 3, 4, 7, 8)] == [0, 1, 2, 2, 3, 3, 4]


def test_walsh_examples():
    assert walsh(0, 0.9) == 1
    assert walsh(1, 0.75) == -1
    assert walsh(2, 0.5) == -1
    assert walsh(2, 0.1) == 1 and walsh(2, 0.3) == -1 and walsh(2, 0.8) == 1


def test_hadamard_ordering_requires_order():
    with pytest.raises(ValueError):
        walsh(3, 0.2, Ordering.HADAMARD)


@given(st.integers(0, 2 ** 20))
def test_gray_code_round_trip(m):
    assert inverse_gray_code(gray_code(m)) == m
    assert bin(gray_code(m) ^ gray_code(m + 1)).count("1") == 1


@given(st.integers(0, 16), st.data())
def test_bit_reverse_involution(n, data):
    m = data.draw(st.integers(0, (1 << n) - 1))
    assert bit_reverse(bit_reverse(m, n), n) == m
    assert format(bit_reverse(m, n), f"0{n}b")[::-1] == format(m, f"0{n}b") or n == 0


# -- basis properties --------------------------------------------------------

@pytest.mark.parametrize("n", range(0, 9))
def test_sequency_rows_match_sorted_sylvester(n):
    assert np.array_equal(walsh_matrix(n, "sequency"), sequency_rows_by_sorting(n))


@pytest.mark.parametrize("n", range(0, 9))
def test_hadamard_ordering_is_sylvester(n):
    assert np.array_equal(walsh_matrix(n, "hadamard"), hadamard(1 << n))
    assert np.array_equal(hadamard_matrix(n), hadamard(1 << n))


@pytest.mark.parametrize("n", range(1, 9))
def test_paley_rows_are_rademacher_products(n):
    t = (np.arange(1 << n) + 0.5) / (1 << n)
    W = walsh_matrix(n, "paley")
    for m in range(1 << n):
        prod = np.ones(1 << n, dtype=int)
        for k in range(1, n + 1):
            if (m >> (k - 1)) & 1:
                prod = prod * rademacher(k, t)
        assert np.array_equal(W[m], prod)


@pytest.mark.parametrize("ordering", ORDERINGS)
def test_orthonormal(ordering):
    for n in range(0, 9):
        W = walsh_matrix(n, ordering).astype(float)
        assert_allclose(W @ W.T / (1 << n), np.eye(1 << n), atol=0)


def test_sequency_counts_sign_changes():
    for n in range(0, 9):
        W = walsh_matrix(n, "sequency")
        assert [sign_changes(r) for r in W] == list(range(1 << n))


@pytest.mark.parametrize("ordering", ORDERINGS)
def test_walsh_values_agree_with_pointwise_evaluation(ordering):
    n = 6
    t = (np.arange(1 << n) + 0.5) / (1 << n)
    for m in range(1 << n):
        assert np.array_equal(walsh_values(m, n, ordering), walsh(m, t, ordering, n=n))


def test_walsh_values_order_too_small():
    with pytest.raises(ValueError):
        walsh_values(4, 2)


def test_convert_index_examples():
    assert convert_index(3, "sequency", "paley", 2) == 2
    assert convert_index(2, "sequency", "paley", 2) == 3


@pytest.mark.parametrize("source", ORDERINGS)
@pytest.mark.parametrize("target", ORDERINGS)
def test_convert_index_is_consistent_bijection(source, target):
    n = 8
    Ws, Wt = walsh_matrix(n, source), walsh_matrix(n, target)
    images = [convert_index(m, source, target, n) for m in range(1 << n)]
    assert sorted(images) == list(range(1 << n))
    for m, k in enumerate(images):
        assert np.array_equal(Ws[m], Wt[k])
        assert convert_index(k, target, source, n) == m


def test_convert_index_out_of_range():
    with pytest.raises(ValueError):
        convert_index(4, "sequency", "paley", 2)


def test_cpmg_and_pdd_parity():
    # CPMG filters w_{2^k} are even about T/2, PDD filters w_{2^k - 1} odd
    for n in range(1, 9):
        W = walsh_matrix(n, "sequency")
        for k in range(1, n + 1):
            cpmg = W[1 << k] if (1 << k) < (1 << n) else None
            pdd = W[(1 << k) - 1]
            if cpmg is not None:
                assert np.array_equal(cpmg, cpmg[::-1])
            assert np.array_equal(pdd, -pdd[::-1])


def test_cpmg_pulses_equally_spaced():
    f = switching_times(8, 16.0)
    assert f.switching_times == (1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0)


def test_switching_times_examples():
    assert switching_times(1, 10.0).switching_times == (5.0,)
    assert switching_times(2, 8.0).switching_times == (2.0, 6.0)
    assert switching_times(0, 8.0).switching_times == ()


@given(st.integers(0, 2047), st.floats(0.5, 1e3))
def test_switching_count_is_sequency(m, T):
    f = switching_times(m, T)
    assert f.n_pulses == m
    assert all(0 < s < T for s in f.switching_times)


def test_hadamard_matrix_cap():
    with pytest.raises(ValueError):
        hadamard_matrix(15)
    assert hadamard_matrix(3, max_order=3).shape == (8, 8)
    with pytest.raises(ValueError):
        hadamard_matrix(4, max_order=3)


# -- transforms --------------------------------------------------------------

@pytest.mark.parametrize("ordering", ORDERINGS)
@pytest.mark.parametrize("n", [0, 1, 3, 6, 9])
def test_fwht_matches_matrix_oracle(ordering, n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=1 << n)
    W = walsh_matrix(n, ordering).astype(float)
    assert_allclose(fwht(x, ordering).coeffs, W @ x / (1 << n), rtol=1e-12, atol=1e-14)
    assert_allclose(naive_walsh_transform(x, ordering), W @ x / (1 << n), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10), st.sampled_from(ORDERINGS), st.integers(0, 2 ** 32 - 1))
def test_round_trip_and_parseval(n, ordering, seed):
    x = np.random.default_rng(seed).normal(size=1 << n)
    spec = fwht(x, ordering)
    assert_allclose(ifwht(spec), x, rtol=1e-12, atol=1e-12)
    assert math.isclose(np.mean(x * x), np.sum(spec.coeffs ** 2), rel_tol=1e-12)


def test_fwht_batched_over_leading_axes():
    x = np.random.default_rng(1).normal(size=(3, 5, 16))
    out = ifwht(fwht(x[1, 2]).coeffs)
    assert_allclose(out, x[1, 2])
    assert_allclose(ifwht(x), np.stack([[ifwht(r) for r in blk] for blk in x]))


def test_fwht_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fwht(np.ones(12))
    with pytest.raises(ValueError):
        fwht(np.ones(0))


def test_spectrum_reorder():
    x = np.arange(16.0)
    s = fwht(x, "sequency")
    for o in ORDERINGS:
        assert_allclose(s.reorder(o).coeffs, fwht(x, o).coeffs, atol=1e-12)
    assert s.order == 4 and len(s) == 16


def test_constant_coefficient_is_mean():
    x = np.random.default_rng(3).uniform(size=64)
    assert math.isclose(fwht(x).coeffs[0], x.mean(), rel_tol=1e-14)


# -- coefficients of continuous fields --------------------------------------

def quad_coefficient(f, m, T, n):
    # independent oracle: adaptive quadrature cell by cell
    vals = sequency_rows_by_sorting(n)[m]
    N = 1 << n
    return sum(v * quad(f, T * j / N, T * (j + 1) / N, epsabs=1e-13)[0]
               for j, v in enumerate(vals)) / T


def test_spin_echo_coefficient_is_two_over_pi():
    T = 10.0
    w = Sinusoid(1.0, 1e3 / T)
    assert math.isclose(walsh_coefficient(w, 1, T), 2 / math.pi, rel_tol=1e-6)


@pytest.mark.parametrize("m", [0, 1, 2, 5, 9, 13, 14])
def test_coefficient_matches_adaptive_quadrature(m):
    T = 10.0
    w = Sinusoid(1.0, 100.0, 0.3)
    got = walsh_coefficient(w, m, T)
    ref = quad_coefficient(w.evaluate, m, T, 4)
    assert abs(got - ref) < 1e-6


def test_sine_spectrum_support():
    # closed form: each cell integrates sin exactly
    T, N = 10.0, 16
    j = np.arange(N)
    cell = (np.cos(2 * np.pi * j / N) - np.cos(2 * np.pi * (j + 1) / N)) * N / (2 * np.pi)
    spec = walsh_spectrum(Sinusoid(1.0, 100.0), T, 4)
    assert_allclose(cell_averages(Sinusoid(1.0, 100.0), T, 4), cell, atol=1e-7)
    assert_allclose(spec.coeffs, fwht(cell).coeffs, atol=1e-7)
    assert set(np.flatnonzero(np.abs(spec.coeffs) > 1e-6)) == {1, 5, 9, 13}


def test_cosine_spectrum_support():
    spec = walsh_spectrum(Sinusoid(1.0, 100.0, math.pi / 2), 10.0, 4)
    assert set(np.flatnonzero(np.abs(spec.coeffs) > 1e-6)) == {2, 6, 10, 14}


def test_frozen_sine_coefficients():
    # values from the closed-form cell integrals above
    spec = walsh_spectrum(Sinusoid(1.0, 100.0), 10.0, 4)
    assert_allclose(spec.coeffs[[1, 5, 9, 13]],
                    [0.6366197724, -0.2636965438, -0.0524525038, -0.1266315460], atol=1e-6)


def test_inverse_walsh_evaluates_cells():
    x = np.arange(8.0)
    spec = fwht(x, period=4.0)
    assert_allclose(inverse_walsh(spec, [0.0, 0.49, 0.5, 3.99]), [0, 0, 1, 7])


def test_truncation_bound_formula():
    assert truncation_bound(2.0, 3, period=4.0) == 2.0 * 4.0 / 16
    assert truncation_bound(1.0, 4) == 1 / 32


def test_walsh_spectrum_ordering_argument():
    w = Sinusoid(1.0, 100.0)
    a = walsh_spectrum(w, 10.0, 4, ordering="paley")
    b = walsh_spectrum(w, 10.0, 4).reorder("paley")
    assert a.ordering is Ordering.PALEY
    assert_allclose(a.coeffs, b.coeffs)


def test_spectrum_sigmas_shape_checked():
    with pytest.raises(ValueError):
        WalshSpectrum(1.0, np.zeros(4), Ordering.SEQUENCY, np.zeros(3))
