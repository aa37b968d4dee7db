import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from sdenkf import theory
from sdenkf.transforms import SpectralTransform, dense_matrix

# exact zeros or eigenvalues large enough that strict inequalities survive rounding
spectra = st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 10)), min_size=1, max_size=12)


def test_sample_error_examples():
    assert theory.expected_error_sample_cov([1.0, 1.0], 2) == 6.0
    assert theory.expected_error_sample_cov([1.0, 0.0, 0.0], 5) == pytest.approx(2 / 4)
    lam = np.array([4.0, 3.0, 2.0, 1.0])
    assert theory.expected_error_sample_cov(lam, 10) == pytest.approx((100 + 30) / 9, rel=1e-14)


def test_diagonal_error_examples():
    assert theory.expected_error_spectral_diag([1.0, 1.0], 2) == 4.0
    for N in (2, 3, 17):
        assert theory.expected_error_spectral_diag([2.0], N) == pytest.approx(8 / (N - 1))
        assert theory.expected_error_sample_cov([2.0], N) == pytest.approx(8 / (N - 1))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        theory.expected_error_sample_cov([1.0], 1)
    with pytest.raises(ValueError):
        theory.expected_error_spectral_diag([-1.0, 1.0], 3)
    with pytest.raises(IndexError):
        theory.entry_variance([1.0, 2.0], 3, 0, 2)
    with pytest.raises(ValueError):
        theory.monte_carlo_entry_variance([1.0], 3, replications=10)


@settings(max_examples=100, deadline=None)
@given(lam=spectra, N=st.integers(2, 50))
def test_identities(lam, N):
    lam = np.array(lam)
    s = theory.expected_error_sample_cov(lam, N)
    d = theory.expected_error_spectral_diag(lam, N)
    l1, l2 = np.sum(lam), np.sum(lam**2)
    assert s == pytest.approx((l1**2 + l2) / (N - 1), rel=1e-12, abs=1e-300)
    V = theory.entry_variance_matrix(lam, N)
    assert V.sum() == pytest.approx(s, rel=1e-12, abs=1e-300)
    assert np.trace(V) == pytest.approx(d, rel=1e-12, abs=1e-300)
    assert d <= s
    if np.count_nonzero(lam) >= 2:
        assert d < s
    else:
        assert d == pytest.approx(s, rel=1e-12, abs=1e-300)


def test_entry_variance_examples():
    assert theory.entry_variance([1.0], 3, 0, 0) == 1.0
    assert theory.entry_variance([0.0, 5.0], 4, 0, 1) == 0.0
    assert theory.entry_variance([2.0, 1.0], 2, 0, 1) == 2.0
    V = theory.entry_variance_matrix([2.0, 1.0], 2)
    assert V[0, 1] == theory.entry_variance([2.0, 1.0], 2, 1, 0)


def test_power_law_ratio():
    assert theory.power_law_error_ratio(1.5, 1) == 1.0
    for a in (1.1, 1.5, 2.0, 3.0):
        ratios = [theory.power_law_error_ratio(a, n) for n in (2, 8, 64, 512)]
        assert all(0 < r <= 1 for r in ratios)
        assert all(b < a_ for a_, b in zip(ratios, ratios[1:]))
    assert theory.power_law_error_ratio(1.1, 10**4) < theory.power_law_error_ratio(2.0, 10**4)
    assert theory.power_law_error_ratio(2.0, 100, N=3) == pytest.approx(
        theory.power_law_error_ratio(2.0, 100, N=30), rel=1e-14)


def test_monte_carlo_zero_spectrum():
    res = theory.monte_carlo_entry_variance(np.zeros(3), 4, replications=1000)
    np.testing.assert_array_equal(res.variance, 0.0)


def test_monte_carlo_small_run_agrees():
    lam = np.array([3.0, 1.0])
    res = theory.monte_carlo_entry_variance(lam, 5, replications=4000, seed=7)
    V = theory.entry_variance_matrix(lam, 5)
    assert np.all(np.abs(res.variance - V) <= 4 * res.variance_se)
    assert np.all(np.abs(np.diag(res.mean) - lam) <= 3 * np.diag(res.mean_se))


def test_monte_carlo_deterministic():
    a = theory.monte_carlo_frobenius_errors([2.0, 1.0], 4, 1000, seed=3)
    b = theory.monte_carlo_frobenius_errors([2.0, 1.0], 4, 1000, seed=3)
    assert a == b


@pytest.mark.parametrize("basis", ["random", "dct"])
def test_frobenius_errors_basis_invariant(basis):
    lam = theory.power_law_spectrum(1.5, 16)
    F = (ortho_group.rvs(16, random_state=1) if basis == "random"
         else dense_matrix(SpectralTransform("dct", 16)))
    plain = theory.monte_carlo_frobenius_errors(lam, 6, 4000, seed=5)
    rotated = theory.monte_carlo_frobenius_errors(lam, 6, 4000, seed=5, basis=F)
    # same draws, rotated and rotated back
    assert rotated.sample_error == pytest.approx(plain.sample_error, rel=1e-10)
    assert rotated.diagonal_error == pytest.approx(plain.diagonal_error, rel=1e-10)
    s = theory.expected_error_sample_cov(lam, 6)
    assert abs(rotated.sample_error - s) <= 3 * rotated.sample_se


def test_verify_theory_small():
    rows = theory.verify_theory(replications=2000, spectrum=(2.0, 1.0), alphas=(2.0,), n_power=8)
    assert len(rows) == 4 + 2 + 4
    assert all(r.passed for r in rows)
    exact = theory.CheckRow("exact", 1.0, 1.0, 0.0, 3.0)
    assert exact.passed
