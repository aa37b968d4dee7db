import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdenkf.transforms import (KINDS, WAVELET_FILTERS, BlockTransform, SpectralTransform,
                               TransformError, dense_matrix, forward, forward_ensemble, inverse,
                               inverse_ensemble, make_transform)


def dct2_matrix(n):
    """Orthonormal DCT-II, entry by entry."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    M = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * j + 1) / (2 * n))
    M[0] /= np.sqrt(2.0)
    return M


def dst2_matrix(n):
    """Orthonormal DST-II, entry by entry (row k is frequency k+1)."""
    k = np.arange(1, n + 1)[:, None]
    j = np.arange(n)[None, :]
    M = np.sqrt(2.0 / n) * np.sin(np.pi * k * (2 * j + 1) / (2 * n))
    M[-1] /= np.sqrt(2.0)
    return M


def test_identity_examples():
    t = SpectralTransform("identity", 3)
    np.testing.assert_array_equal(forward(t, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(inverse(SpectralTransform("identity", 2), [5.0, 6.0]), [5.0, 6.0])
    np.testing.assert_array_equal(dense_matrix(t), np.eye(3))


def test_dct_constant_maps_to_dc():
    n, c = 16, 2.5
    w = forward(SpectralTransform("dct", n), np.full(n, c))
    np.testing.assert_allclose(w[0], c * np.sqrt(n), rtol=1e-14)
    np.testing.assert_allclose(w[1:], 0.0, atol=1e-13)


def test_dct_n2_explicit_matrix():
    # rows (1/sqrt2, 1/sqrt2) and (cos(pi/4), -cos(pi/4))
    M = dense_matrix(SpectralTransform("dct", 2))
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(M, [[s, s], [s, -s]], atol=1e-15)
    np.testing.assert_allclose(forward(SpectralTransform("dct", 2), [1.0, 0.0]), [s, s], atol=1e-15)


def test_dct_inverse_dc_mode():
    np.testing.assert_allclose(inverse(SpectralTransform("dct", 4), [2.0, 0, 0, 0]), np.ones(4),
                               rtol=1e-14)


@pytest.mark.parametrize("n", [2, 4, 8, 13, 32])
def test_fast_paths_match_entrywise_definitions(n):
    np.testing.assert_allclose(dense_matrix(SpectralTransform("dct", n)), dct2_matrix(n), atol=1e-13)
    np.testing.assert_allclose(dense_matrix(SpectralTransform("dst", n)), dst2_matrix(n), atol=1e-13)


def test_dst_columns_unit_norm():
    M = dense_matrix(SpectralTransform("dst", 4))
    np.testing.assert_allclose(np.linalg.norm(M, axis=0), 1.0, rtol=1e-13)
    np.testing.assert_allclose(dst2_matrix(4), M, atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [8, 16, 64])
def test_orthonormal(kind, n):
    M = dense_matrix(SpectralTransform(kind, n))
    assert np.abs(M @ M.T - np.eye(n)).max() < 1e-10


@pytest.mark.parametrize("wavelet", sorted(WAVELET_FILTERS))
def test_wavelet_filters_orthonormal(wavelet):
    lo = WAVELET_FILTERS[wavelet]
    np.testing.assert_allclose(lo.sum(), np.sqrt(2), rtol=1e-15)
    for shift in range(0, lo.size, 2):
        expected = 1.0 if shift == 0 else 0.0
        assert abs(np.dot(lo[shift:], lo[:lo.size - shift]) - expected) < 1e-15
    M = dense_matrix(SpectralTransform("dwt", 32, wavelet=wavelet))
    assert np.abs(M @ M.T - np.eye(32)).max() < 1e-13


def test_coif2_vanishing_moments():
    lo = WAVELET_FILTERS["coif2"]
    k = np.arange(lo.size)
    hi = (-1.0) ** k * lo[::-1]
    for p in range(4):  # wavelet moments
        assert abs(np.sum(hi * k**p)) < 1e-9 * max(1, np.sum(np.abs(hi) * k**p))


@pytest.mark.parametrize("kind", KINDS)
def test_parseval_many_vectors(kind):
    t = SpectralTransform(kind, 64)
    V = np.random.default_rng(1).standard_normal((64, 1000))
    W = t.forward(V)
    np.testing.assert_allclose(np.linalg.norm(W, axis=0), np.linalg.norm(V, axis=0), rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(KINDS), p=st.integers(1, 8), seed=st.integers(0, 2**32 - 1),
       two_d=st.booleans())
def test_round_trip(kind, p, seed, two_d):
    n = 2**p
    shape = (n, max(2, n // 2)) if two_d else (n,)
    t = SpectralTransform(kind, shape)
    v = np.random.default_rng(seed).standard_normal(t.size)
    back = t.inverse(t.forward(v))
    assert np.linalg.norm(back - v) / np.linalg.norm(v) < 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_2d_matches_two_pass_oracle(kind):
    t2 = SpectralTransform(kind, (8, 8))
    M1 = dense_matrix(SpectralTransform(kind, 8))
    X = np.random.default_rng(2).standard_normal((8, 8))
    # rows then columns of the row-major grid
    expected = M1 @ (X @ M1.T)
    np.testing.assert_allclose(t2.forward(X.ravel()), expected.ravel(), atol=1e-12)


def test_2d_rectangular_grid():
    t = SpectralTransform("dwt", (16, 8))
    M = dense_matrix(t)
    assert np.abs(M @ M.T - np.eye(128)).max() < 1e-10


def test_dwt_levels_zero_is_identity():
    t = SpectralTransform("dwt", 32, levels=0)
    v = np.random.default_rng(3).standard_normal(32)
    np.testing.assert_array_equal(t.forward(v), v)


def test_dwt_one_level_haar():
    t = SpectralTransform("dwt", 4, wavelet="haar", levels=1)
    w = t.forward(np.array([1.0, 3.0, 5.0, 9.0]))
    s = 1 / np.sqrt(2)
    # pairwise sums, then pairwise differences up to the sign convention
    np.testing.assert_allclose(w[:2], [4 * s, 14 * s], atol=1e-14)
    np.testing.assert_allclose(np.abs(w[2:]), [2 * s, 4 * s], atol=1e-14)


def test_dwt_constant_has_no_detail():
    t = SpectralTransform("dwt", 64)
    w = t.forward(np.full(64, 3.0))
    np.testing.assert_allclose(w[0], 3.0 * 8.0, rtol=1e-12)  # a_L with one coefficient
    np.testing.assert_allclose(w[1:], 0.0, atol=1e-12)


@pytest.mark.parametrize("bad", [
    dict(kind="dwt", shape=12),
    dict(kind="dwt", shape=16, levels=5),
    dict(kind="fourier", shape=8),
    dict(kind="dwt", shape=8, wavelet="sym9"),
    dict(kind="dct", shape=(2, 2, 2)),
])
def test_invalid_configuration(bad):
    with pytest.raises(TransformError):
        SpectralTransform(**bad)


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        SpectralTransform("dct", 8).forward(np.zeros(7))
    with pytest.raises(ValueError):
        BlockTransform(SpectralTransform("dct", 8), 2).forward(np.zeros(8))


def test_dense_matrix_guard():
    with pytest.raises(TransformError):
        dense_matrix(SpectralTransform("dct", 64), max_size=32)


def test_block_transform_acts_per_block():
    base = SpectralTransform("dct", 8)
    bt = make_transform("dct", 8, nvars=3)
    assert isinstance(bt, BlockTransform) and bt.size == 24 and bt.block_size == 8
    v = np.random.default_rng(4).standard_normal(24)
    expected = np.concatenate([base.forward(b) for b in v.reshape(3, 8)])
    np.testing.assert_allclose(bt.forward(v), expected, atol=1e-14)
    np.testing.assert_allclose(bt.inverse(bt.forward(v)), v, atol=1e-13)


def test_forward_ensemble_columns():
    t = SpectralTransform("dct", 8)
    E = np.random.default_rng(5).standard_normal((8, 3))
    EF = forward_ensemble(t, E)
    np.testing.assert_allclose(EF, dct2_matrix(8) @ E, atol=1e-13)
    np.testing.assert_allclose(np.linalg.norm(EF, axis=0), np.linalg.norm(E, axis=0), rtol=1e-10)
    np.testing.assert_allclose(EF[:, :1], forward(t, E[:, :1]))
    np.testing.assert_allclose(inverse_ensemble(t, EF), E, atol=1e-13)
    ident = make_transform("identity", 4, nvars=2)
    E2 = np.arange(16.0).reshape(8, 2)
    np.testing.assert_array_equal(forward_ensemble(ident, E2), E2)
    with pytest.raises(TransformError):
        forward_ensemble(t, np.zeros(8))
