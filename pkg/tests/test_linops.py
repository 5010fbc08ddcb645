import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaledpnp.linops import (
    CirculantOperator,
    DenseMatrix,
    DiagonalOperator,
    DimensionError,
    IdentityOperator,
    MaskOperator,
    NoConvergenceError,
    power_dominant_eig,
    symmetric_eig,
)


def test_mask_selects_coordinates():
    A = MaskOperator([0, 2], 3)
    np.testing.assert_array_equal(A.apply([3.0, 5.0, 7.0]), [3.0, 7.0])
    np.testing.assert_array_equal(A.apply_adjoint([1.0, 2.0]), [1.0, 0.0, 2.0])


def test_mask_rejects_bad_indices():
    with pytest.raises(ValueError):
        MaskOperator([2, 1], 4)
    with pytest.raises(ValueError):
        MaskOperator([0, 1, 2], 3)  # keeps everything
    with pytest.raises(IndexError):
        MaskOperator([0, 5], 4)


def test_mask_gram_is_01_diagonal():
    A = MaskOperator([1, 3, 4], 6)
    G = A.to_dense().T @ A.to_dense()
    np.testing.assert_array_equal(G, np.diag(A.kept_mask.astype(float)))


def test_delta_psf_is_identity(rng):
    x = rng.standard_normal(30)
    A = CirculantOperator(np.array([[1.0]]), (5, 6))
    np.testing.assert_allclose(A.apply(x), x, atol=1e-14)
    psf = np.zeros((3, 3))
    psf[1, 1] = 1
    np.testing.assert_allclose(CirculantOperator(psf, (5, 6)).apply(x), x, atol=1e-14)


def test_permutation_matrix():
    A = DenseMatrix([[0, 1], [1, 0]])
    np.testing.assert_array_equal(A.apply([2.0, 9.0]), [9.0, 2.0])


def test_dense_rejects_nonfinite():
    with pytest.raises(ValueError):
        DenseMatrix([[1.0, np.nan]])


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        DenseMatrix(np.eye(3)).apply(np.ones(2))
    with pytest.raises(DimensionError):
        MaskOperator([0], 3).apply_adjoint(np.ones(2))


def test_circulant_matches_direct_periodic_convolution(rng):
    img = rng.standard_normal((6, 7))
    psf = rng.random((3, 3))
    A = CirculantOperator(psf, img.shape)
    out = A.apply(img.reshape(-1)).reshape(img.shape)
    # direct: out[i, j] = sum_{a, b} psf[a, b] img[i - (a - 1), j - (b - 1)] (periodic)
    ref = np.zeros_like(img)
    for a in range(3):
        for b in range(3):
            ref += psf[a, b] * np.roll(img, (a - 1, b - 1), axis=(0, 1))
    np.testing.assert_allclose(out, ref, atol=1e-12)


def _operators(rng):
    psf = rng.random((3, 5))
    return [
        DenseMatrix(rng.standard_normal((4, 6))),
        DiagonalOperator(rng.random(5) + 0.1),
        IdentityOperator(4),
        MaskOperator([0, 3, 5], 7),
        CirculantOperator(psf, (6, 8)),
    ]


def test_adjoint_consistency(rng):
    for A in _operators(rng):
        m, n = A.shape
        for _ in range(20):
            x, y = rng.standard_normal(n), rng.standard_normal(m)
            lhs = A.apply(x) @ y
            rhs = x @ A.apply_adjoint(y)
            assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)


def test_circulant_eigenvalues_match_dense(rng):
    psf = rng.random((3, 3))
    psf /= psf.sum()
    A = CirculantOperator(psf, (8, 8))
    dense = A.to_dense()
    ev = np.sort(np.linalg.eigvalsh(dense.T @ dense))
    np.testing.assert_allclose(np.sort(A.gram_eigenvalues()), ev, atol=1e-8)
    assert abs(A.gram_lambda_max() - ev[-1]) <= 1e-8


def test_symmetric_eig_examples():
    e = symmetric_eig(np.diag([3.0, 1.0, 0.0]))
    np.testing.assert_allclose(e.eigenvalues, [3, 1, 0], atol=1e-15)
    assert e.rank == 2
    e = symmetric_eig(np.eye(4))
    np.testing.assert_allclose(e.eigenvalues, 1.0)
    assert e.rank == 4


def test_symmetric_eig_2x2_against_characteristic_roots():
    K = np.array([[0.1102, 0.2014], [0.2014, 0.3774]])
    tr, det = np.trace(K), np.linalg.det(K)
    disc = np.sqrt(tr**2 - 4 * det)
    roots = np.array([(tr + disc) / 2, (tr - disc) / 2])
    np.testing.assert_allclose(symmetric_eig(K).eigenvalues, roots, rtol=1e-12, atol=1e-15)


def test_symmetric_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        symmetric_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_symmetric_eig_pairs_and_reconstruction(n, seed):
    r = np.random.default_rng(seed)
    B = r.standard_normal((n, n))
    M = B + B.T
    e = symmetric_eig(M)
    V, lam = e.eigenvectors, e.eigenvalues
    nm = np.linalg.norm(M, 2)
    assert np.all(np.diff(lam) <= 0)
    for i in range(n):
        assert np.linalg.norm(M @ V[:, i] - lam[i] * V[:, i]) <= 1e-10 * max(nm, 1e-300)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-10)
    assert np.linalg.norm(e.reconstruct() - M) <= 1e-8 * np.linalg.norm(M)


def test_power_iteration_diag():
    lam, v = power_dominant_eig(np.diag([2.0, 1.0]))
    assert abs(lam - 2.0) < 1e-12
    assert abs(abs(v[0]) - 1.0) < 1e-10


def test_power_iteration_matches_dense_top_pair(rng):
    for _ in range(5):
        B = rng.standard_normal((5, 5))
        M = B @ B.T  # PSD: dominant eigenvalue is the largest in magnitude
        e = symmetric_eig(M)
        lam, v = power_dominant_eig(M, tol=1e-12)
        assert abs(lam - e.eigenvalues[0]) <= 1e-10 * e.eigenvalues[0]
        assert np.linalg.norm(M @ v - lam * v) <= 1e-12
        assert abs(abs(v @ e.eigenvectors[:, 0]) - 1.0) < 1e-8


def test_power_iteration_reports_nonconvergence():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # no real dominant eigenvalue
    with pytest.raises(NoConvergenceError):
        power_dominant_eig(rot, max_iter=200)
