import csv

import numpy as np
import pytest

from conftest import random_kernel, random_sh, random_spd, sqrt_pair
from scaledpnp.denoisers import KernelDenoiser, build_nlm
from scaledpnp.proximal import HMetric
from scaledpnp.theory import (
    TABLE_ROWS,
    CounterexampleInstance,
    NotProximableError,
    certify_proximable,
    eval_phi_direct,
    eval_phi_fast,
    moreau_check,
    real_diagonalizable,
    reversible_scaling,
    run_counterexample,
    verify_scaled_prox,
)

D_C = np.array([0.3116, 0.5788])
K_C = np.array([[0.1102, 0.2014], [0.2014, 0.3774]])
W_C = K_C / D_C[:, None]
TABLE = {1: -0.6743, 200: -0.1045, 400: 3.7808, 600: 7.6662, 800: 11.5515, 1000: 15.4369}


@pytest.fixture(scope="module")
def counterexample():
    return run_counterexample(1000)


# certify_proximable --------------------------------------------------------

def test_certify_zero_matrix():
    cert = certify_proximable(np.zeros((3, 3)))
    assert cert.rank == 0 and cert.lambda_max == 0.0
    np.testing.assert_array_equal(cert.P, np.zeros((3, 3)))
    np.testing.assert_array_equal(cert.H, np.eye(3))


def test_certify_two_pixel_kernel_denoiser():
    d = KernelDenoiser(K_C)
    cert = certify_proximable(d)
    np.testing.assert_allclose(np.diag(cert.H), D_C, rtol=1e-14)
    assert cert.lambda_max == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(cert.W, W_C, rtol=1e-14)


def test_certify_refuses_lambda_above_one():
    with pytest.raises(NotProximableError) as exc:
        certify_proximable(1.5 * np.eye(3))
    assert "lambda_max" in exc.value.condition
    assert exc.value.magnitude == pytest.approx(1.5)


def test_certify_refuses_non_similar(rng):
    rot = np.array([[0.0, -0.5], [0.5, 0.0]])
    with pytest.raises(NotProximableError):
        certify_proximable(rot, np.ones(2))
    W, H = random_sh(rng, 6, neg=0.3)
    with pytest.raises(NotProximableError) as exc:
        certify_proximable(W, H)
    assert "negative" in exc.value.condition


def test_certify_wrong_hint_is_refused(rng):
    W, H = random_sh(rng, 5)
    with pytest.raises(NotProximableError):
        certify_proximable(W, random_spd(rng, 5))


def test_certificate_invariants(rng):
    for _ in range(10):
        W, H = random_sh(rng, 7, rank=5)
        cert = certify_proximable(W, H)
        Hh, Hih = sqrt_pair(H)
        M = Hh @ W @ Hih
        np.testing.assert_allclose(M, M.T, atol=1e-9)
        assert np.linalg.eigvalsh(cert.P)[0] >= -1e-9
        np.testing.assert_allclose(cert.P, cert.P.T, atol=1e-12)
        assert cert.rank == 5
        np.testing.assert_allclose(cert.range_basis @ (cert.eigenvalues[:, None] * cert.range_dual), W,
                                   atol=1e-10)


def test_reversible_scaling_recovers_row_sums_up_to_scale(rng):
    K = random_kernel(rng, 9)
    d = K.sum(1)
    h = reversible_scaling(K / d[:, None])
    np.testing.assert_allclose(h, d / d.sum(), rtol=1e-10)
    cert = certify_proximable(K / d[:, None])
    np.testing.assert_allclose(np.diag(cert.H), d / d.sum(), rtol=1e-10)


def test_reversible_scaling_refusals(rng):
    with pytest.raises(NotProximableError):
        reversible_scaling(np.array([[0.5, 0.6], [0.2, 0.8]]))
    # row-stochastic but not reversible (cyclic chain with drift)
    W = np.array([[0.2, 0.7, 0.1], [0.1, 0.2, 0.7], [0.7, 0.1, 0.2]])
    with pytest.raises(NotProximableError):
        reversible_scaling(W)


def test_kernel_denoiser_h_equals_row_sums(rng):
    for seed in range(4):
        g = np.random.default_rng(seed).random((5, 5))
        d = build_nlm(g, 1, 2, 0.4 + 0.1 * seed)
        cert = certify_proximable(d)
        assert np.abs(np.diag(cert.H) - d.row_sums).max() <= 1e-12
        assert np.abs(cert.H - np.diag(np.diag(cert.H))).max() == 0.0
    for _ in range(4):
        kd = KernelDenoiser(random_kernel(rng, 10, 4))
        cert = certify_proximable(kd)
        assert np.abs(np.diag(cert.H) - kd.row_sums).max() <= 1e-12


# eval_phi -------------------------------------------------------------------

def test_phi_direct_examples(rng):
    W, H = random_sh(rng, 6, rank=3)
    cert = certify_proximable(W, H)
    assert eval_phi_direct(cert, np.zeros(6)) == 0.0
    Q, _ = np.linalg.qr(cert.range_basis, mode="complete")
    off = Q[:, 3:] @ rng.standard_normal(3)
    assert eval_phi_direct(cert, off) == np.inf
    on = W @ rng.standard_normal(6)
    assert np.isfinite(eval_phi_direct(cert, on))


def test_phi_symmetric_matches_condensed_eigendecomposition(rng):
    for _ in range(10):
        W, _ = random_sh(rng, 8, top=0.9, rank=5, H=np.eye(8))
        W = 0.5 * (W + W.T)
        lam, V = np.linalg.eigh(W)
        keep = lam > 1e-8
        Vr, lr = V[:, keep], lam[keep]
        cert = certify_proximable(W)
        for _ in range(5):
            x = Vr @ rng.standard_normal(keep.sum())
            ref = 0.5 * x @ Vr @ np.diag(1 / lr - 1) @ Vr.T @ x
            assert eval_phi_direct(cert, x) == pytest.approx(ref, rel=1e-9)


def test_phi_fast_trivial_examples(rng):
    q = rng.standard_normal(5)
    assert eval_phi_fast(HMetric.identity(5), q, q) == 0.0
    kd = KernelDenoiser(random_kernel(rng, 5))
    c = np.full(5, 0.37)
    assert abs(eval_phi_fast(kd.row_sums, kd.apply(c), c)) <= 1e-15


def test_phi_fast_matches_direct_kernel_n12(rng):
    kd = KernelDenoiser(random_kernel(rng, 12))
    cert = certify_proximable(kd)
    for _ in range(20):
        q = rng.standard_normal(12)
        u = kd.apply(q)
        direct = eval_phi_direct(cert, u)
        assert eval_phi_fast(kd.row_sums, u, q) == pytest.approx(direct, rel=1e-9)


# moreau_check ----------------------------------------------------------------

def test_moreau_identity():
    r = moreau_check(np.eye(4), HMetric.identity(4))
    assert r.passed
    assert r.max_ratio == pytest.approx(1.0, abs=1e-14)
    assert r.hw_min_eig == pytest.approx(1.0)


def test_moreau_two_pixel_kernel():
    assert moreau_check(W_C, D_C).passed
    # the same W is not symmetric, so the Euclidean metric fails (b)
    assert not moreau_check(W_C, np.ones(2)).psd


def test_moreau_rotation_fails_b():
    r = moreau_check(np.array([[0.0, -1.0], [1.0, 0.0]]), HMetric.identity(2))
    assert r.nonexpansive  # rotations are isometries
    assert not r.psd and not r.passed
    assert r.hw_asymmetry == pytest.approx(2.0)


def test_moreau_converse_for_certified(rng):
    for _ in range(20):
        W, H = random_sh(rng, 6, rank=int(rng.integers(1, 7)))
        cert = certify_proximable(W, H)
        assert moreau_check(W, cert.metric(), trials=50).passed


# verify_scaled_prox -------------------------------------------------------------

def test_verify_half_identity():
    W = 0.5 * np.eye(3)
    cert = certify_proximable(W)
    np.testing.assert_allclose(cert.P, np.eye(3), atol=1e-14)
    assert verify_scaled_prox(W, cert).passed


def test_verify_two_pixel_and_random_kernel(rng):
    assert verify_scaled_prox(W_C, certify_proximable(W_C, D_C)).passed
    kd = KernelDenoiser(random_kernel(rng, 8))
    rep = verify_scaled_prox(kd, certify_proximable(kd))
    assert rep.passed and rep.trials == 100


def test_verify_detects_wrong_certificate(rng):
    W, H = random_sh(rng, 6)
    cert = certify_proximable(W, H)
    cert.P = cert.P + 0.1 * np.eye(6)
    assert not verify_scaled_prox(W, cert).passed


def test_scale_freedom(rng):
    for _ in range(5):
        W, H = random_sh(rng, 6, rank=4)
        cert = certify_proximable(W, H)
        for c in (0.5, 2.0):
            sc = cert.scaled(c)
            np.testing.assert_allclose(sc.H, c * H)
            assert verify_scaled_prox(W, sc).passed
            x = W @ rng.standard_normal(6)
            assert eval_phi_direct(sc, x) == pytest.approx(c * eval_phi_direct(cert, x), rel=1e-10)


# counterexample ------------------------------------------------------------------

def test_counterexample_instance_rebuilt_from_data():
    inst = CounterexampleInstance()
    I = np.eye(2)
    a = np.array([0.8295, -0.5586])
    C = I + np.outer(a, a)
    Ci = np.linalg.inv(C)
    np.testing.assert_allclose(inst.C, C)
    np.testing.assert_allclose(inst.W, W_C, rtol=1e-14)
    np.testing.assert_allclose(inst.W.sum(1), 1.0, atol=2e-4)  # rounded data: nearly row-stochastic
    np.testing.assert_allclose(inst.transition, np.vstack([W_C, I - W_C]) @ np.hstack([Ci, I - Ci]),
                               rtol=1e-13)
    np.testing.assert_allclose(inst.q, (I - W_C) @ Ci @ a, rtol=1e-13)


def test_counterexample_single_step_by_hand():
    # one standard ADMM step from z = nu = 0 with rho = 1: x = C^{-1} a b, z = W x
    inst = CounterexampleInstance()
    x = np.linalg.solve(inst.C, inst.a)
    assert inst.recursion_residuals(1)[0] == pytest.approx(np.linalg.norm(x - inst.W @ x), rel=1e-14)


def test_counterexample_table_values(counterexample):
    for k in TABLE_ROWS:
        assert counterexample.at(k) == pytest.approx(TABLE[k], abs=1e-3)
    assert counterexample.max_rel_disagreement <= 1e-8


def test_counterexample_assertions(counterexample):
    assert counterexample.assertions_hold
    assert counterexample.dominant_eigenvalue > 1.0
    assert real_diagonalizable(CounterexampleInstance().transition)
    assert counterexample.at(1000) - counterexample.at(200) > 15


def test_counterexample_scaled_run_converges(counterexample):
    assert counterexample.scaled_residual[-1] < 1e-6


def test_counterexample_csv(counterexample, tmp_path):
    p = tmp_path / "t.csv"
    counterexample.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["k", "log_residual"]
    assert len(rows) == 1001
    assert float(rows[400][1]) == pytest.approx(TABLE[400], abs=1e-3)


def test_real_diagonalizable_examples():
    assert real_diagonalizable(np.diag([1.0, 0.0, 0.0]))
    assert not real_diagonalizable(np.array([[0.0, 1.0], [0.0, 0.0]]))  # Jordan block
    assert not real_diagonalizable(np.array([[0.0, -1.0], [1.0, 0.0]]))
