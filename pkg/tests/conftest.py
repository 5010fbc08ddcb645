from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"


def random_spd(rng, n, lo=0.2, hi=5.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.T


def sqrt_pair(H):
    lam, vec = np.linalg.eigh(H)
    return (vec * np.sqrt(lam)) @ vec.T, (vec / np.sqrt(lam)) @ vec.T


def random_sh(rng, n, top=1.0, rank=None, H=None, neg=0.0):
    """W = S H with S PSD: returns (W, H). Nonzero spectrum in [0.05, top].

    ``neg`` > 0 plants an eigenvalue ``-neg`` (W then is not similar to a PSD matrix).
    """
    H = random_spd(rng, n) if H is None else H
    rank = n if rank is None else rank
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.zeros(n)
    lam[:rank] = rng.uniform(0.05, 1.0, rank)
    lam[0] = top
    if neg:
        lam[-1] = -neg
    M = (q * lam) @ q.T
    Hh, Hih = sqrt_pair(H)
    return Hih @ M @ Hh, H


def random_kernel(rng, n, k=None):
    """Nonnegative symmetric PSD kernel K = B B^T (+ small diagonal)."""
    k = n if k is None else k
    B = rng.random((n, k)) ** 3
    return B @ B.T + 0.01 * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def camera64():
    from scaledpnp.restoration import read_pgm

    return read_pgm(DATA / "camera64.pgm")
