"""Linear operators on flattened images and small dense eigen utilities.

Every operator maps 1-D float vectors to 1-D float vectors. Image-shaped
operators (mask, circulant blur) carry ``image_shape`` and reshape
internally, so solvers never need to know about the 2-D layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np


class DimensionError(ValueError):
    """Raised when a vector does not match an operator's domain."""


class NoConvergenceError(RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    The result is indeterminate; no value is returned.
    """


def _as_vector(x, size: int, what: str = "input") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        x = x.reshape(-1)
    if x.shape[0] != size:
        raise DimensionError(f"{what} has length {x.shape[0]}, expected {size}")
    return x


class LinearOperator:
    """Base class: a real linear map ``R^n -> R^m``.

    Subclasses implement :meth:`_apply` and :meth:`_adjoint`; the public
    methods validate dimensions.
    """

    shape: Tuple[int, int]

    def apply(self, x) -> np.ndarray:
        return self._apply(_as_vector(x, self.shape[1]))

    def apply_adjoint(self, y) -> np.ndarray:
        return self._adjoint(_as_vector(y, self.shape[0]))

    def __matmul__(self, x):
        return self.apply(x)

    @property
    def T(self) -> "LinearOperator":
        return _Adjoint(self)

    def to_dense(self) -> np.ndarray:
        """Materialize as an ``(m, n)`` array. Test scale only."""
        n = self.shape[1]
        return np.column_stack([self._apply(e) for e in np.eye(n)])

    def gram_lambda_max(self) -> float:
        """Largest eigenvalue of ``A^T A``."""
        g = self.to_dense()
        return float(np.linalg.eigvalsh(g.T @ g)[-1])

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _Adjoint(LinearOperator):
    def __init__(self, op: LinearOperator):
        self.op = op
        self.shape = (op.shape[1], op.shape[0])

    def _apply(self, x):
        return self.op._adjoint(x)

    def _adjoint(self, y):
        return self.op._apply(y)


class DenseMatrix(LinearOperator):
    """Explicit matrix. Entries must be finite."""

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2:
            raise DimensionError("DenseMatrix needs a 2-D array")
        if not np.all(np.isfinite(a)):
            raise ValueError("DenseMatrix entries must be finite")
        a.setflags(write=False)
        self.matrix = a
        self.shape = a.shape

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.T @ y

    def to_dense(self):
        return self.matrix.copy()

    def gram_lambda_max(self):
        return float(np.linalg.norm(self.matrix, 2) ** 2)


class IdentityOperator(LinearOperator):
    def __init__(self, n: int):
        self.shape = (n, n)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()

    def to_dense(self):
        return np.eye(self.shape[0])

    def gram_lambda_max(self):
        return 1.0

    @property
    def diag(self) -> np.ndarray:
        return np.ones(self.shape[0])


class DiagonalOperator(LinearOperator):
    """Diagonal matrix. Used as the scaling matrix ``H`` when all entries are positive."""

    def __init__(self, diag):
        d = np.array(diag, dtype=float).reshape(-1)
        if not np.all(np.isfinite(d)):
            raise ValueError("diagonal entries must be finite")
        d.setflags(write=False)
        self.diag = d
        self.shape = (d.size, d.size)

    @property
    def is_positive(self) -> bool:
        return bool(np.all(self.diag > 0))

    def _apply(self, x):
        return self.diag * x

    def _adjoint(self, y):
        return self.diag * y

    def to_dense(self):
        return np.diag(self.diag)

    def gram_lambda_max(self):
        return float(np.max(self.diag**2)) if self.diag.size else 0.0


class MaskOperator(LinearOperator):
    """Selects ``m < n`` pixels: the rows ``kept_indices`` of the identity."""

    def __init__(self, kept_indices: Sequence[int], n: int, image_shape=None):
        kept = np.asarray(kept_indices, dtype=np.intp).reshape(-1)
        if kept.size and (kept[0] < 0 or kept[-1] >= n):
            raise IndexError("kept index out of range")
        if np.any(np.diff(kept) <= 0):
            raise ValueError("kept_indices must be strictly increasing")
        if kept.size >= n:
            raise ValueError("a mask must drop at least one pixel (m < n)")
        kept.setflags(write=False)
        self.kept_indices = kept
        self.n = n
        self.image_shape = tuple(image_shape) if image_shape is not None else None
        self.shape = (kept.size, n)

    @property
    def kept_mask(self) -> np.ndarray:
        """Boolean vector of length ``n``; this is the diagonal of ``A^T A``."""
        m = np.zeros(self.n, dtype=bool)
        m[self.kept_indices] = True
        return m

    def _apply(self, x):
        return x[self.kept_indices]

    def _adjoint(self, y):
        out = np.zeros(self.n)
        out[self.kept_indices] = y
        return out

    def gram_lambda_max(self):
        return 1.0 if self.kept_indices.size else 0.0


def psf_transfer(psf, image_shape) -> np.ndarray:
    """DFT of the PSF zero-padded to the image and centred at pixel (0, 0)."""
    psf = np.asarray(psf, dtype=float)
    h, w = image_shape
    ph, pw = psf.shape
    if ph > h or pw > w:
        raise DimensionError("PSF larger than image")
    pad = np.zeros((h, w))
    pad[:ph, :pw] = psf
    pad = np.roll(pad, (-(ph // 2), -(pw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


class CirculantOperator(LinearOperator):
    """Periodic 2-D convolution with a PSF (a block-circulant matrix).

    The PSF origin is its central sample (odd sizes); even sizes use
    ``size // 2``.
    """

    def __init__(self, psf, image_shape: Tuple[int, int]):
        psf = np.array(psf, dtype=float)
        if psf.ndim != 2:
            raise DimensionError("PSF must be 2-D")
        psf.setflags(write=False)
        self.psf = psf
        self.image_shape = tuple(int(s) for s in image_shape)
        self.transfer = psf_transfer(psf, self.image_shape)
        self.transfer.setflags(write=False)
        n = self.image_shape[0] * self.image_shape[1]
        self.shape = (n, n)

    def _filter(self, x, t):
        img = x.reshape(self.image_shape)
        return np.fft.ifft2(np.fft.fft2(img) * t).real.reshape(-1)

    def _apply(self, x):
        return self._filter(x, self.transfer)

    def _adjoint(self, y):
        return self._filter(y, np.conj(self.transfer))

    def gram_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``A^T A`` (unsorted), read off the Fourier transform."""
        return (np.abs(self.transfer) ** 2).reshape(-1)

    def gram_lambda_max(self):
        return float(self.gram_eigenvalues().max())


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns
    rank: int
    rank_tolerance: float

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _dense(m) -> np.ndarray:
    if isinstance(m, LinearOperator):
        return m.to_dense()
    return np.asarray(m, dtype=float)


def symmetric_eig(m, rank_tol: float = 1e-8, sym_tol: float = 1e-12) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``rank`` counts eigenvalues strictly above ``rank_tol * lambda_max``.
    """
    a = _dense(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("matrix must be square")
    scale = max(np.abs(a).max(initial=0.0), np.finfo(float).tiny)
    asym = np.abs(a - a.T).max(initial=0.0)
    if asym > sym_tol * scale:
        raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    try:
        lam, vec = np.linalg.eigh(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigendecomposition failed") from exc
    lam, vec = lam[::-1], vec[:, ::-1]
    top = lam[0] if lam.size else 0.0
    rank = int(np.sum(lam > rank_tol * top)) if top > 0 else 0
    return EigenDecomposition(lam, vec, rank, rank_tol)


def power_dominant_eig(
    m,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    seed: Optional[int] = 0,
) -> Tuple[float, np.ndarray]:
    """Dominant eigenpair by power iteration.

    Assumes the dominant eigenvalue is real and simple; the returned pair
    satisfies ``||M v - lam v|| <= tol ||v||`` or
    :class:`NoConvergenceError` is raised.
    """
    a = _dense(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("matrix must be square")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    resid = np.inf
    for _ in range(max_iter):
        w = a @ v
        lam = float(v @ w)
        resid = np.linalg.norm(w - lam * v)
        if resid <= tol:
            return lam, v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v
        v = w / nw
    raise NoConvergenceError(
        f"power iteration did not converge in {max_iter} steps (residual {resid:.3e})"
    )
