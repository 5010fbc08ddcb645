"""Linear denoisers ``x -> W x`` and their scaling matrices.

Kernel denoisers have ``W = D^{-1} K`` with ``K`` symmetric, nonnegative
and positive semidefinite, and ``D`` the diagonal of row sums of ``K``.
Such a ``W`` is generally not symmetric, but it is self-adjoint in the
inner product weighted by ``D``, which is why :func:`scaling_matrix`
returns ``D`` for it and the identity for symmetric filters.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .linops import CirculantOperator, DiagonalOperator, DimensionError, IdentityOperator

log = logging.getLogger(__name__)

DEFAULT_PATCH_RADIUS = 3  # 7x7 patches
DEFAULT_WINDOW_RADIUS = 5  # 11x11 search window
DEFAULT_H = 0.4
DEFAULT_SINKHORN_ITERS = 20
SINKHORN_TOL = 1e-6


class SinkhornError(RuntimeError):
    def __init__(self, residual: float, iters: int):
        super().__init__(
            f"symmetric Sinkhorn balancing reached row-sum residual {residual:.3e} "
            f"after {iters} iterations (tolerance {SINKHORN_TOL:g})"
        )
        self.residual = residual
        self.iters = iters


class LinearDenoiser:
    """Common interface. ``apply`` computes ``W x`` on flattened images."""

    n: int
    image_shape: Optional[Tuple[int, int]] = None
    is_frozen = True

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n:
            raise DimensionError(f"denoiser expects length {self.n}, got {x.shape[0]}")
        return self._apply(x)

    def matrix(self) -> np.ndarray:
        """Dense ``W``; test scale only."""
        return np.column_stack([self._apply(e) for e in np.eye(self.n)])

    def _apply(self, x):
        raise NotImplementedError


class KernelDenoiser(LinearDenoiser):
    """``W = D^{-1} K`` built from an explicit kernel matrix (dense or sparse)."""

    def __init__(self, K, params: Optional[dict] = None, image_shape=None, check: bool = True):
        if sp.issparse(K):
            K = sp.csr_matrix(K, dtype=float)
            d = np.asarray(K.sum(axis=1)).reshape(-1)
        else:
            K = np.array(K, dtype=float)
            d = K.sum(axis=1)
        if K.shape[0] != K.shape[1]:
            raise DimensionError("kernel matrix must be square")
        if check:
            _check_kernel(K, d)
        self.K = K
        self.row_sums = d
        self.D = DiagonalOperator(d)
        self.params = dict(params or {})
        self.image_shape = image_shape
        self.n = K.shape[0]

    def _apply(self, x):
        return (self.K @ x) / self.row_sums

    def matrix(self):
        k = self.K.toarray() if sp.issparse(self.K) else self.K
        return k / self.row_sums[:, None]


def _check_kernel(K, d):
    if np.any(d <= 0):
        raise ValueError("kernel row sums must be strictly positive")
    if sp.issparse(K):
        if K.nnz and K.data.min() < 0:
            raise ValueError("kernel entries must be nonnegative")
        asym = abs(K - K.T)
        asym = asym.max() if asym.nnz else 0.0
        scale = abs(K).max() if K.nnz else 1.0
    else:
        if K.min() < 0:
            raise ValueError("kernel entries must be nonnegative")
        asym = np.abs(K - K.T).max()
        scale = np.abs(K).max()
    if asym > 1e-12 * scale:
        raise ValueError(f"kernel matrix is not symmetric (max asymmetry {asym:.3e})")


class TwoWMinusWSquared(LinearDenoiser):
    """The filter ``2W - W^2`` over a kernel denoiser; same scaling matrix ``D``."""

    def __init__(self, base: KernelDenoiser):
        self.base = base
        self.n = base.n
        self.image_shape = base.image_shape

    def _apply(self, x):
        y = self.base._apply(x)
        return 2.0 * y - self.base._apply(y)

    def matrix(self):
        w = self.base.matrix()
        return 2.0 * w - w @ w


class SymmetricDenoiser(LinearDenoiser):
    """Explicit symmetric ``W`` (dense or sparse), e.g. DSG-NLM. ``H = I``."""

    def __init__(self, W, image_shape=None, kind: str = "symmetric"):
        self.W = sp.csr_matrix(W) if sp.issparse(W) else np.array(W, dtype=float)
        self.n = self.W.shape[0]
        self.image_shape = image_shape
        self.kind = kind

    def _apply(self, x):
        return self.W @ x

    def matrix(self):
        return self.W.toarray() if sp.issparse(self.W) else self.W.copy()


class ConvolutionDenoiser(LinearDenoiser):
    """Classical shift-invariant filter (box, Gaussian) with periodic boundaries.

    A symmetric PSF gives a symmetric ``W``; the scaling matrix is ``I``.
    """

    def __init__(self, psf, image_shape):
        psf = np.asarray(psf, dtype=float)
        if not np.allclose(psf, psf[::-1, ::-1], atol=1e-14):
            raise ValueError("convolution denoiser needs a centro-symmetric PSF")
        self.op = CirculantOperator(psf, image_shape)
        self.image_shape = tuple(image_shape)
        self.n = self.op.shape[0]

    def _apply(self, x):
        return self.op._apply(x)


class MatrixDenoiser(LinearDenoiser):
    """Arbitrary explicit ``W`` with a caller-supplied scaling matrix.

    ``scaling`` may be ``None`` (identity), a positive diagonal vector or a
    :class:`~scaledpnp.linops.DiagonalOperator`.
    """

    def __init__(self, W, scaling=None, image_shape=None):
        self.W = np.array(W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise DimensionError("W must be square")
        self.n = self.W.shape[0]
        if scaling is not None and not isinstance(scaling, DiagonalOperator):
            scaling = DiagonalOperator(scaling)
        self.scaling = scaling
        self.image_shape = image_shape

    def _apply(self, x):
        return self.W @ x

    def matrix(self):
        return self.W.copy()


class FrozenDenoiser(LinearDenoiser):
    """Kernel filter whose weights track a guide image for ``freeze_after`` refreshes.

    The solver calls :meth:`refresh` with its current estimate once per
    iteration. Each of the first ``freeze_after`` calls rebuilds the inner
    denoiser from that guide (clipped to ``[0, 1]``); after that the weights
    stay fixed and the denoiser is linear.
    """

    def __init__(self, builder: Callable[[np.ndarray], LinearDenoiser], freeze_after: int,
                 image_shape: Tuple[int, int]):
        if freeze_after < 1:
            raise ValueError("freeze_after must be >= 1")
        self.builder = builder
        self.freeze_after = int(freeze_after)
        self.image_shape = tuple(image_shape)
        self.n = self.image_shape[0] * self.image_shape[1]
        self.current: Optional[LinearDenoiser] = None
        self.refreshes = 0
        self.frozen_W: Optional[LinearDenoiser] = None

    @property
    def is_frozen(self) -> bool:
        return self.frozen_W is not None

    def refresh(self, guide) -> None:
        if self.frozen_W is not None:
            return
        g = np.clip(np.asarray(guide, dtype=float).reshape(self.image_shape), 0.0, 1.0)
        self.current = self.builder(g)
        self.refreshes += 1
        if self.refreshes >= self.freeze_after:
            self.frozen_W = self.current
            log.debug("denoiser weights frozen after %d refreshes", self.refreshes)

    def _apply(self, x):
        if self.current is None:
            raise RuntimeError("refresh(guide) must be called before the first application")
        return self.current._apply(x)

    def matrix(self):
        if self.current is None:
            raise RuntimeError("no weights built yet")
        return self.current.matrix()


def hat_weight(dy: int, dx: int, window_radius: int) -> float:
    """Separable triangular weight; positive inside the window, zero one step outside it."""
    w = window_radius + 1.0
    return (1.0 - abs(dy) / w) * (1.0 - abs(dx) / w)


def _box_sum_valid(a: np.ndarray, k: int) -> np.ndarray:
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def nlm_kernel(guide, patch_radius: int = DEFAULT_PATCH_RADIUS,
               window_radius: int = DEFAULT_WINDOW_RADIUS, h: float = DEFAULT_H) -> sp.csr_matrix:
    """Sparse NLM kernel ``K[i, j] = hat(i - j) * exp(-||P_i - P_j||^2 / h^2)``.

    Patches use edge replication at the border. Only half the offsets are
    evaluated and mirrored, so ``K`` is exactly symmetric.
    """
    g = np.asarray(guide, dtype=float)
    if g.ndim != 2:
        raise DimensionError("guide must be a 2-D image")
    if not h > 0:
        raise ValueError("h must be positive")
    if not window_radius >= patch_radius >= 0:
        raise ValueError("need window_radius >= patch_radius >= 0")
    if g.size and (g.min() < -1e-12 or g.max() > 1 + 1e-12):
        raise ValueError("guide intensities must lie in [0, 1]")
    ny, nx = g.shape
    n = ny * nx
    pr, k = patch_radius, 2 * patch_radius + 1
    gp = np.pad(g, pr, mode="edge")
    idx = np.arange(n).reshape(ny, nx)
    inv_h2 = 1.0 / (h * h)

    rows = [idx.reshape(-1)]
    cols = [idx.reshape(-1)]
    vals = [np.ones(n)]
    for dy in range(0, window_radius + 1):
        for dx in range(-window_radius, window_radius + 1):
            if dy == 0 and dx <= 0:
                continue
            y0, y1 = max(0, -dy), min(ny, ny - dy)
            x0, x1 = max(0, -dx), min(nx, nx - dx)
            if y1 <= y0 or x1 <= x0:
                continue
            a = gp[y0:y1 + 2 * pr, x0:x1 + 2 * pr]
            b = gp[y0 + dy:y1 + dy + 2 * pr, x0 + dx:x1 + dx + 2 * pr]
            dist = _box_sum_valid((a - b) ** 2, k)
            w = hat_weight(dy, dx, window_radius) * np.exp(-np.maximum(dist, 0.0) * inv_h2)
            i = idx[y0:y1, x0:x1].reshape(-1)
            j = idx[y0 + dy:y1 + dy, x0 + dx:x1 + dx].reshape(-1)
            w = w.reshape(-1)
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return K.tocsr()


def build_nlm(guide, patch_radius: int = DEFAULT_PATCH_RADIUS,
              window_radius: int = DEFAULT_WINDOW_RADIUS, h: float = DEFAULT_H) -> KernelDenoiser:
    g = np.asarray(guide, dtype=float)
    K = nlm_kernel(g, patch_radius, window_radius, h)
    params = dict(patch_radius=patch_radius, window_radius=window_radius, h=h)
    # symmetric and nonnegative by construction; row sums include the unit self weight
    return KernelDenoiser(K, params=params, image_shape=g.shape, check=False)


def sinkhorn_symmetric(K, iters: int = DEFAULT_SINKHORN_ITERS, tol: float = SINKHORN_TOL):
    """Scale ``K`` to ``diag(s) K diag(s)`` with unit row sums.

    Each sweep applies ``K <- L K L`` with ``L`` the inverse square root of the
    current row sums. Raises :class:`SinkhornError` if the row-sum residual
    is still above ``tol`` after ``iters`` sweeps.
    """
    s = np.ones(K.shape[0])
    ks = K @ s
    resid = np.abs(s * ks - 1.0).max()
    for _ in range(iters):
        if resid <= tol:
            break
        s = s / np.sqrt(s * ks)
        ks = K @ s
        resid = np.abs(s * ks - 1.0).max()
    if resid > tol:
        raise SinkhornError(float(resid), iters)
    if sp.issparse(K):
        S = sp.diags(s)
        Ws = (S @ K @ S).tocsr()
        Ws = ((Ws + Ws.T) * 0.5).tocsr()
    else:
        Ws = s[:, None] * K * s[None, :]
        Ws = 0.5 * (Ws + Ws.T)
    return Ws, s


def build_dsg_nlm(guide, patch_radius: int = DEFAULT_PATCH_RADIUS,
                  window_radius: int = DEFAULT_WINDOW_RADIUS, h: float = DEFAULT_H,
                  sinkhorn_iters: int = DEFAULT_SINKHORN_ITERS) -> SymmetricDenoiser:
    """Symmetric doubly-stochastic NLM (DSG-NLM)."""
    g = np.asarray(guide, dtype=float)
    K = nlm_kernel(g, patch_radius, window_radius, h)
    Ws, _ = sinkhorn_symmetric(K, sinkhorn_iters)
    return SymmetricDenoiser(Ws, image_shape=g.shape, kind="dsg-nlm")


def box_filter(size: int, image_shape) -> ConvolutionDenoiser:
    return ConvolutionDenoiser(np.full((size, size), 1.0 / size**2), image_shape)


def gaussian_filter(size: int, sigma: float, image_shape) -> ConvolutionDenoiser:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t**2) / (2 * sigma**2))
    psf = np.outer(g, g)
    return ConvolutionDenoiser(psf / psf.sum(), image_shape)


def scaling_matrix(d: LinearDenoiser):
    """Scaling matrix ``H`` under which ``d`` is a scaled proximal map.

    ``D`` for kernel and ``2W - W^2`` denoisers, the identity for symmetric ones.
    """
    if isinstance(d, FrozenDenoiser):
        if d.current is None:
            raise RuntimeError("no weights built yet")
        return scaling_matrix(d.current)
    if isinstance(d, KernelDenoiser):
        return d.D
    if isinstance(d, TwoWMinusWSquared):
        return d.base.D
    if isinstance(d, (SymmetricDenoiser, ConvolutionDenoiser)):
        return IdentityOperator(d.n)
    if isinstance(d, MatrixDenoiser):
        return d.scaling if d.scaling is not None else IdentityOperator(d.n)
    raise TypeError(f"unsupported denoiser kind: {type(d).__name__}")


def denoise(d: LinearDenoiser, x) -> np.ndarray:
    return d.apply(x)
