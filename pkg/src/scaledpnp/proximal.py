"""Weighted-norm geometry and scaled proximal maps of the least-squares loss."""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .linops import (
    CirculantOperator,
    DenseMatrix,
    DiagonalOperator,
    DimensionError,
    IdentityOperator,
    LinearOperator,
    MaskOperator,
)

CG_TOL = 1e-10
CG_MAX_ITER = 500


class CGError(RuntimeError):
    def __init__(self, residual: float, iters: int):
        super().__init__(f"conjugate gradient stopped at relative residual {residual:.3e} "
                         f"after {iters} iterations")
        self.residual = residual


class HMetric:
    """Inner product ``<x, y>_H = x^T H y`` for a symmetric positive definite ``H``.

    ``H`` may be given as a positive diagonal (vector,
    :class:`DiagonalOperator`, :class:`IdentityOperator`) or as a dense SPD
    matrix. The diagonal case is what kernel denoisers produce and is kept
    O(n) throughout.
    """

    def __init__(self, H):
        self.diag = None
        self.dense = None
        self.is_identity = False
        if isinstance(H, IdentityOperator):
            self.diag = np.ones(H.shape[0])
        elif isinstance(H, DiagonalOperator):
            self.diag = np.array(H.diag)
        elif isinstance(H, DenseMatrix):
            self.dense = np.array(H.matrix)
        else:
            a = np.asarray(H, dtype=float)
            if a.ndim == 1:
                self.diag = a.copy()
            elif a.ndim == 2:
                self.dense = a.copy()
            else:
                raise DimensionError("H must be a vector (diagonal) or a matrix")
        if self.diag is not None:
            if np.any(self.diag <= 0) or not np.all(np.isfinite(self.diag)):
                raise ValueError("diagonal scaling matrix must be positive")
            self.is_identity = bool(np.all(self.diag == 1.0))
            self.n = self.diag.size
        else:
            d = self.dense
            if d.shape[0] != d.shape[1]:
                raise DimensionError("H must be square")
            if np.abs(d - d.T).max() > 1e-12 * np.abs(d).max():
                raise ValueError("H must be symmetric")
            lam, vec = np.linalg.eigh(0.5 * (d + d.T))
            if lam[0] <= 0:
                raise ValueError("H must be positive definite")
            self._lam, self._vec = lam, vec
            self.n = d.shape[0]

    @classmethod
    def identity(cls, n: int) -> "HMetric":
        return cls(IdentityOperator(n))

    @property
    def is_diagonal(self) -> bool:
        return self.diag is not None

    def _check(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n:
            raise DimensionError(f"vector length {x.shape[0]} does not match metric size {self.n}")
        return x

    def apply(self, x) -> np.ndarray:
        x = self._check(x)
        return self.diag * x if self.diag is not None else self.dense @ x

    def solve(self, x) -> np.ndarray:
        """``H^{-1} x``."""
        x = self._check(x)
        if self.diag is not None:
            return x / self.diag
        return self._vec @ ((self._vec.T @ x) / self._lam)

    def _power(self, x, p):
        x = self._check(x)
        if self.diag is not None:
            return self.diag**p * x
        return self._vec @ ((self._vec.T @ x) * self._lam**p)

    def sqrt_apply(self, x) -> np.ndarray:
        return self._power(x, 0.5)

    def inv_sqrt_apply(self, x) -> np.ndarray:
        return self._power(x, -0.5)

    def inner(self, x, y) -> float:
        return float(self._check(x) @ self.apply(y))

    def norm(self, x) -> float:
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def inv_spectral_norm(self) -> float:
        """``||H^{-1}||_2``."""
        if self.diag is not None:
            return float(np.max(1.0 / self.diag))
        return float(1.0 / self._lam[0])

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) if self.diag is not None else self.dense.copy()

    def scaled(self, c: float) -> "HMetric":
        return HMetric(c * self.diag) if self.diag is not None else HMetric(c * self.dense)


def as_metric(H) -> HMetric:
    return H if isinstance(H, HMetric) else HMetric(H)


def h_norm(metric, x) -> float:
    return as_metric(metric).norm(x)


class QuadraticLoss:
    """``f(x) = 0.5 ||A x - b||^2``."""

    def __init__(self, A: LinearOperator, b):
        self.A = A
        self.b = np.asarray(b, dtype=float).reshape(-1)
        if self.b.shape[0] != A.shape[0]:
            raise DimensionError("observation length does not match operator output")
        self.n = A.shape[1]

    def value(self, x) -> float:
        r = self.A.apply(x) - self.b
        return 0.5 * float(r @ r)

    __call__ = value

    def grad(self, x) -> np.ndarray:
        return self.A.apply_adjoint(self.A.apply(x) - self.b)

    def atb(self) -> np.ndarray:
        return self.A.apply_adjoint(self.b)


def prox_quadratic_scaled(loss: QuadraticLoss, metric, rho: float, v,
                          tol: float = CG_TOL, max_iter: int = CG_MAX_ITER) -> np.ndarray:
    """``argmin_x 0.5 ||x - v||_H^2 + f(x) / rho``.

    Equivalently the solution of ``(A^T A + rho H) x = A^T b + rho H v``.
    Masks and diagonal forward operators with diagonal ``H`` are solved
    elementwise, circulant blurs with ``H = I`` in the Fourier domain,
    explicit matrices by a dense solve, anything else by conjugate gradient.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    metric = as_metric(metric)
    v = metric._check(v)
    A = loss.A
    rhs = loss.atb() + rho * metric.apply(v)
    if metric.is_diagonal:
        h = metric.diag
        if isinstance(A, MaskOperator):
            return rhs / (A.kept_mask + rho * h)
        if isinstance(A, IdentityOperator):
            return rhs / (1.0 + rho * h)
        if isinstance(A, DiagonalOperator):
            return rhs / (A.diag**2 + rho * h)
        if isinstance(A, CirculantOperator) and metric.is_identity:
            denom = np.abs(A.transfer) ** 2 + rho
            img = np.fft.fft2(rhs.reshape(A.image_shape)) / denom
            return np.fft.ifft2(img).real.reshape(-1)
    if isinstance(A, DenseMatrix):
        a = A.matrix
        return np.linalg.solve(a.T @ a + rho * metric.to_dense(), rhs)

    n = loss.n
    op = spla.LinearOperator(
        (n, n), matvec=lambda x: A.apply_adjoint(A.apply(x)) + rho * metric.apply(x), dtype=float
    )
    iters = [0]

    def count(_):
        iters[0] += 1

    x, info = spla.cg(op, rhs, x0=v, rtol=tol, atol=0.0, maxiter=max_iter, callback=count)
    nb = np.linalg.norm(rhs)
    res = np.linalg.norm(op.matvec(x) - rhs) / (nb if nb > 0 else 1.0)
    if info != 0 and res > tol:
        raise CGError(float(res), iters[0])
    return x


def prox_metric_transform(g_prox_euclidean: Callable[[np.ndarray], np.ndarray], metric, y) -> np.ndarray:
    """Scaled prox through a change of variables.

    If ``g_prox_euclidean`` is the ordinary proximal map of ``g o H^{-1/2}``,
    this returns the ``H``-scaled proximal map of ``g`` at ``y``:
    ``H^{-1/2} prox(H^{1/2} y)``.
    """
    metric = as_metric(metric)
    return metric.inv_sqrt_apply(g_prox_euclidean(metric.sqrt_apply(y)))


def smoothness_constant(loss: QuadraticLoss, metric) -> float:
    """Step parameter ``rho = lambda_max(A^T A) * ||H^{-1}||_2``.

    With this ``rho``, ``||H^{-1} (grad f(x) - grad f(y))||_H <= rho ||x - y||_H``.
    """
    return loss.A.gram_lambda_max() * as_metric(metric).inv_spectral_norm()
