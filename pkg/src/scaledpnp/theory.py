"""Numerical certificates for linear denoisers as scaled proximal maps.

A square ``W`` is the ``H``-scaled proximal map of a closed proper convex
``Phi`` exactly when ``H^{1/2} W H^{-1/2}`` is symmetric positive
semidefinite with largest eigenvalue at most 1. In that case

    Phi(x) = i_{R(W)}(x) + 0.5 x^T P x,

with ``P`` built from the eigendecomposition of ``H^{1/2} W H^{-1/2}``.
This module builds ``(H, P)``, evaluates ``Phi`` directly and via the
cheap identity ``Phi(W q) = 0.5 (q - W q)^T H W q``, checks Moreau's
conditions, and reproduces a small instance on which standard PnP-ADMM
with a kernel denoiser diverges.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .denoisers import KernelDenoiser, LinearDenoiser, scaling_matrix
from .linops import DenseMatrix, DiagonalOperator, IdentityOperator, power_dominant_eig, symmetric_eig
from .proximal import HMetric, QuadraticLoss, as_metric

SIM_TOL = 1e-9  # symmetry / PSD of H^{1/2} W H^{-1/2}, relative to its norm
LAMBDA_TOL = 1e-10
RANK_TOL = 1e-8
RANGE_TOL = 1e-8


class NotProximableError(ValueError):
    """``W`` fails a condition for being a scaled proximal map."""

    def __init__(self, condition: str, magnitude: float):
        super().__init__(f"{condition} (magnitude {magnitude:.3e})")
        self.condition = condition
        self.magnitude = float(magnitude)


def _dense_matrix(W) -> np.ndarray:
    if isinstance(W, LinearDenoiser):
        return W.matrix()
    if isinstance(W, DenseMatrix):
        return np.array(W.matrix)
    a = np.asarray(W, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("W must be a square matrix")
    return a


def _dense_metric(H, n) -> np.ndarray:
    if isinstance(H, HMetric):
        return H.to_dense()
    if isinstance(H, (IdentityOperator, DiagonalOperator, DenseMatrix)):
        return H.to_dense()
    h = np.asarray(H, dtype=float)
    h = np.diag(h) if h.ndim == 1 else h
    if h.shape != (n, n):
        raise ValueError("H does not match W")
    return h


@dataclass
class ProximableCertificate:
    """Data of ``Phi`` for which ``W = prox_{Phi, H}``.

    ``range_basis`` holds ``U = H^{-1/2} G_r`` (columns span ``R(W)``) and
    ``range_dual`` holds ``U^+ = G_r^T H^{1/2}``, so that
    ``W = U diag(eigenvalues) U^+``.
    """

    W: np.ndarray
    H: np.ndarray
    P: np.ndarray
    range_basis: np.ndarray
    range_dual: np.ndarray
    eigenvalues: np.ndarray  # the r nonzero eigenvalues, descending
    lambda_max: float

    @property
    def rank(self) -> int:
        return self.range_basis.shape[1]

    def metric(self) -> HMetric:
        return HMetric(self.H)

    def scaled(self, c: float) -> "ProximableCertificate":
        """The equivalent certificate ``(c H, c P)``."""
        if not c > 0:
            raise ValueError("scale must be positive")
        s = math.sqrt(c)
        return ProximableCertificate(self.W, c * self.H, c * self.P, self.range_basis / s,
                                     s * self.range_dual, self.eigenvalues, self.lambda_max)


def _sqrt_pair(H):
    lam, vec = np.linalg.eigh(H)
    if lam[0] <= 0:
        raise NotProximableError("H is not positive definite", lam[0])
    return (vec * np.sqrt(lam)) @ vec.T, (vec / np.sqrt(lam)) @ vec.T


def reversible_scaling(W, tol: float = 1e-10) -> np.ndarray:
    """Positive ``h`` (summing to 1) with ``diag(h) W`` symmetric, for a row-stochastic ``W``.

    For ``W = D^{-1} K`` this is ``diag(D) / sum(diag(D))``: the
    stationary distribution of ``W`` read as a reversible Markov chain.
    """
    W = _dense_matrix(W)
    n = W.shape[0]
    if np.abs(W.sum(axis=1) - 1.0).max() > tol:
        raise NotProximableError("no scaling matrix given and W is not row-stochastic",
                                 np.abs(W.sum(axis=1) - 1.0).max())
    _, _, vt = np.linalg.svd(W.T - np.eye(n))
    h = vt[-1]
    h = h * np.sign(h.sum())
    if np.any(h <= 0):
        raise NotProximableError("stationary vector of W is not positive", h.min())
    h = h / h.sum()
    asym = np.abs(h[:, None] * W - (h[:, None] * W).T).max()
    if asym > tol * max(np.abs(h[:, None] * W).max(), 1e-300):
        raise NotProximableError("W is not reversible: no diagonal H makes HW symmetric", asym)
    return h


def certify_proximable(W, H_hint=None) -> ProximableCertificate:
    """Build ``(H, P)`` with ``W = prox_{Phi, H}`` or refuse.

    Parameters
    ----------
    W : array, DenseMatrix or LinearDenoiser
        Small square matrix. A denoiser supplies its own scaling matrix
        when ``H_hint`` is omitted.
    H_hint : optional
        Candidate ``H`` (vector diagonal, matrix, operator or HMetric).
        Without it, a symmetric ``W`` is tried with ``H = I`` and a
        row-stochastic reversible ``W`` gets the diagonal ``H`` from
        :func:`reversible_scaling`.

    Raises
    ------
    NotProximableError
        With the violated condition and its magnitude.
    """
    if H_hint is None and isinstance(W, LinearDenoiser):
        H_hint = scaling_matrix(W)
    Wd = _dense_matrix(W)
    n = Wd.shape[0]
    if H_hint is None:
        if np.abs(Wd - Wd.T).max() <= 1e-12 * max(np.abs(Wd).max(), 1e-300):
            H_hint = np.ones(n)
        else:
            H_hint = reversible_scaling(Wd)
    H = _dense_metric(H_hint, n)
    if np.abs(H - H.T).max() > 1e-12 * np.abs(H).max():
        raise NotProximableError("H is not symmetric", np.abs(H - H.T).max())
    Hh, Hih = _sqrt_pair(0.5 * (H + H.T))

    M = Hh @ Wd @ Hih
    scale = max(np.abs(M).max(), 1e-300)
    asym = np.abs(M - M.T).max()
    if asym > SIM_TOL * scale:
        raise NotProximableError("H^{1/2} W H^{-1/2} is not symmetric", asym / scale)
    eig = symmetric_eig(0.5 * (M + M.T), rank_tol=RANK_TOL, sym_tol=np.inf)
    lam = eig.eigenvalues
    if lam.size and lam[-1] < -SIM_TOL * max(abs(lam[0]), 1.0):
        raise NotProximableError("H^{1/2} W H^{-1/2} has a negative eigenvalue", lam[-1])
    lam_max = float(lam[0]) if lam.size else 0.0
    if lam_max > 1.0 + LAMBDA_TOL:
        raise NotProximableError("lambda_max(W) exceeds 1", lam_max)

    r = eig.rank if lam_max > 0 else 0
    G = eig.eigenvectors
    Gr, lr = G[:, :r], lam[:r]
    U = Hih @ Gr
    U_dual = Gr.T @ Hh
    P = U_dual.T @ ((1.0 / lr - 1.0)[:, None] * U_dual)
    P = 0.5 * (P + P.T)

    # the proof's scaling matrix (V V^T)^{-1}, V = H^{-1/2} G, must give back H
    V = Hih @ G
    H_rec = np.linalg.inv(V @ V.T)
    err = np.abs(H_rec - H).max()
    if err > 1e-8 * np.abs(H).max():
        raise NotProximableError("eigenvectors are numerically degenerate", err)
    return ProximableCertificate(Wd, H, P, U, U_dual, lr.copy(), lam_max)


def _range_distance(cert: ProximableCertificate, x) -> float:
    if cert.rank == 0:
        return float(np.linalg.norm(x))
    Q, _ = np.linalg.qr(cert.range_basis)
    return float(np.linalg.norm(x - Q @ (Q.T @ x)))


def eval_phi_direct(cert: ProximableCertificate, x) -> float:
    """``Phi(x)``: ``+inf`` off the range of ``W``, else ``0.5 x^T P x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if _range_distance(cert, x) > RANGE_TOL * np.linalg.norm(x):
        return math.inf
    return 0.5 * float(x @ cert.P @ x)


def eval_phi_fast(metric, u, q) -> float:
    """``Phi(u) = 0.5 (q - u)^T H u`` for ``u = W q``; no eigendecomposition needed."""
    M = as_metric(metric)
    q = np.asarray(q, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    return 0.5 * M.inner(q - u, u)


@dataclass
class MoreauReport:
    max_ratio: float  # max ||W x - W y||_H / ||x - y||_H over the sampled pairs
    hw_asymmetry: float  # max |HW - (HW)^T| / max |HW|
    hw_min_eig: float  # smallest eigenvalue of sym(HW), relative to its largest magnitude
    nonexpansive: bool
    psd: bool

    @property
    def passed(self) -> bool:
        return self.nonexpansive and self.psd


def moreau_check(W, metric, trials: int = 100, seed: int = 0, tol: float = 1e-9) -> MoreauReport:
    """Moreau's conditions in the ``H`` inner product.

    ``W`` must be non-expansive in ``||.||_H`` and ``HW`` symmetric PSD (it is
    then the gradient of the convex ``y -> 0.5 <y, W y>_H``).
    """
    Wd = _dense_matrix(W)
    n = Wd.shape[0]
    M = as_metric(metric)
    rng = np.random.default_rng(seed)
    ratio = 0.0
    for _ in range(trials):
        d = rng.standard_normal(n) - rng.standard_normal(n)
        nd = M.norm(d)
        if nd > 0:
            ratio = max(ratio, M.norm(Wd @ d) / nd)
    HW = M.to_dense() @ Wd
    scale = max(np.abs(HW).max(), 1e-300)
    asym = float(np.abs(HW - HW.T).max() / scale)
    ev = np.linalg.eigvalsh(0.5 * (HW + HW.T))
    min_eig = float(ev[0] / max(np.abs(ev).max(), 1e-300))
    return MoreauReport(ratio, asym, min_eig, ratio <= 1.0 + tol, asym <= tol and min_eig >= -tol)


@dataclass
class ProxReport:
    max_error: float  # max ||x* - W y|| / (1 + ||y||)
    trials: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def verify_scaled_prox(W, cert: ProximableCertificate, trials: int = 100, seed: int = 0,
                       tol: float = 1e-8) -> ProxReport:
    """Check ``W y = argmin_{x in R(W)} ||x - y||_H^2 + x^T P x`` on random ``y``.

    The minimizer is computed independently of the certificate's
    eigenvectors: ``R(W)`` is spanned by the leading left singular vectors
    of ``W`` and the reduced strictly convex quadratic is solved directly.
    """
    Wd = _dense_matrix(W)
    n = Wd.shape[0]
    u, s, _ = np.linalg.svd(Wd)
    B = u[:, s > RANK_TOL * s[0]] if s[0] > 0 else np.zeros((n, 0))
    H, P = cert.H, cert.P
    red = B.T @ (H + P) @ B
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        y = rng.standard_normal(n)
        z = np.linalg.solve(red, B.T @ H @ y) if B.shape[1] else np.zeros(0)
        x = B @ z
        worst = max(worst, float(np.linalg.norm(x - Wd @ y) / (1.0 + np.linalg.norm(y))))
    return ProxReport(worst, trials, tol)


def real_diagonalizable(A, tol: float = 1e-8) -> bool:
    """Real spectrum and geometric multiplicity equal to algebraic for every eigenvalue."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = max(np.abs(A).max(), 1.0)
    ev = np.linalg.eigvals(A)
    if np.any(np.abs(ev.imag) > tol * scale):
        return False
    ev = np.sort(ev.real)
    clusters = np.split(ev, np.nonzero(np.diff(ev) > tol * scale)[0] + 1)
    for c in clusters:
        lam = c.mean()
        geo = n - np.linalg.matrix_rank(A - lam * np.eye(n), tol=tol * scale)
        if geo != c.size:
            return False
    return True


# counterexample -----------------------------------------------------------

@dataclass
class CounterexampleInstance:
    """Two-pixel least-squares problem with a kernel denoiser.

    Standard PnP-ADMM (``rho = 1``) with ``W = D^{-1} K`` obeys, for
    ``u_k = (z_k, nu_k)``, the affine recursion ``u_{k+1} = R S^T u_k + d``
    with residual ``x_{k+1} - z_{k+1} = T u_k + q``.
    """

    a: np.ndarray = field(default_factory=lambda: np.array([0.8295, -0.5586]))
    b: float = 1.0
    D: np.ndarray = field(default_factory=lambda: np.diag([0.3116, 0.5788]))
    K: np.ndarray = field(default_factory=lambda: np.array([[0.1102, 0.2014], [0.2014, 0.3774]]))

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        self.K = np.asarray(self.K, dtype=float)
        I = np.eye(2)
        self.W = np.linalg.solve(self.D, self.K)
        self.C = I + np.outer(self.a, self.a)
        Ci = np.linalg.inv(self.C)
        self.R = np.vstack([self.W, I - self.W])
        self.S = np.hstack([Ci, I - Ci]).T
        self.d = self.b * self.R @ Ci @ self.a
        self.T = np.hstack([(I - self.W) @ Ci, -(self.W + Ci - self.W @ Ci)])
        self.q = self.b * (I - self.W) @ Ci @ self.a

    @property
    def transition(self) -> np.ndarray:
        return self.R @ self.S.T

    def loss(self) -> QuadraticLoss:
        return QuadraticLoss(DenseMatrix(self.a[None, :]), [self.b])

    def denoiser(self) -> KernelDenoiser:
        return KernelDenoiser(self.K)

    def recursion_residuals(self, steps: int) -> np.ndarray:
        """``||T u_j + q||`` for ``j = 1..steps``, starting from ``u_1 = 0``."""
        u = np.zeros(4)
        out = np.empty(steps)
        RS = self.transition
        for j in range(steps):
            out[j] = np.linalg.norm(self.T @ u + self.q)
            u = RS @ u + self.d
        return out


class CounterexampleMismatch(RuntimeError):
    """Recursion and solver disagree: an implementation bug."""


@dataclass
class CounterexampleResult:
    k: np.ndarray
    log_residual: np.ndarray  # natural log of ||x_k - z_k||
    recursion: np.ndarray
    solver: np.ndarray
    max_rel_disagreement: float
    dominant_eigenvalue: float
    d_component: float  # coefficient of d along the dominant eigenvector
    t_v1_norm: float  # ||T v_1||
    real_diagonalizable: bool
    scaled_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def assertions_hold(self) -> bool:
        return (self.real_diagonalizable and self.dominant_eigenvalue > 1.0
                and abs(self.d_component) > 1e-12 and self.t_v1_norm > 1e-12)

    def at(self, k: int) -> float:
        return float(self.log_residual[k - 1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("k", "log_residual"))
            for k, v in zip(self.k, self.log_residual):
                w.writerow((int(k), repr(float(v))))


def run_counterexample(max_k: int = 1000, instance: Optional[CounterexampleInstance] = None,
                       rel_tol: float = 1e-8, scaled: bool = True) -> CounterexampleResult:
    """Standard PnP-ADMM divergence on the two-pixel instance.

    Row ``k`` of the table is ``log ||x_k - z_k||`` where
    ``x_k - z_k = T u_{k-1} + q`` with ``u_1 = 0``; row 1 is ``log ||q||``.
    Equivalently, row ``k >= 2`` is the residual after ``k - 1`` solver
    updates from ``z_1 = nu_1 = 0``, and row 1 repeats that of the first
    update. Both the closed-form recursion and the actual solver are run
    and compared step by step.
    """
    from .solvers import scaled_pnp_admm, standard_pnp_admm

    if max_k < 2:
        raise ValueError("max_k must be at least 2")
    inst = instance or CounterexampleInstance()
    steps = max_k - 1
    rec = inst.recursion_residuals(steps)
    _, diag = standard_pnp_admm(inst.loss(), inst.denoiser(), np.zeros(2), np.zeros(2),
                                rho=1.0, max_iter=steps, record_time=False)
    sol = np.asarray(diag.residual)
    rel = np.abs(sol - rec) / np.maximum(np.abs(rec), 1e-300)
    worst = float(rel.max())
    if worst > rel_tol:
        j = int(rel.argmax()) + 1
        raise CounterexampleMismatch(
            f"solver and recursion residuals differ by {worst:.3e} (relative) at update {j}"
        )
    log_res = np.log(np.concatenate([rec[:1], rec]))

    RS = inst.transition
    lam, v1 = power_dominant_eig(RS)
    diagonalizable = real_diagonalizable(RS)
    # component of d along v1 in the eigenbasis: left eigenvector projection
    lam_l, left = power_dominant_eig(RS.T)
    comp = float((left @ inst.d) / (left @ v1))
    tv1 = float(np.linalg.norm(inst.T @ v1))

    scaled_res = np.zeros(0)
    if scaled:
        _, sdiag = scaled_pnp_admm(inst.loss(), inst.denoiser(), np.zeros(2), np.zeros(2),
                                   rho=1.0, max_iter=steps, record_time=False)
        scaled_res = np.asarray(sdiag.residual)
    return CounterexampleResult(
        k=np.arange(1, max_k + 1), log_residual=log_res, recursion=rec, solver=sol,
        max_rel_disagreement=worst, dominant_eigenvalue=lam, d_component=comp,
        t_v1_norm=tv1, real_diagonalizable=diagonalizable, scaled_residual=scaled_res,
    )


TABLE_ROWS: List[int] = [1, 200, 400, 600, 800, 1000]
