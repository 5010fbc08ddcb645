"""Scaled and standard PnP-FISTA / PnP-ADMM.

The scaled variants measure distances in the metric of the denoiser's
scaling matrix ``H``: the FISTA gradient step is preconditioned by
``H^{-1}`` and the ADMM x-update is the ``H``-scaled proximal map of the
loss. With ``H = I`` both reduce to the standard algorithms, and the
standard entry points are implemented exactly that way.

Diagnostics rows are numbered by update count: row ``k`` of a FISTA run
holds ``x_k`` (``x_1`` is the first denoised iterate); row ``k`` of an ADMM
run holds the iterates produced by the ``k``-th update from
``(z_k, nu_k)``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .denoisers import LinearDenoiser, scaling_matrix
from .proximal import HMetric, QuadraticLoss, as_metric, prox_quadratic_scaled, smoothness_constant
from .restoration import psnr

log = logging.getLogger(__name__)

CSV_COLUMNS = ("k", "objective", "residual", "psnr", "time_ms")


class SolverAbort(RuntimeError):
    """A non-finite iterate appeared."""

    def __init__(self, iteration: int, what: str = "iterate"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class FistaState:
    k: int
    t: float
    x: np.ndarray
    x_prev: np.ndarray
    y: np.ndarray
    q: np.ndarray  # denoiser input that produced x
    rho: float


@dataclass
class AdmmState:
    k: int
    x: np.ndarray
    z: np.ndarray
    nu: np.ndarray
    rho: float
    q: np.ndarray  # denoiser input that produced z


@dataclass
class Diagnostics:
    """Per-iteration records. ``objective`` is NaN until the denoiser is frozen."""

    k: List[int] = field(default_factory=list)
    objective: List[float] = field(default_factory=list)
    residual: List[float] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    time_ms: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    final_state: object = None

    def record(self, k, objective, residual, psnr_db, time_ms):
        self.k.append(int(k))
        self.objective.append(float(objective))
        self.residual.append(float(residual))
        self.psnr.append(float(psnr_db))
        self.time_ms.append(float(time_ms))

    def warn(self, msg: str):
        if msg not in self.warnings:
            self.warnings.append(msg)
            log.warning(msg)

    def __len__(self):
        return len(self.k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in zip(self.k, self.objective, self.residual, self.psnr, self.time_ms):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


class _MetricTracker:
    """Resolves ``H`` and ``rho`` each iteration while the denoiser may still change."""

    def __init__(self, loss, denoiser, metric, rho, diag: Diagnostics, check_smooth: bool):
        self.loss = loss
        self.denoiser = denoiser
        self.fixed = as_metric(metric) if metric is not None else None
        self.rho = rho
        self.diag = diag
        self.check_smooth = check_smooth
        self._cached = None

    def resolve(self, guide):
        d = self.denoiser
        if hasattr(d, "refresh"):
            d.refresh(guide)
        if self._cached is not None:
            return self._cached
        M = self.fixed if self.fixed is not None else HMetric(scaling_matrix(d))
        rho = self.rho
        if self.check_smooth:
            certified = smoothness_constant(self.loss, M)
            if rho is None:
                rho = certified
            elif rho < certified * (1 - 1e-12):
                self.diag.warn(f"rho={rho:g} is below the certified smoothness constant {certified:g}")
        if d.is_frozen:
            self._cached = (M, rho)
        return M, rho


def _objective(loss, M, rho, x, u, q):
    # f(x) + g(u), g = rho * Phi, Phi(W q) = 0.5 (q - W q)^T H W q
    return loss.value(x) + rho * 0.5 * M.inner(q - u, u)


def _psnr(reference, u):
    return psnr(u, reference) if reference is not None else math.nan


def scaled_pnp_fista(
    loss: QuadraticLoss,
    denoiser: LinearDenoiser,
    x0,
    rho: Optional[float] = None,
    metric=None,
    max_iter: int = 100,
    schedule: str = "classical",
    a: float = 3.0,
    tol: Optional[float] = None,
    reference=None,
    callback: Optional[Callable[[FistaState], None]] = None,
    record_time: bool = True,
):
    """Scaled PnP-FISTA.

    Parameters
    ----------
    loss : QuadraticLoss
    denoiser : LinearDenoiser
        Refreshed with ``y_k`` each iteration if it has a ``refresh`` method.
    x0 : array
        Starting point; ``x_1 = W(x0 - rho^{-1} H^{-1} grad f(x0))``.
    rho : float, optional
        Step parameter. ``None`` uses :func:`smoothness_constant` for the
        current metric. Values below it are allowed but logged.
    metric : optional
        Fixed ``H``. ``None`` follows ``scaling_matrix(denoiser)``.
    schedule : {"classical", "chambolle"}
        Momentum rule; ``"chambolle"`` uses ``t_{k+1} = 1 + k / a`` with ``a > 2``.
    tol : float, optional
        Stop once ``||x_{k+1} - x_k||`` drops below it.

    Returns
    -------
    x : ndarray
        Final iterate.
    diagnostics : Diagnostics
    """
    if schedule not in ("classical", "chambolle"):
        raise ValueError(f"unknown momentum schedule {schedule!r}")
    if schedule == "chambolle" and not a > 2:
        raise ValueError("chambolle schedule needs a > 2")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    diag = Diagnostics()
    tracker = _MetricTracker(loss, denoiser, metric, rho, diag, check_smooth=True)
    clock = time.perf_counter

    def update(y):
        M, r = tracker.resolve(y)
        q = y - M.solve(loss.grad(y)) / r
        return denoiser.apply(q), q, M, r

    t0 = clock()
    x_prev = np.asarray(x0, dtype=float).reshape(-1).copy()
    y = x_prev
    x, q, M, r = update(x_prev)
    t = 1.0
    k = 1
    while True:
        if not np.all(np.isfinite(x)):
            raise SolverAbort(k)
        obj = _objective(loss, M, r, x, x, q) if denoiser.is_frozen else math.nan
        res = float(np.linalg.norm(x - x_prev))
        elapsed = (clock() - t0) * 1e3 if record_time else 0.0
        diag.record(k, obj, res, _psnr(reference, x), elapsed)
        state = FistaState(k, t, x, x_prev, y, q, r)
        if callback is not None:
            callback(state)
        if k >= max_iter or (tol is not None and k > 1 and res < tol):
            break
        t0 = clock()
        if schedule == "classical":
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        else:
            t_next = 1.0 + k / a
        y = x + ((t - 1.0) / t_next) * (x - x_prev)
        x_new, q, M, r = update(y)
        x_prev, x, t = x, x_new, t_next
        k += 1
    diag.final_state = state
    return x, diag


def scaled_pnp_admm(
    loss: QuadraticLoss,
    denoiser: LinearDenoiser,
    z1,
    nu1=None,
    rho: float = 1.0,
    metric=None,
    max_iter: int = 100,
    tol: Optional[float] = None,
    reference=None,
    callback: Optional[Callable[[AdmmState], None]] = None,
    record_time: bool = True,
):
    """Scaled PnP-ADMM.

    Each iteration refreshes the denoiser with ``z_k`` (if it has a
    ``refresh`` method), then

    - ``x <- prox_{f/rho, H}(z - nu / rho)``
    - ``z <- W (x + nu / rho)``
    - ``nu <- nu + rho (x - z)``

    Returns the final ``z`` and the :class:`Diagnostics`; the residual column
    is ``||x_k - z_k||``. ``tol`` stops early once the residual is below it.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    diag = Diagnostics()
    tracker = _MetricTracker(loss, denoiser, metric, rho, diag, check_smooth=False)
    clock = time.perf_counter
    z = np.asarray(z1, dtype=float).reshape(-1).copy()
    nu = np.zeros_like(z) if nu1 is None else np.asarray(nu1, dtype=float).reshape(-1).copy()
    state = None
    for k in range(1, max_iter + 1):
        t0 = clock()
        M, _ = tracker.resolve(z)
        x = prox_quadratic_scaled(loss, M, rho, z - nu / rho)
        q = x + nu / rho
        z = denoiser.apply(q)
        nu = nu + rho * (x - z)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and np.all(np.isfinite(nu))):
            raise SolverAbort(k)
        obj = _objective(loss, M, rho, x, z, q) if denoiser.is_frozen else math.nan
        res = float(np.linalg.norm(x - z))
        elapsed = (clock() - t0) * 1e3 if record_time else 0.0
        diag.record(k, obj, res, _psnr(reference, z), elapsed)
        state = AdmmState(k, x, z, nu, rho, q)
        if callback is not None:
            callback(state)
        if tol is not None and res < tol:
            break
    diag.final_state = state
    return z, diag


def standard_pnp_fista(loss, denoiser, x0, **kwargs):
    """PnP-FISTA with the Euclidean metric (``H = I``)."""
    return scaled_pnp_fista(loss, denoiser, x0, metric=HMetric.identity(loss.n), **kwargs)


def standard_pnp_admm(loss, denoiser, z1, nu1=None, **kwargs):
    """PnP-ADMM with the Euclidean metric (``H = I``)."""
    return scaled_pnp_admm(loss, denoiser, z1, nu1, metric=HMetric.identity(loss.n), **kwargs)
