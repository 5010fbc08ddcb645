"""Command-line entry point.

Tasks
-----
inpaint, deblur
    Degrade an image, restore it with (scaled) PnP-ADMM or PnP-FISTA and
    write ``restored.pgm``, ``degraded.pgm``, ``diagnostics.csv`` and
    ``manifest.txt`` into the output directory.
verify
    Run the proximal-map certificates on a seeded random NLM denoiser and
    print one PASS/FAIL line per property.
counterexample
    Reproduce the divergent two-pixel PnP-ADMM run; writes ``counterexample.csv``.

Settings come from an optional flat ``key=value`` file (``--config``)
overridden by command-line flags. The manifest lists every resolved
setting and can be fed back through ``--config``.

Exit status: 0 success, 1 invalid configuration, IO error or failed
verification, 2 solver abort.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import denoisers as dn
from . import theory
from .linops import NoConvergenceError
from .proximal import CGError, HMetric, QuadraticLoss
from .restoration import (
    make_deblurring,
    make_inpainting,
    make_psf,
    median_init,
    psnr,
    read_image,
    synthetic_image,
    write_pgm,
)
from .solvers import SolverAbort, scaled_pnp_admm, scaled_pnp_fista

log = logging.getLogger("scaledpnp")

TASKS = ("inpaint", "deblur", "verify", "counterexample")
SOLVERS = ("fista", "admm")
DENOISERS = ("nlm", "dsg-nlm", "2w-w2", "box", "gaussian")
PSFS = ("box", "gaussian", "motion", "file")
SCHEDULES = ("classical", "chambolle")
AUTO = "auto"


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    task: str = ""
    input: str = "synthetic"
    output: str = ""
    image_size: int = 64
    solver: str = AUTO  # admm for inpaint, fista for deblur
    scaled: bool = True
    denoiser: str = "nlm"
    rho: str = AUTO  # 1 for admm, the smoothness constant for fista
    max_iter: int = 100
    tol: str = "none"
    freeze_after: str = AUTO  # 1 for admm, 5 for fista
    schedule: str = "classical"
    momentum_a: float = 3.0
    patch_radius: int = dn.DEFAULT_PATCH_RADIUS
    window_radius: int = dn.DEFAULT_WINDOW_RADIUS
    h: float = dn.DEFAULT_H
    sinkhorn_iters: int = dn.DEFAULT_SINKHORN_ITERS
    filter_size: int = 5
    filter_sigma: float = 1.0
    psf: str = "motion"
    psf_size: str = AUTO
    psf_variance: float = 4.0
    psf_file: str = ""
    keep_fraction: float = 0.5
    sigma_w: str = AUTO  # 20/255 for inpaint, 10/255 for deblur
    median_window: int = 3
    seed: int = 0
    record_time: bool = True
    trials: int = 100
    max_k: int = 1000
    verify_size: int = 8

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kwargs = {}
        for k, raw in values.items():
            typ = known[k].type
            try:
                if typ in ("bool", bool):
                    kwargs[k] = _parse_bool(str(raw))
                elif typ in ("int", int):
                    kwargs[k] = int(raw)
                elif typ in ("float", float):
                    kwargs[k] = float(raw)
                else:
                    kwargs[k] = str(raw).strip()
            except ValueError as exc:
                raise ConfigError(f"{k}: {exc}") from None
        cfg = cls(**kwargs)
        cfg.resolve()
        cfg.validate()
        return cfg

    def resolve(self) -> None:
        """Replace ``auto`` entries by their task-dependent values."""
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {', '.join(TASKS)}")
        if self.solver == AUTO:
            self.solver = "admm" if self.task == "inpaint" else "fista"
        if self.freeze_after == AUTO:
            self.freeze_after = "1" if self.solver == "admm" else "5"
        if self.rho == AUTO and self.solver == "admm":
            self.rho = "1.0"
        if self.sigma_w == AUTO:
            self.sigma_w = repr((20.0 if self.task == "inpaint" else 10.0) / 255.0)
        if self.psf_size == AUTO and self.psf != "file":
            self.psf_size = str(make_psf(self.psf, variance=self.psf_variance).size) \
                if self.psf in PSFS else AUTO

    # typed views of the string-valued fields
    @property
    def rho_value(self) -> Optional[float]:
        return None if self.rho == AUTO else float(self.rho)

    @property
    def tol_value(self) -> Optional[float]:
        return None if self.tol.lower() == "none" else float(self.tol)

    @property
    def sigma_value(self) -> float:
        return float(self.sigma_w)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.solver in SOLVERS, f"solver must be one of {', '.join(SOLVERS)}")
        need(self.denoiser in DENOISERS, f"denoiser must be one of {', '.join(DENOISERS)}")
        need(self.psf in PSFS, f"psf must be one of {', '.join(PSFS)}")
        need(self.schedule in SCHEDULES, f"schedule must be one of {', '.join(SCHEDULES)}")
        try:
            rho = self.rho_value
            tol = self.tol_value
            sig = self.sigma_value
            fa = int(self.freeze_after)
            ps = None if self.psf_size == AUTO else int(self.psf_size)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        need(rho is None or (rho > 0 and math.isfinite(rho)), "rho must be positive")
        need(tol is None or tol > 0, "tol must be positive")
        need(sig >= 0 and math.isfinite(sig), "sigma_w must be nonnegative")
        need(fa >= 1, "freeze_after must be >= 1")
        need(ps is None or (ps >= 1 and ps % 2 == 1), "psf_size must be a positive odd integer")
        need(self.psf != "file" or self.psf_file, "psf=file needs psf_file")
        need(self.max_iter >= 1, "max_iter must be >= 1")
        need(self.momentum_a > 2, "momentum_a must exceed 2")
        need(self.window_radius >= self.patch_radius >= 0, "need window_radius >= patch_radius >= 0")
        need(self.h > 0, "h must be positive")
        need(self.sinkhorn_iters >= 1, "sinkhorn_iters must be >= 1")
        need(self.filter_size >= 1 and self.filter_size % 2 == 1, "filter_size must be odd")
        need(self.filter_sigma > 0, "filter_sigma must be positive")
        need(self.psf_variance > 0, "psf_variance must be positive")
        need(0 < self.keep_fraction < 1, "keep_fraction must lie in (0, 1)")
        need(self.median_window >= 1 and self.median_window % 2 == 1, "median_window must be odd")
        need(self.image_size >= 8, "image_size must be >= 8")
        need(self.trials >= 1, "trials must be >= 1")
        need(self.max_k >= 2, "max_k must be >= 2")
        need(self.verify_size >= 2, "verify_size must be >= 2")
        need(self.seed >= 0, "seed must be nonnegative")
        if self.task in ("inpaint", "deblur", "counterexample"):
            need(bool(self.output), "output directory is required")

    def to_manifest(self) -> str:
        lines = ["# resolved run configuration"]
        for k in self.keys():
            v = getattr(self, k)
            lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def read_config_file(path) -> Dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse would exit with status 2, which is reserved for solver aborts
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scaledpnp", description="Scaled plug-and-play restoration.")
    p.add_argument("task", nargs="?", choices=TASKS)
    p.add_argument("--config", help="key=value settings file (flags override it)")
    p.add_argument("-v", "--verbose", action="store_true")
    for k in RunConfig.keys():
        if k == "task":
            continue
        p.add_argument("--" + k.replace("_", "-"), dest=k, default=None, metavar="VALUE")
    return p


# task runners ---------------------------------------------------------------

def _denoiser_builder(cfg: RunConfig):
    pr, wr, h = cfg.patch_radius, cfg.window_radius, cfg.h
    if cfg.denoiser == "nlm":
        return lambda g: dn.build_nlm(g, pr, wr, h)
    if cfg.denoiser == "2w-w2":
        return lambda g: dn.TwoWMinusWSquared(dn.build_nlm(g, pr, wr, h))
    if cfg.denoiser == "dsg-nlm":
        return lambda g: dn.build_dsg_nlm(g, pr, wr, h, cfg.sinkhorn_iters)
    return None


def make_denoiser(cfg: RunConfig, shape):
    builder = _denoiser_builder(cfg)
    if builder is not None:
        return dn.FrozenDenoiser(builder, int(cfg.freeze_after), shape)
    if cfg.denoiser == "box":
        return dn.box_filter(cfg.filter_size, shape)
    return dn.gaussian_filter(cfg.filter_size, cfg.filter_sigma, shape)


def _load_ground_truth(cfg: RunConfig) -> np.ndarray:
    if cfg.input == "synthetic":
        return synthetic_image(cfg.image_size, seed=cfg.seed)
    return read_image(cfg.input)


def run_restoration(cfg: RunConfig, out: Path) -> int:
    gt = _load_ground_truth(cfg)
    if cfg.task == "inpaint":
        prob = make_inpainting(gt, cfg.keep_fraction, cfg.sigma_value, cfg.seed)
        x0 = median_init(prob, cfg.median_window).reshape(-1)
        degraded = prob.degraded_image()
    else:
        size = None if cfg.psf_size == AUTO else int(cfg.psf_size)
        psf = make_psf(cfg.psf, size, cfg.psf_variance, path=cfg.psf_file or None)
        prob = make_deblurring(gt, psf, cfg.sigma_value, cfg.seed)
        x0 = prob.b.copy()
        degraded = prob.b.reshape(gt.shape)
    loss = QuadraticLoss(prob.A, prob.b)
    den = make_denoiser(cfg, gt.shape)
    metric = None if cfg.scaled else HMetric.identity(loss.n)
    common = dict(metric=metric, max_iter=cfg.max_iter, tol=cfg.tol_value, reference=gt,
                  record_time=cfg.record_time)
    if cfg.solver == "admm":
        x, diag = scaled_pnp_admm(loss, den, x0, rho=cfg.rho_value, **common)
    else:
        x, diag = scaled_pnp_fista(loss, den, x0, rho=cfg.rho_value, schedule=cfg.schedule,
                                   a=cfg.momentum_a, **common)
    restored = x.reshape(gt.shape)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "restored.pgm", restored)
    write_pgm(out / "degraded.pgm", degraded)
    diag.to_csv(out / "diagnostics.csv")
    (out / "manifest.txt").write_text(cfg.to_manifest())
    init_psnr = psnr(x0, gt)
    print(f"{cfg.task}: {'scaled' if cfg.scaled else 'standard'} {cfg.solver} with {cfg.denoiser}, "
          f"{len(diag)} iterations")
    print(f"PSNR initial {init_psnr:.2f} dB -> restored {psnr(restored, gt):.2f} dB")
    print(f"final residual {diag.residual[-1]:.3e}")
    for w in diag.warnings:
        print(f"warning: {w}")
    return 0


def _verify_lines(cfg: RunConfig):
    """(name, passed, detail) for the certificate properties of a random NLM denoiser."""
    rng = np.random.default_rng(cfg.seed)
    s = cfg.verify_size
    # low-contrast guide so that off-diagonal weights are not negligible
    guide = 0.4 + 0.2 * rng.random((s, s))
    d = dn.build_nlm(guide, 1, 2, cfg.h)
    W = d.matrix()
    D = d.row_sums
    out = []
    out.append(("row-stochastic", np.abs(W.sum(1) - 1).max() <= 1e-12,
                f"max |W1 - 1| = {np.abs(W.sum(1) - 1).max():.2e}"))
    Dh = np.sqrt(D)
    M = Dh[:, None] * W / Dh[None, :]
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    asym = np.abs(M - M.T).max()
    out.append(("similarity D^1/2 W D^-1/2 symmetric PSD", asym <= 1e-10 and ev[0] >= -1e-10,
                f"asym {asym:.2e}, min eig {ev[0]:.2e}"))
    try:
        cert = theory.certify_proximable(d)
    except theory.NotProximableError as exc:
        out.append(("certify_proximable", False, str(exc)))
        return out
    out.append(("certify_proximable", True, f"rank {cert.rank}, lambda_max {cert.lambda_max:.12f}"))
    herr = np.abs(np.diag(cert.H) - D).max() / D.max()
    out.append(("recovered H equals D", herr <= 1e-12, f"rel err {herr:.2e}"))
    pev = np.linalg.eigvalsh(cert.P)
    out.append(("P symmetric PSD", pev[0] >= -1e-9 * max(1.0, pev[-1]), f"min eig {pev[0]:.2e}"))
    rep = theory.verify_scaled_prox(W, cert, cfg.trials, cfg.seed)
    out.append(("W y = prox_{Phi,H}(y)", rep.passed, f"max err {rep.max_error:.2e}"))
    for c in (0.5, 2.0):
        r = theory.verify_scaled_prox(W, cert.scaled(c), cfg.trials, cfg.seed)
        out.append((f"scale freedom c={c}", r.passed, f"max err {r.max_error:.2e}"))
    mo = theory.moreau_check(W, cert.H, cfg.trials, cfg.seed)
    out.append(("Moreau: H-nonexpansive", mo.nonexpansive, f"max ratio {mo.max_ratio:.12f}"))
    out.append(("Moreau: HW symmetric PSD", mo.psd,
                f"asym {mo.hw_asymmetry:.2e}, min eig {mo.hw_min_eig:.2e}"))
    worst = 0.0
    metric = HMetric(D)
    for _ in range(cfg.trials):
        q = rng.standard_normal(W.shape[0])
        u = W @ q
        fast = theory.eval_phi_fast(metric, u, q)
        direct = theory.eval_phi_direct(cert, u)
        worst = max(worst, abs(fast - direct) / max(abs(direct), 1e-300))
    out.append(("Phi(Wq) fast identity", worst <= 1e-9, f"max rel err {worst:.2e}"))
    return out


def run_verify(cfg: RunConfig) -> int:
    lines = _verify_lines(cfg)
    for name, ok, detail in lines:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in lines) else 1


def run_counterexample_task(cfg: RunConfig, out: Path) -> int:
    res = theory.run_counterexample(cfg.max_k)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "counterexample.csv")
    print("# log_residual is the natural logarithm of ||x_k - z_k||_2")
    print("# standard PnP-ADMM, rho = 1, z_1 = nu_1 = 0")
    for k in theory.TABLE_ROWS:
        if k <= cfg.max_k:
            print(f"k={k:5d}  log_residual={res.at(k): .4f}")
    print(f"solver vs recursion max relative disagreement {res.max_rel_disagreement:.2e}")
    print(f"dominant eigenvalue of R S^T {res.dominant_eigenvalue:.6f}")
    if res.scaled_residual.size:
        print(f"scaled PnP-ADMM final residual {res.scaled_residual[-1]:.3e}")
    return 0


def run(cfg: RunConfig) -> int:
    if cfg.task == "verify":
        return run_verify(cfg)
    out = Path(cfg.output)
    if cfg.task == "counterexample":
        return run_counterexample_task(cfg, out)
    return run_restoration(cfg, out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = read_config_file(args.config) if args.config else {}
        for k in RunConfig.keys():
            v = getattr(args, k, None)
            if v is not None:
                values[k] = v
        if args.task is not None:
            values["task"] = args.task
        cfg = RunConfig.from_mapping(values)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return run(cfg)
    except (SolverAbort, CGError, NoConvergenceError, dn.SinkhornError) as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
