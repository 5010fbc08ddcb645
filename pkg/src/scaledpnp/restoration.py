"""Forward models, degradations, initialization and image quality."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linops import CirculantOperator, LinearOperator, MaskOperator

DEFAULT_MEDIAN_WINDOW = 3


@dataclass
class RestorationProblem:
    """Observation ``b = A xi + w`` with ``w`` white Gaussian of std ``sigma_w``."""

    A: LinearOperator
    b: np.ndarray
    sigma_w: float
    image_shape: Tuple[int, int]
    ground_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.b.shape[0] != self.A.shape[0]:
            raise ValueError("observation length does not match operator output")
        if self.sigma_w < 0:
            raise ValueError("sigma_w must be nonnegative")

    def degraded_image(self) -> np.ndarray:
        """``A^T b`` as an image (zeros at missing pixels for inpainting)."""
        return self.A.apply_adjoint(self.b).reshape(self.image_shape)


@dataclass(frozen=True)
class Psf:
    kind: str  # box | gaussian | motion | file
    size: int
    variance: float = 0.0
    kernel: Optional[np.ndarray] = None

    def array(self) -> np.ndarray:
        if self.kind == "file":
            k = np.asarray(self.kernel, dtype=float)
        elif self.kind == "box":
            k = np.ones((self.size, self.size))
        elif self.kind == "gaussian":
            t = np.arange(self.size) - (self.size - 1) / 2
            g = np.exp(-(t**2) / (2.0 * self.variance))
            k = np.outer(g, g)
        elif self.kind == "motion":
            k = np.zeros((self.size, self.size))
            k[self.size // 2, :] = 1.0
        elif self.kind == "delta":
            k = np.zeros((self.size, self.size))
            k[self.size // 2, self.size // 2] = 1.0
        else:
            raise ValueError(f"unknown PSF kind {self.kind!r}")
        if np.any(k < 0) or k.sum() <= 0:
            raise ValueError("PSF entries must be nonnegative with positive sum")
        return k / k.sum()


def make_psf(kind: str, size: Optional[int] = None, variance: float = 4.0, path=None) -> Psf:
    """PSF presets: box 9x9, Gaussian of variance 4 on a 13x13 support, horizontal motion of length 11."""
    if kind == "file":
        k = np.loadtxt(path, ndmin=2)
        return Psf("file", k.shape[0], kernel=k)
    if size is None:
        size = {"box": 9, "gaussian": 2 * math.ceil(3 * math.sqrt(variance)) + 1,
                "motion": 11, "delta": 1}.get(kind, 0)
    if size < 1 or size % 2 == 0:
        raise ValueError("PSF size must be a positive odd integer")
    if kind == "gaussian" and not variance > 0:
        raise ValueError("Gaussian PSF needs a positive variance")
    return Psf(kind, int(size), float(variance))


def _noise(shape, sigma_w, seed):
    rng = np.random.default_rng(seed)
    return sigma_w * rng.standard_normal(shape)


def make_inpainting(gt, keep_fraction: float, sigma_w: float, rng_seed=0) -> RestorationProblem:
    """Keep a uniformly random subset of ``round(keep_fraction * n)`` pixels, then add noise."""
    gt = np.asarray(gt, dtype=float)
    if not 0 < keep_fraction < 1:
        raise ValueError("keep_fraction must lie in (0, 1)")
    n = gt.size
    m = int(round(keep_fraction * n))
    if m == 0:
        raise ValueError("mask keeps no pixels")
    if m >= n:
        raise ValueError("keep_fraction rounds to every pixel for this image size")
    rng = np.random.default_rng(rng_seed)
    kept = np.sort(rng.choice(n, size=m, replace=False))
    A = MaskOperator(kept, n, image_shape=gt.shape)
    b = A.apply(gt.reshape(-1)) + sigma_w * rng.standard_normal(m)
    return RestorationProblem(A, b, sigma_w, gt.shape, gt.copy())


def make_deblurring(gt, psf: Psf, sigma_w: float, rng_seed=0) -> RestorationProblem:
    gt = np.asarray(gt, dtype=float)
    A = CirculantOperator(psf.array(), gt.shape)
    b = A.apply(gt.reshape(-1)) + _noise(gt.size, sigma_w, rng_seed)
    return RestorationProblem(A, b, sigma_w, gt.shape, gt.copy())


def masked_median(image, known, window: int = DEFAULT_MEDIAN_WINDOW) -> np.ndarray:
    """Median over the known pixels of each ``window x window`` neighbourhood.

    Borders are mirrored. Pixels whose window contains no known pixel are
    filled by repeating with a window larger by 2 until none remain.
    """
    img = np.asarray(image, dtype=float)
    known = np.asarray(known, dtype=bool).reshape(img.shape)
    if window < 1 or window % 2 == 0:
        raise ValueError("median window must be a positive odd integer")
    out = np.full(img.shape, np.nan)
    todo = np.ones(img.shape, dtype=bool)
    w = window
    vals = np.where(known, img, np.nan)
    while todo.any():
        r = w // 2
        padded = np.pad(vals, r, mode="symmetric")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            med = np.nanmedian(sliding_window_view(padded, (w, w)), axis=(-2, -1))
        fill = todo & ~np.isnan(med)
        out[fill] = med[fill]
        todo &= ~fill
        if w > 2 * max(img.shape) + 1:
            out[todo] = 0.0
            break
        w += 2
    return out


def median_init(problem: RestorationProblem, window: int = DEFAULT_MEDIAN_WINDOW) -> np.ndarray:
    """Median-filtered ``A^T b`` for an inpainting problem; missing pixels are ignored."""
    A = problem.A
    if not isinstance(A, MaskOperator):
        raise TypeError("median_init applies to inpainting (mask) problems")
    return masked_median(problem.degraded_image(), A.kept_mask.reshape(problem.image_shape), window)


def psnr(x, ref) -> float:
    """``10 log10(1 / MSE)`` for intensities in [0, 1]; ``inf`` for identical images."""
    x = np.asarray(x, dtype=float).reshape(-1)
    ref = np.asarray(ref, dtype=float).reshape(-1)
    if x.shape != ref.shape:
        raise ValueError("images differ in size")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def synthetic_image(size: int = 64, seed: int = 0) -> np.ndarray:
    """Deterministic piecewise-smooth test image in [0, 1].

    A shaded background with a disc, a ramped rectangle, a thin oblique bar
    and a band of low-frequency waves. Texture frequencies are kept low
    (at most 3 cycles across the image) so that moderate blurs do not
    annihilate it outright.
    """
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = 0.25 + 0.35 * x
    img = np.where((x - 0.3) ** 2 + (y - 0.35) ** 2 < 0.04, 0.85, img)
    img = np.where((np.abs(x - 0.72) < 0.14) & (np.abs(y - 0.7) < 0.2), 0.1 + 0.3 * y, img)
    img = np.where(np.abs((x - 0.2) - 0.8 * (y - 0.75)) < 0.03, 0.95, img)
    waves = 0.15 * np.sin(2 * np.pi * 3 * x) * np.cos(2 * np.pi * 2 * y)
    img = np.where(y > 0.82, 0.5 + waves, img)
    rng = np.random.default_rng(seed)
    img = img + 0.01 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


# image IO ---------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    (w, h, maxval), pos = _pgm_tokens(data, 3)
    if magic == b"P2":
        vals = np.array(data[pos - 1:].split(), dtype=float)[: w * h]
    else:
        dtype = ">u2" if maxval > 255 else "u1"
        vals = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(float)
    if vals.size != w * h:
        raise ValueError(f"{path}: truncated PGM data")
    return vals.reshape(h, w) / maxval


def write_pgm(path, image) -> None:
    """Binary 8-bit PGM; values are clipped to [0, 1] and rounded."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    u8 = np.round(img * 255.0).astype(np.uint8)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.tobytes())


def read_image(path) -> np.ndarray:
    """Grayscale image in [0, 1] from PGM (P2/P5) or PNG."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=float) / 65535.0
        else:
            arr = np.asarray(im.convert("L"), dtype=float) / 255.0
    return arr
