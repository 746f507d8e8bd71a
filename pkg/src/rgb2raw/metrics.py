"""Reconstruction quality metrics and the 3x3 patch-grid evaluation harness.

PSNR and SSIM operate on [0, 1] data. SSIM uses the canonical constants
(11-tap Gaussian window, sigma 1.5, K1 0.01, K2 0.03, dynamic range 1) with
'valid' windowing, evaluated per channel and averaged. Identical inputs give
an infinite PSNR; such patches are excluded from aggregate means and counted
in the report.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .bayer import normalize_raw
from .dataio import DatasetManifest, read_raw, read_rgb_png
from .sampling import SamplerSpec, make_denoise_fn, run_sampler
from .schedule import VarianceSchedule

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """-10 log10(MSE) for [0, 1] inputs; np.inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return np.inf
    return float(-10.0 * np.log10(mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    def filt(img):
        return convolve2d(img, window, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM; channels (leading axis, if any) scored independently."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.shape[-2] < SSIM_WINDOW or a.shape[-1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}-tap window")
    return float(np.mean([_ssim_single(ca, cb) for ca, cb in zip(a, b)]))


@dataclass
class PatchResult:
    image_index: int
    row: int
    col: int
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    sampler: dict
    seed: int
    grid: dict
    patches: list = field(default_factory=list)
    per_image: list = field(default_factory=list)
    psnr_mean: float = float("nan")
    psnr_std: float = float("nan")
    ssim_mean: float = float("nan")
    ssim_std: float = float("nan")
    n_patches: int = 0
    n_inf_excluded: int = 0

    def finalize(self):
        self.n_patches = len(self.patches)
        finite = [p.psnr for p in self.patches if np.isfinite(p.psnr)]
        self.n_inf_excluded = self.n_patches - len(finite)
        if self.n_inf_excluded:
            warnings.warn(
                f"{self.n_inf_excluded} patches had zero error (infinite PSNR); "
                "excluded from aggregate means"
            )
        if finite:
            self.psnr_mean = float(np.mean(finite))
            self.psnr_std = float(np.std(finite))
        ssims = [p.ssim for p in self.patches]
        self.ssim_mean = float(np.mean(ssims))
        self.ssim_std = float(np.std(ssims))
        by_image = {}
        for p in self.patches:
            by_image.setdefault(p.image_index, []).append(p)
        self.per_image = [
            {
                "image_index": idx,
                "psnr_mean": float(np.mean([q.psnr for q in ps if np.isfinite(q.psnr)] or [np.inf])),
                "ssim_mean": float(np.mean([q.ssim for q in ps])),
                "n_patches": len(ps),
            }
            for idx, ps in sorted(by_image.items())
        ]
        return self

    def to_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "seed": self.seed,
            "grid": self.grid,
            "aggregate": {
                "psnr_mean": self.psnr_mean,
                "psnr_std": self.psnr_std,
                "ssim_mean": self.ssim_mean,
                "ssim_std": self.ssim_std,
                "n_patches": self.n_patches,
                "n_inf_excluded": self.n_inf_excluded,
            },
            "per_image": self.per_image,
        }

    def save(self, report_path, table_path=None):
        Path(report_path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        if table_path is not None:
            with open(table_path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["image_index", "row", "col", "psnr", "ssim"])
                for p in self.patches:
                    writer.writerow([p.image_index, p.row, p.col, f"{p.psnr:.6f}", f"{p.ssim:.6f}"])


def grid_cells(h: int, w: int, grid: int = 3, divisor: int = 1):
    """Top-left anchored grid of floor(h/grid) x floor(w/grid) cells.

    Residual rows/cols are dropped. When the cell size is not divisible by
    `divisor` (network ladder constraint) it is shrunk to the nearest multiple.
    """
    cell_h = (h // grid) // divisor * divisor
    cell_w = (w // grid) // divisor * divisor
    if cell_h < 1 or cell_w < 1:
        raise ValueError(f"image {h}x{w} too small for a {grid}x{grid} grid (divisor {divisor})")
    return cell_h, cell_w, [(r, c) for r in range(grid) for c in range(grid)]


def patch_grid_eval(
    model,
    manifest: DatasetManifest,
    schedule: VarianceSchedule,
    sampler: SamplerSpec,
    seed: int = 0,
    grid: int = 3,
    oracle: bool = False,
) -> EvalReport:
    """Score RAW generation patch-wise on a regular grid over every test image.

    Each cell is generated independently, conditioned on the matching RGB
    crop, and compared to the ground-truth RAW on the [0, 1] scale. With
    oracle=True the sampler is bypassed and the ground truth is scored against
    itself (upper-bound/self-test mode).
    """
    divisor = 1 if oracle else (1 << (model.cfg.levels - 1))
    report = EvalReport(sampler=sampler.to_dict(), seed=seed, grid={})
    root_seq = np.random.SeedSequence(seed)

    for idx in range(len(manifest)):
        raw = read_raw(manifest.raw_file(idx))
        rgb = read_rgb_png(manifest.rgb_file(idx))
        raw_n = normalize_raw(raw)
        rgb_n = (rgb.planes.astype(np.float64) * 2.0 - 1.0).astype(np.float32)
        h, w = raw_n.shape[1:]
        try:
            cell_h, cell_w, cells = grid_cells(h, w, grid, divisor)
            if min(cell_h, cell_w) < SSIM_WINDOW:
                raise ValueError(
                    f"grid cells {cell_h}x{cell_w} smaller than the SSIM window"
                )
        except ValueError as e:
            warnings.warn(f"skipping image {idx}: {e}")
            continue
        report.grid = {"rows": grid, "cols": grid, "cell_h": cell_h, "cell_w": cell_w}

        for (r, c), child in zip(cells, root_seq.spawn(len(cells))):
            y0, x0 = r * cell_h, c * cell_w
            gt = raw_n[:, y0:y0 + cell_h, x0:x0 + cell_w]
            if oracle:
                gen = gt.astype(np.float64)
            else:
                rgb_patch = rgb_n[None, :, 2 * y0:2 * (y0 + cell_h), 2 * x0:2 * (x0 + cell_w)]
                denoise_fn = make_denoise_fn(model, rgb_patch, schedule)
                rng = np.random.default_rng(child)
                gen = run_sampler(denoise_fn, (1,) + gt.shape, schedule, sampler, rng)[0]
            gen01 = np.clip((gen + 1.0) / 2.0, 0.0, 1.0)
            gt01 = (gt.astype(np.float64) + 1.0) / 2.0
            report.patches.append(
                PatchResult(idx, r, c, psnr(gen01, gt01), ssim(gen01, gt01))
            )
    return report.finalize()
