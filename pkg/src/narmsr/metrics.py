"""PSNR / SSIM on the luminance channel and dataset-level aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .imagecore import InvalidInputError, crop_border, list_images, read_image, to_luminance

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


def _prepare(a, b, crop: int) -> tuple[np.ndarray, np.ndarray]:
    a = to_luminance(np.asarray(a, dtype=np.float64))
    b = to_luminance(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return crop_border(a, crop) * 255.0, crop_border(b, crop) * 255.0


def psnr(a: np.ndarray, b: np.ndarray, crop: int = 0) -> float:
    """PSNR in dB of the [0,255]-scaled Y channels; ``inf`` for identical images."""
    a, b = _prepare(a, b, crop)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(255.0**2 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM over every full 11x11 Gaussian window of two [0,255] planes."""
    win = _gaussian_window()

    def filt(z):
        return signal.convolve2d(z, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, crop: int = 0) -> float:
    """Mean SSIM of the Y channels (Gaussian window 11x11, sigma 1.5)."""
    a, b = _prepare(a, b, crop)
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidInputError(f"image of shape {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    if np.array_equal(a, b):
        return 1.0
    return float(np.mean(ssim_map(a, b)))


@dataclass
class MetricReport:
    per_image: list[tuple[str, float, float]] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def mean_psnr_db(self) -> float:
        vals = [min(p, PSNR_CAP) for _, p, _ in self.per_image]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_ssim(self) -> float:
        vals = [s for _, _, s in self.per_image]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def complete(self) -> bool:
        return bool(self.per_image) and not self.missing

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "psnr_db", "ssim"])
        for name, p, s in self.per_image:
            writer.writerow([name, f"{min(p, PSNR_CAP):.6f}", f"{s:.6f}"])
        writer.writerow(["MEAN", f"{self.mean_psnr_db:.6f}", f"{self.mean_ssim:.6f}"])
        return buf.getvalue()


def evaluate_pair(sr_path, gt_path, crop: int) -> tuple[float, float]:
    sr, gt = read_image(sr_path), read_image(gt_path)
    return psnr(sr, gt, crop), ssim(sr, gt, crop)


def evaluate_dataset(sr_dir, gt_dir, crop: int = 0) -> MetricReport:
    """Pair files by stem and score each pair; unmatched names go to ``missing``."""
    sr = {p.stem: p for p in list_images(sr_dir)}
    gt = {p.stem: p for p in list_images(gt_dir)}
    report = MetricReport()
    report.missing = sorted(set(sr) ^ set(gt))
    for name in sorted(set(sr) & set(gt)):
        p, s = evaluate_pair(sr[name], gt[name], crop)
        report.per_image.append((name, p, s))
    return report


def write_report_csv(path, report: MetricReport) -> None:
    Path(path).write_text(report.to_csv())
