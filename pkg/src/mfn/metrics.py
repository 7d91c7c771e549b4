"""Image-quality metrics, mask-ratio bucketing, and evaluation tables.

Conventions (also printed in table headers): metric inputs are float
arrays in [0, 1]; PSNR uses peak 1.0 and is capped at 100 dB; SSIM is
single-scale on Rec.601 luma with an 11x11 Gaussian window; MAE is on
the [0, 1] scale while RMSE is reported on the 0-255 scale.  The
perceptual-distance column is a proxy built from the frozen random
extractor, not a pretrained LPIPS network.
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .errors import DataError, UsageError

PSNR_CAP = 100.0

MASK_RATIO_BUCKETS = (
    ("0-10%", 0.0, 0.1),
    ("10-20%", 0.1, 0.2),
    ("20-30%", 0.2, 0.3),
    ("30-40%", 0.3, 0.4),
    ("40-50%", 0.4, 0.5),
    ("50-60%", 0.5, 0.6),
)
OUT_OF_RANGE = "out-of-range"


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; identical
    inputs hit the 100 dB cap."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def mae(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    """Root mean square error reported on the 0-255 scale."""
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)) * 255.0)


def to_gray(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma for (H, W, 3) input; (H, W) passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    raise UsageError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local structural similarity over valid window positions."""
    x = to_gray(a)
    y = to_gray(b)
    if x.shape != y.shape:
        raise UsageError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window_size:
        raise UsageError(
            f"image {x.shape} smaller than the {window_size}x{window_size} window")
    w = gaussian_window(window_size, sigma)
    c1 = k1 ** 2  # peak fixed at 1.0
    c2 = k2 ** 2

    def filt(img):
        return fftconvolve(img, w, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def bucket_label(ratio: float) -> str:
    """Bucket for a hole ratio: six upper-inclusive intervals covering
    (0, 0.6]; everything else (including ratio 0) is out-of-range."""
    for label, lo, hi in MASK_RATIO_BUCKETS:
        if lo < ratio <= hi:
            return label
    return OUT_OF_RANGE


def bucket_by_mask_ratio(samples, ratio_of=None) -> "OrderedDict[str, list]":
    """Stable partition of samples into the six mask-ratio buckets plus
    an out-of-range group (never silently dropped)."""
    if ratio_of is None:
        ratio_of = lambda s: s.hole_ratio
    groups: OrderedDict[str, list] = OrderedDict(
        (label, []) for label, _, _ in MASK_RATIO_BUCKETS)
    groups[OUT_OF_RANGE] = []
    for sample in samples:
        groups[bucket_label(float(ratio_of(sample)))].append(sample)
    return groups


@dataclass
class MetricRow:
    bucket: str
    count: int
    psnr: float | None = None
    ssim: float | None = None
    mae: float | None = None
    rmse: float | None = None
    lpips_proxy: float | None = None


@dataclass
class EvalSample:
    """One test pair: ground truth in [0, 1] and its binary hole mask."""

    gt: np.ndarray          # (H, W, 3) float in [0, 1]
    mask: np.ndarray        # (H, W) in {0, 1}
    name: str = ""

    @property
    def hole_ratio(self) -> float:
        return float(np.asarray(self.mask).sum()) / np.asarray(self.mask).size


def feature_distance(a: np.ndarray, b: np.ndarray, extractor) -> float:
    """Perceptual-distance proxy: mean squared distance between
    channel-normalized features of a frozen extractor."""
    import torch

    def feats(img):
        t = torch.from_numpy(np.asarray(img, dtype=np.float32) * 2.0 - 1.0)
        t = t.permute(2, 0, 1).unsqueeze(0)
        with torch.no_grad():
            return extractor(t)

    total = 0.0
    fa, fb = feats(a), feats(b)
    for x, y in zip(fa, fb):
        xn = x / x.norm(dim=1, keepdim=True).clamp_min(1e-8)
        yn = y / y.norm(dim=1, keepdim=True).clamp_min(1e-8)
        total += float(((xn - yn) ** 2).mean())
    return total / max(len(fa), 1)


def _score(samples, predict_fn, lpips_fn) -> dict:
    sums = {"psnr": 0.0, "ssim": 0.0, "mae": 0.0, "rmse": 0.0, "lpips_proxy": 0.0}
    for s in samples:
        pred = predict_fn(s.gt, s.mask)
        m3 = np.asarray(s.mask, dtype=np.float64)[..., None]
        comp = pred * m3 + s.gt * (1.0 - m3)
        sums["psnr"] += psnr(comp, s.gt)
        sums["ssim"] += ssim(comp, s.gt)
        sums["mae"] += mae(comp, s.gt)
        sums["rmse"] += rmse(comp, s.gt)
        if lpips_fn is not None:
            sums["lpips_proxy"] += lpips_fn(comp, s.gt)
    return sums


def evaluate_pairs(predict_fn, samples: list[EvalSample],
                   lpips_fn=None) -> tuple[list[MetricRow], MetricRow]:
    """Score composited predictions per mask-ratio bucket.

    predict_fn(gt, mask) must return a full [0, 1] image; known pixels
    are restored from the ground truth before scoring.  Returns one row
    per bucket (n/a for empty ones), an out-of-range row when needed,
    and the average row over all in-range samples.
    """
    if not samples:
        raise DataError("no evaluation samples")
    groups = bucket_by_mask_ratio(samples)
    rows = []
    agg = {"psnr": 0.0, "ssim": 0.0, "mae": 0.0, "rmse": 0.0, "lpips_proxy": 0.0}
    in_range = 0
    for label, members in groups.items():
        if label == OUT_OF_RANGE and not members:
            continue
        if not members:
            rows.append(MetricRow(bucket=label, count=0))
            continue
        sums = _score(members, predict_fn, lpips_fn)
        n = len(members)
        row = MetricRow(
            bucket=label, count=n,
            psnr=sums["psnr"] / n, ssim=sums["ssim"] / n,
            mae=sums["mae"] / n, rmse=sums["rmse"] / n,
            lpips_proxy=(sums["lpips_proxy"] / n) if lpips_fn else None,
        )
        rows.append(row)
        if label != OUT_OF_RANGE:
            in_range += n
            for key in agg:
                agg[key] += sums[key]
    if in_range:
        average = MetricRow(
            bucket="average", count=in_range,
            psnr=agg["psnr"] / in_range, ssim=agg["ssim"] / in_range,
            mae=agg["mae"] / in_range, rmse=agg["rmse"] / in_range,
            lpips_proxy=(agg["lpips_proxy"] / in_range) if lpips_fn else None,
        )
    else:
        average = MetricRow(bucket="average", count=0)
    return rows, average


def write_metric_table(rows: list[MetricRow], average: MetricRow,
                       path: str | Path) -> None:
    """Delimited table: one row per bucket plus the average row.
    Formatting is fixed-precision, so repeat runs are byte-identical."""
    def fmt(v):
        return "n/a" if v is None else f"{v:.6f}"

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket", "count", "psnr", "ssim", "mae", "rmse", "lpips_proxy"])
        for row in list(rows) + [average]:
            writer.writerow([row.bucket, row.count, fmt(row.psnr), fmt(row.ssim),
                             fmt(row.mae), fmt(row.rmse), fmt(row.lpips_proxy)])
