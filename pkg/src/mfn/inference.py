"""Checkpoint-driven inference helpers shared by the CLI and the
evaluation harness: single-image inpainting and prior-feature
clustering."""

from __future__ import annotations

import numpy as np
import torch

from .errors import UsageError
from .isodata import isodata_cluster
from .training import ModelBundle


def _to_tensors(image01: np.ndarray, mask: np.ndarray):
    image01 = np.asarray(image01, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if image01.ndim != 3 or image01.shape[2] != 3:
        raise UsageError(f"expected (H, W, 3) image, got {image01.shape}")
    if mask.shape != image01.shape[:2]:
        raise UsageError(f"mask {mask.shape} does not match image {image01.shape[:2]}")
    h, w = mask.shape
    if h % 16 or w % 16:
        raise UsageError(f"image size {w}x{h} must be a multiple of 16")
    gt = torch.from_numpy(image01).permute(2, 0, 1).unsqueeze(0) * 2.0 - 1.0
    m = torch.from_numpy(mask).view(1, 1, h, w)
    return gt, m


def _eval_mode(bundle: ModelBundle):
    bundle.prompter.eval()
    bundle.generator.eval()
    bundle.discriminator.eval()


def inpaint_arrays(bundle: ModelBundle, image01: np.ndarray,
                   mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inpaint one image.  Returns (raw, composited), both (H, W, 3)
    float arrays in [0, 1]; the composite keeps known pixels exactly."""
    gt, m = _to_tensors(image01, mask)
    _eval_mode(bundle)
    with torch.no_grad():
        masked = gt * (1.0 - m)
        pyramid = bundle.prompter(masked, m)
        out = bundle.generator(masked, m, pyramid)
    raw = ((out.image[0].permute(1, 2, 0).numpy() + 1.0) / 2.0).clip(0.0, 1.0)
    m3 = np.asarray(mask, dtype=np.float32)[..., None]
    comp = raw * m3 + np.asarray(image01, dtype=np.float32) * (1.0 - m3)
    return raw, comp


def make_predictor(bundle: ModelBundle):
    """predict(gt, mask) -> raw [0, 1] image, for the evaluation harness."""
    def predict(gt: np.ndarray, mask: np.ndarray) -> np.ndarray:
        raw, _ = inpaint_arrays(bundle, gt, mask)
        return raw.astype(np.float64)
    return predict


def cluster_prior_features(bundle: ModelBundle, image01: np.ndarray,
                           mask: np.ndarray | None = None, level: int = 0,
                           clusters: int = 6, merge_dist: float | None = 0.05,
                           split_std: float | None = None, max_iter: int = 20,
                           seed: int = 0) -> np.ndarray:
    """Run the prompter and cluster one pyramid level's features into an
    integer label map at that level's resolution."""
    if mask is None:
        mask = np.zeros(np.asarray(image01).shape[:2], dtype=np.float32)
    gt, m = _to_tensors(image01, mask)
    bundle.prompter.eval()
    with torch.no_grad():
        pyramid = bundle.prompter(gt * (1.0 - m), m)
    if not 0 <= level < len(pyramid):
        raise UsageError(f"pyramid level {level} out of range (0..{len(pyramid) - 1})")
    feats = pyramid[level][0].permute(1, 2, 0).numpy()
    return isodata_cluster(feats, clusters, split_std=split_std,
                           merge_dist=merge_dist, max_iter=max_iter, seed=seed)
