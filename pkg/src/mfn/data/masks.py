"""Binary hole masks, shape templates, and object-aware mask synthesis.

Masks use the convention 1 = hole (pixel to synthesize), 0 = known.  On
disk they are single-channel 8-bit images with 255 for hole pixels.

Mask synthesis starts from randomly placed instance-shaped templates plus
the regions of moving objects, then walks the annotated bounding boxes:
a box whose overlap ratio with the current hole exceeds the configured
threshold is carved out of the hole, otherwise the box is added to it.
Boxes that were carved out stay out, even when later boxes overlap them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..config import PipelineConfig
from ..errors import DataError
from .annotations import InstanceAnnotation


@dataclass
class BinaryMask:
    """H x W map over {0, 1}; 1 marks hole pixels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise DataError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        uniq = np.unique(arr)
        if not np.all(np.isin(uniq, (0, 1))):
            raise DataError(f"mask values must be in {{0, 1}}, got {uniq[:8]}")
        self.data = arr.astype(np.uint8)

    @property
    def hole_ratio(self) -> float:
        return float(self.data.sum()) / self.data.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    Image.fromarray(mask.data * np.uint8(255), mode="L").save(path)


def load_mask(path: str | Path) -> BinaryMask:
    try:
        img = Image.open(path).convert("L")
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}")
    return BinaryMask((np.asarray(img) > 127).astype(np.uint8))


def rasterize_polygon(polygon, shape: tuple[int, int]) -> np.ndarray:
    """Fill a polygon (list of (x, y) vertices) on an H x W canvas."""
    h, w = shape
    canvas = Image.new("L", (w, h), 0)
    ImageDraw.Draw(canvas).polygon([(float(x), float(y)) for x, y in polygon], fill=1)
    return np.asarray(canvas, dtype=np.uint8)


def _clip_bbox(bbox, shape):
    x, y, w, h = bbox
    hh, ww = shape
    x0, y0 = max(int(x), 0), max(int(y), 0)
    x1, y1 = min(int(x + w), ww), min(int(y + h), hh)
    return x0, y0, x1, y1


def overlap_ratio(hole: BinaryMask, bbox: tuple[int, int, int, int]) -> float:
    """Fraction of the bbox area covered by hole pixels, in [0, 1]."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise DataError(f"zero-area bbox {bbox}")
    x0, y0, x1, y1 = _clip_bbox(bbox, hole.shape)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    inter = int(hole.data[y0:y1, x0:x1].sum())
    return inter / float(w * h)


class TemplateLibrary:
    """Library of binary instance shapes used to seed hole masks.

    Templates either come from a directory of binary images or are
    synthesized as smooth random polygons (seeded, so fully
    reproducible).  Each template is stored cropped to its content.
    """

    def __init__(self, templates: list[np.ndarray]):
        if not templates:
            raise DataError("template library is empty")
        self.templates = [t.astype(np.uint8) for t in templates]

    def __len__(self) -> int:
        return len(self.templates)

    @classmethod
    def from_directory(cls, directory: str | Path) -> "TemplateLibrary":
        directory = Path(directory)
        if not directory.is_dir():
            raise DataError(f"template directory not found: {directory}")
        templates = []
        for fp in sorted(directory.iterdir()):
            if fp.suffix.lower() not in (".png", ".jpg", ".jpeg", ".bmp"):
                continue
            arr = (np.asarray(Image.open(fp).convert("L")) > 127).astype(np.uint8)
            cropped = _crop_to_content(arr)
            if cropped is not None:
                templates.append(cropped)
        return cls(templates)

    @classmethod
    def synthesized(cls, count: int, seed: int, base_size: int = 96) -> "TemplateLibrary":
        rng = np.random.default_rng(seed)
        templates = []
        while len(templates) < count:
            cropped = _crop_to_content(_random_blob(rng, base_size))
            if cropped is not None:
                templates.append(cropped)
        return cls(templates)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.templates[int(rng.integers(0, len(self.templates)))]


def _crop_to_content(arr: np.ndarray) -> np.ndarray | None:
    ys, xs = np.nonzero(arr)
    if len(ys) == 0:
        return None
    return arr[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def _random_blob(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth star-convex polygon on a size x size canvas."""
    k = int(rng.integers(8, 16))
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, k))
    radii = rng.uniform(0.3, 1.0, k)
    # circular moving average smooths the radius profile
    kernel = np.array([0.25, 0.5, 0.25])
    radii = np.convolve(np.concatenate([radii[-1:], radii, radii[:1]]), kernel, mode="valid")
    radii *= 0.45 * size
    cx = cy = size / 2.0
    verts = [(cx + r * np.cos(a), cy + r * np.sin(a)) for a, r in zip(angles, radii)]
    return rasterize_polygon(verts, (size, size))


def _resize_binary(arr: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    th, tw = max(target_hw[0], 1), max(target_hw[1], 1)
    img = Image.fromarray(arr * np.uint8(255), mode="L").resize((tw, th), Image.NEAREST)
    return (np.asarray(img) > 127).astype(np.uint8)


def _place_templates(hole, library, cfg, rng):
    h, w = hole.shape
    lo, hi = cfg.templates_per_mask
    n = int(rng.integers(lo, hi + 1))
    for _ in range(n):
        tpl = library.sample(rng)
        scale = rng.uniform(*cfg.template_scale) * min(h, w)
        factor = scale / max(tpl.shape)
        th = min(max(int(round(tpl.shape[0] * factor)), 1), h)
        tw = min(max(int(round(tpl.shape[1] * factor)), 1), w)
        tpl = _resize_binary(tpl, (th, tw))
        if rng.random() < 0.5:
            tpl = tpl[:, ::-1]
        y0 = int(rng.integers(0, h - th + 1))
        x0 = int(rng.integers(0, w - tw + 1))
        hole[y0:y0 + th, x0:x0 + tw] |= tpl


def produce_mask(
    image_size: tuple[int, int],
    annotations: list[InstanceAnnotation],
    shape_templates: TemplateLibrary,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    decision_log: list | None = None,
) -> BinaryMask:
    """Synthesize an object-aware training mask for one image.

    image_size is (H, W).  Deterministic given (rng state, inputs).
    When decision_log is a list, one (bbox, ratio, excluded) tuple per
    annotation is appended to it.
    """
    if shape_templates is None or len(shape_templates) == 0:
        raise DataError("produce_mask needs a non-empty template library")
    h, w = image_size
    hole = np.zeros((h, w), dtype=np.uint8)

    _place_templates(hole, shape_templates, cfg, rng)

    for ann in annotations:
        if not ann.is_moving_class:
            continue
        if ann.polygon is not None:
            hole |= rasterize_polygon(ann.polygon, (h, w))
        else:
            x0, y0, x1, y1 = _clip_bbox(ann.bbox, (h, w))
            hole[y0:y1, x0:x1] = 1

    # Decide each bbox against the evolving hole, in annotation order.
    excluded = []
    for ann in annotations:
        ratio = overlap_ratio(BinaryMask(hole), ann.bbox)
        x0, y0, x1, y1 = _clip_bbox(ann.bbox, (h, w))
        over = ratio > cfg.overlap_threshold
        if over:
            hole[y0:y1, x0:x1] = 0
            excluded.append((x0, y0, x1, y1))
        else:
            hole[y0:y1, x0:x1] = 1
        if decision_log is not None:
            decision_log.append((ann.bbox, ratio, over))
    # Exclusions are final: later additions must not leak back into them.
    for x0, y0, x1, y1 in excluded:
        hole[y0:y1, x0:x1] = 0

    return BinaryMask(hole)
