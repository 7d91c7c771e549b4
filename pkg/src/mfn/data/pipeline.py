"""Background-aware dataset construction.

Stages: filter out samples dominated by moving objects, synthesize an
object-aware hole mask per kept sample, crop, and emit (input, mask,
ground-truth) pairs.  The whole pipeline is a pure function of
(records, config, seed): each record draws its randomness from a
sub-generator derived from the global seed and the record's index, so
records are independent and the output is bit-reproducible.

All sizes in configs are (width, height); arrays are indexed [row, col].
Images travel as float32 arrays in [0, 1]; the [-1, 1] convention only
exists inside the networks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..config import PipelineConfig
from ..errors import DataError
from .annotations import SampleRecord
from .masks import BinaryMask, TemplateLibrary, produce_mask, rasterize_polygon, save_mask

logger = logging.getLogger(__name__)


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to float32 (H, W, 3) in [0, 1]."""
    try:
        img = Image.open(path).convert("RGB")
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}")
    return np.asarray(img, dtype=np.float32) / 255.0


def save_image(arr: np.ndarray, path: str | Path) -> None:
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Per-record generator derived from (global seed, record index)."""
    return np.random.default_rng([seed, index])


def moving_area_ratio(record: SampleRecord, image_size: tuple[int, int]) -> float:
    """Fraction of image pixels covered by the union of moving-object
    regions (polygon when present, else bbox), clipped to the image."""
    h, w = image_size
    canvas = np.zeros((h, w), dtype=np.uint8)
    for ann in record.annotations:
        if not ann.is_moving_class:
            continue
        if ann.polygon is not None:
            canvas |= rasterize_polygon(ann.polygon, (h, w))
        else:
            x, y, bw, bh = ann.bbox
            x0, y0 = max(x, 0), max(y, 0)
            x1, y1 = min(x + bw, w), min(y + bh, h)
            if x1 > x0 and y1 > y0:
                canvas[y0:y1, x0:x1] = 1
    return float(canvas.sum()) / (h * w)


def _image_size(path: str) -> tuple[int, int]:
    """(H, W) from the file header, without a full decode."""
    with Image.open(path) as img:
        img.verify()
        w, h = img.size
    return h, w


def filter_images(records: list[SampleRecord], cfg: PipelineConfig) -> list[SampleRecord]:
    """Keep records whose moving-object area ratio is strictly below
    cfg.moving_ratio_max.  Undecodable images are skipped with a warning."""
    kept = []
    for rec in records:
        try:
            size = _image_size(rec.image_path)
        except (FileNotFoundError, OSError) as exc:
            logger.warning("skipping undecodable image %s: %s", rec.image_path, exc)
            continue
        if moving_area_ratio(rec, size) < cfg.moving_ratio_max:
            kept.append(rec)
    return kept


def make_training_pair(
    image: np.ndarray,
    mask: BinaryMask,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    split: str = "train",
    name: str = "",
) -> tuple[np.ndarray, BinaryMask, np.ndarray]:
    """Crop and pair one sample.

    Train split: uniform random crop of cfg.train_crop.  Test split:
    deterministic center crop of cfg.test_size.  Returns
    (input, mask_crop, gt) with input = gt * (1 - mask) per channel.
    """
    h, w = image.shape[:2]
    cw, ch = cfg.train_crop if split == "train" else cfg.test_size
    if h < ch or w < cw:
        raise DataError(
            f"image{' ' + name if name else ''} is {w}x{h}, smaller than the "
            f"required {cw}x{ch} for split '{split}'"
        )
    if split == "train":
        y0 = int(rng.integers(0, h - ch + 1))
        x0 = int(rng.integers(0, w - cw + 1))
    else:
        y0 = (h - ch) // 2
        x0 = (w - cw) // 2
    gt = np.ascontiguousarray(image[y0:y0 + ch, x0:x0 + cw])
    mask_crop = BinaryMask(mask.data[y0:y0 + ch, x0:x0 + cw])
    inp = gt * (1.0 - mask_crop.data[..., None]).astype(gt.dtype)
    return inp, mask_crop, gt


@dataclass
class PairRecord:
    """One prepared (input, mask, gt) pair as written to disk."""

    pair_id: str
    split: str
    image: str
    mask: str
    input: str
    hole_ratio: float

    def load_gt(self) -> np.ndarray:
        return load_image(self.image)

    def load_mask(self) -> BinaryMask:
        from .masks import load_mask
        return load_mask(self.mask)


def _default_templates(cfg: PipelineConfig) -> TemplateLibrary:
    if cfg.template_dir:
        return TemplateLibrary.from_directory(cfg.template_dir)
    return TemplateLibrary.synthesized(cfg.template_library_size, seed=cfg.seed)


def prepare_dataset(
    records: list[SampleRecord],
    cfg: PipelineConfig,
    out_dir: str | Path,
    templates: TemplateLibrary | None = None,
    dry_run: bool = False,
) -> dict:
    """Run the full pipeline and write pairs under out_dir.

    Layout: <out>/<split>/{images,masks,inputs}/<id>.png plus a
    pairs.jsonl manifest.  With dry_run=True nothing is written; the
    returned summary reports what would happen.
    """
    out_dir = Path(out_dir)
    total = len(records)
    kept = filter_images(records, cfg)
    summary = {
        "records": total,
        "kept": len(kept),
        "rejected": total - len(kept),
        "pairs": len(kept),
        "out_dir": str(out_dir),
        "dry_run": dry_run,
    }
    if dry_run:
        return summary
    if templates is None:
        templates = _default_templates(cfg)

    for split in ("train", "test"):
        for sub in ("images", "masks", "inputs"):
            (out_dir / split / sub).mkdir(parents=True, exist_ok=True)

    pairs: list[PairRecord] = []
    for idx, rec in enumerate(kept):
        rng = record_rng(cfg.seed, idx)
        image = load_image(rec.image_path)
        mask = produce_mask(image.shape[:2], rec.annotations, templates, cfg, rng)
        inp, mask_crop, gt = make_training_pair(
            image, mask, cfg, rng, split=rec.split, name=rec.image_path)
        pair_id = f"{idx:06d}"
        base = out_dir / rec.split
        gt_path = base / "images" / f"{pair_id}.png"
        mask_path = base / "masks" / f"{pair_id}.png"
        inp_path = base / "inputs" / f"{pair_id}.png"
        save_image(gt, gt_path)
        save_mask(mask_crop, mask_path)
        save_image(inp, inp_path)
        pairs.append(PairRecord(
            pair_id=pair_id,
            split=rec.split,
            image=str(gt_path),
            mask=str(mask_path),
            input=str(inp_path),
            hole_ratio=mask_crop.hole_ratio,
        ))

    with open(out_dir / "pairs.jsonl", "w") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "id": p.pair_id, "split": p.split, "image": p.image,
                "mask": p.mask, "input": p.input, "hole_ratio": p.hole_ratio,
            }) + "\n")
    with open(out_dir / "prepare_config.json", "w") as fh:
        json.dump({
            "seed": cfg.seed,
            "moving_ratio_max": cfg.moving_ratio_max,
            "overlap_threshold": cfg.overlap_threshold,
            "train_crop": list(cfg.train_crop),
            "test_size": list(cfg.test_size),
        }, fh, indent=2)
    return summary


def load_pairs(manifest: str | Path, split: str | None = None) -> list[PairRecord]:
    """Read a pairs.jsonl manifest (or the directory containing one)."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / "pairs.jsonl"
    if not manifest.exists():
        raise DataError(f"pairs manifest not found: {manifest}")
    pairs = []
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            rec = PairRecord(
                pair_id=raw["id"], split=raw["split"], image=raw["image"],
                mask=raw["mask"], input=raw["input"],
                hole_ratio=float(raw["hole_ratio"]),
            )
            if split is None or rec.split == split:
                pairs.append(rec)
    return pairs
