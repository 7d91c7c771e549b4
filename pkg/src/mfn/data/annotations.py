"""Sample records, instance annotations, and manifest I/O.

A manifest is JSON-lines: one record per line with fields
``{"image": path, "annotations": [...] | path, "split": "train"|"test"}``.
The ``annotations`` field is either an inline list of
``{"class": str|int, "bbox": [x, y, w, h], "polygon": [[x, y], ...]}``
objects or a path to a JSON file holding such a list.  Object detection
stays behind the :class:`ObjectAnnotator` interface; the default
implementation only reads annotation files, so everything runs offline.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..config import DEFAULT_MOVING_CLASSES
from ..errors import DataError

logger = logging.getLogger(__name__)

# Stable ids for common street classes; unknown class names map to -1 and
# keep their name, which is all the pipeline needs.
CLASS_IDS = {
    "road": 0, "sidewalk": 1, "building": 2, "wall": 3, "fence": 4,
    "pole": 5, "traffic light": 6, "traffic sign": 7, "vegetation": 8,
    "terrain": 9, "sky": 10, "person": 11, "rider": 12, "car": 13,
    "truck": 14, "bus": 15, "train": 16, "motorcycle": 17, "bicycle": 18,
}
CLASS_NAMES = {v: k for k, v in CLASS_IDS.items()}


@dataclass
class InstanceAnnotation:
    """One detected/annotated object instance."""

    class_id: int
    bbox: tuple[int, int, int, int]  # (x, y, w, h) in pixels
    polygon: list[tuple[float, float]] | None = None
    is_moving_class: bool = False
    class_name: str = ""

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise DataError(f"annotation bbox must have positive size, got {self.bbox}")
        self.bbox = (int(x), int(y), int(w), int(h))

    @classmethod
    def from_dict(cls, raw: dict, moving_classes=DEFAULT_MOVING_CLASSES) -> "InstanceAnnotation":
        cls_field = raw.get("class", raw.get("class_id"))
        if cls_field is None:
            raise DataError(f"annotation missing 'class': {raw}")
        if isinstance(cls_field, str):
            name = cls_field
            class_id = CLASS_IDS.get(name, -1)
        else:
            class_id = int(cls_field)
            name = CLASS_NAMES.get(class_id, "")
        polygon = raw.get("polygon")
        if polygon is not None:
            polygon = [(float(px), float(py)) for px, py in polygon]
        return cls(
            class_id=class_id,
            bbox=tuple(raw["bbox"]),
            polygon=polygon,
            is_moving_class=name in moving_classes,
            class_name=name,
        )

    def to_dict(self) -> dict:
        out = {"class": self.class_name or self.class_id, "bbox": list(self.bbox)}
        if self.polygon is not None:
            out["polygon"] = [[px, py] for px, py in self.polygon]
        return out


@dataclass
class SampleRecord:
    """One dataset entry: image path plus its instance annotations."""

    image_path: str
    annotations: list[InstanceAnnotation] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")


class ObjectAnnotator:
    """Source of instance annotations for an image.

    Subclasses may wrap a live detector; the default file-based
    implementation keeps the pipeline deterministic and offline.
    """

    def annotate(self, image_path: str) -> list[InstanceAnnotation]:
        raise NotImplementedError


class FileAnnotator(ObjectAnnotator):
    """Reads per-image JSON annotation files."""

    def __init__(self, moving_classes=DEFAULT_MOVING_CLASSES):
        self.moving_classes = tuple(moving_classes)

    def annotate(self, annotation_path: str) -> list[InstanceAnnotation]:
        try:
            with open(annotation_path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"annotation file not found: {annotation_path}")
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid annotation file {annotation_path}: {exc}")
        if not isinstance(raw, list):
            raise DataError(f"annotation file must hold a list: {annotation_path}")
        return [InstanceAnnotation.from_dict(a, self.moving_classes) for a in raw]


def load_manifest(path: str | Path, moving_classes=DEFAULT_MOVING_CLASSES) -> list[SampleRecord]:
    """Parse a JSON-lines manifest into sample records.

    Relative image/annotation paths are resolved against the manifest's
    directory.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    annotator = FileAnnotator(moving_classes)
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}")
            if "image" not in raw:
                raise DataError(f"{path}:{lineno}: record missing 'image'")
            image = str(raw["image"])
            if not Path(image).is_absolute():
                image = str(base / image)
            ann_field = raw.get("annotations", [])
            if isinstance(ann_field, str):
                ann_path = ann_field if Path(ann_field).is_absolute() else str(base / ann_field)
                annotations = annotator.annotate(ann_path)
            else:
                annotations = [InstanceAnnotation.from_dict(a, moving_classes) for a in ann_field]
            records.append(SampleRecord(
                image_path=image,
                annotations=annotations,
                split=raw.get("split", "train"),
            ))
    return records


def write_manifest(records: list[SampleRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "image": rec.image_path,
                "annotations": [a.to_dict() for a in rec.annotations],
                "split": rec.split,
            }) + "\n")
