from .annotations import (
    FileAnnotator,
    InstanceAnnotation,
    ObjectAnnotator,
    SampleRecord,
    load_manifest,
    write_manifest,
)
from .masks import (
    BinaryMask,
    TemplateLibrary,
    load_mask,
    overlap_ratio,
    produce_mask,
    save_mask,
)
from .pipeline import (
    filter_images,
    load_pairs,
    make_training_pair,
    moving_area_ratio,
    prepare_dataset,
    record_rng,
)

__all__ = [
    "BinaryMask",
    "FileAnnotator",
    "InstanceAnnotation",
    "ObjectAnnotator",
    "SampleRecord",
    "TemplateLibrary",
    "filter_images",
    "load_mask",
    "load_manifest",
    "load_pairs",
    "make_training_pair",
    "moving_area_ratio",
    "overlap_ratio",
    "prepare_dataset",
    "produce_mask",
    "record_rng",
    "save_mask",
    "write_manifest",
]
