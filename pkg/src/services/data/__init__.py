"""Data Service"""

from src.services.data.augmentation import (
    AugmentedDataset,
    StepBatchSampler,
    iterate_batches,
    make_loader,
    sample_rng,
)
from src.services.data.dataset_service import (
    PreparedDataset,
    apply_relabel,
    load_dataset,
    prepare_dataset,
    save_manifest,
    split_dataset,
)
from src.services.data.transforms import (
    PreparedImage,
    Sample,
    compute_normalization_stats,
    crop_boxes,
    random_crop,
    resize_and_standardize,
    resize_sample,
    rotate90,
    standardize,
)

__all__ = [
    "AugmentedDataset",
    "StepBatchSampler",
    "iterate_batches",
    "make_loader",
    "sample_rng",
    "PreparedDataset",
    "apply_relabel",
    "load_dataset",
    "prepare_dataset",
    "save_manifest",
    "split_dataset",
    "PreparedImage",
    "Sample",
    "compute_normalization_stats",
    "crop_boxes",
    "random_crop",
    "resize_and_standardize",
    "resize_sample",
    "rotate90",
    "standardize",
]
