"""
From a dataset directory to normalized, batched-ready arrays.

The stages run in a fixed order: split, crop and resize, statistics over the
original training images, augmentation of the training split, normalization.
`check_provenance` verifies that no validation or test sample reached the
statistics or the training arrays.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from hybridlab.config import RunConfig
from hybridlab.datapipe import (
    SPLITS, augment_expand, bicubic_resize, center_crop, compute_dataset_stats, constant_stats,
    decode_images, load_dataset, normalize, stratified_split,
)
from hybridlab.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass
class SplitData:
    images: np.ndarray
    labels: np.ndarray
    ids: list

    def __len__(self):
        return len(self.labels)


@dataclass
class PreparedData:
    """
    Arrays of a run, ready for the network.

    Attributes:
        manifest (DatasetManifest): The dataset with its split assignment.
        stats (NormalizationStats): Statistics used for normalization.
        splits (dict): Split name -> SplitData.
        stats_ids (frozenset): Ids of the images the statistics were computed from; empty for constants.
    """
    manifest: object
    stats: object
    splits: dict = field(default_factory=dict)
    stats_ids: frozenset = frozenset()


def image_transform(config: RunConfig, image_size: tuple):
    """Returns the per-image crop and resize step for images of `image_size`, or None when there is nothing to do."""
    target = (config.input_size, config.input_size)
    crop = (config.crop_size, config.crop_size) if config.crop_size else None
    cropped = crop or image_size
    if crop and (crop[0] > image_size[0] or crop[1] > image_size[1]):
        raise ConfigError(f"crop_size {config.crop_size} larger than the dataset images {image_size[0]}x{image_size[1]}")
    if crop is None and tuple(image_size) == target:
        return None

    def transform(img):
        if crop:
            img = center_crop(img, crop)
        return img if tuple(cropped) == target else bicubic_resize(img, target)
    return transform


def _decode(manifest, split: str, config: RunConfig, transform) -> SplitData:
    records = manifest.records_for(split)
    if not records:
        raise DataError(f"The {split} split is empty; the dataset has too few images per class")
    images = decode_images(records, config.data_workers, transform, config.dtype)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return SplitData(images, labels, [r.id for r in records])


def _normalize_split(data: SplitData, stats) -> SplitData:
    out = np.empty_like(data.images)
    for i, img in enumerate(data.images):
        out[i] = normalize(img, stats)
    return SplitData(out, data.labels, data.ids)


def check_provenance(data: PreparedData) -> None:
    """
    Verifies that the splits are disjoint and that the statistics and every training
    array (augmented variants included) derive from training images only.

    Raises:
        DataError: On any leakage.
    """
    assignment = data.manifest.splits
    for split, split_data in data.splits.items():
        origins = {sample_id.split('#', 1)[0] for sample_id in split_data.ids}
        foreign = sorted(i for i in origins if assignment.get(i) != split)
        if foreign:
            raise DataError(f"{len(foreign)} samples in the {split} arrays belong to another split, e.g. '{foreign[0]}'")
    leaked = sorted(i for i in data.stats_ids if assignment.get(i) != 'train')
    if leaked:
        raise DataError(f"Normalization statistics include non-training samples, e.g. '{leaked[0]}'")


def prepare_data(config: RunConfig, data_root, splits=SPLITS, stats=None, augment: bool = True) -> PreparedData:
    """
    Loads, splits, preprocesses and normalizes a dataset.

    Args:
        config (RunConfig): Run configuration.
        data_root (str | pathlib.Path): Dataset root directory.
        splits (sequence): Splits to materialize.
        stats (NormalizationStats | None): Precomputed statistics; computed from the training
            split (or taken from the configured constants) when None.
        augment (bool): Expand the training split with augmented variants.

    Returns:
        PreparedData: Normalized arrays per requested split.

    Raises:
        DataError: If the dataset is unusable or a split is empty.
        ConfigError: If the crop does not fit the images.
    """
    manifest = load_dataset(data_root)
    stratified_split(manifest, config.split_config())
    transform = image_transform(config, manifest.image_size)
    stats_ids = frozenset()
    raw = {}
    if 'train' in splits or (stats is None and config.normalization == 'dataset'):
        raw['train'] = _decode(manifest, 'train', config, transform)
    if stats is None:
        if config.normalization == 'dataset':
            stats = compute_dataset_stats(raw['train'].images)
            stats_ids = frozenset(raw['train'].ids)
        else:
            stats = constant_stats(config.imagenet_mean)
    if 'train' in splits and augment:
        train = raw['train']
        raw['train'] = SplitData(*augment_expand(train.images, train.labels, train.ids,
                                                 config.augment_config(), config.data_workers))
    for split in splits:
        if split not in raw:
            raw[split] = _decode(manifest, split, config, transform)
    prepared = PreparedData(manifest, stats, {s: _normalize_split(raw[s], stats) for s in splits}, stats_ids)
    check_provenance(prepared)
    logger.info('Prepared %s', ', '.join(f"{s}={len(d)}" for s, d in prepared.splits.items()))
    return prepared
