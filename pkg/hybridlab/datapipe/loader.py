"""
Dataset access: directory loading, PNG decoding, the stratified train/val/test
split and deterministic batching.

The expected layout is one subdirectory per class under the dataset root:

    root/normal/*.png   label 0
    root/all/*.png      label 1
"""
import logging
import math
import pathlib
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from hybridlab.errors import ConfigError, DataError, ItemError
from hybridlab.tensor import get_default_dtype

logger = logging.getLogger(__name__)

CLASS_NAMES = ('normal', 'all')
SPLITS = ('train', 'val', 'test')


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: pathlib.Path
    label: int


@dataclass
class SplitConfig:
    train: float = 0.7
    val: float = 0.2
    test: float = 0.1
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        if min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
            raise ConfigError(f"Split fractions must be positive and sum to 1, got {fractions}")


@dataclass
class DatasetManifest:
    """
    The samples of a dataset, their common image size and the split each one belongs to.

    Attributes:
        root (pathlib.Path): Dataset root directory.
        records (list[ImageRecord]): Samples ordered by id.
        image_size (tuple): (height, width) shared by every image.
        splits (dict): Sample id -> 'train' | 'val' | 'test', filled by `stratified_split`.
    """
    root: pathlib.Path
    records: list
    image_size: tuple
    splits: dict = field(default_factory=dict)

    @property
    def counts(self) -> dict:
        counts = {label: 0 for label in range(len(CLASS_NAMES))}
        for record in self.records:
            counts[record.label] += 1
        return counts

    def records_for(self, split: str) -> list:
        if split not in SPLITS:
            raise ConfigError(f"Split must be one of {', '.join(SPLITS)}, got '{split}'")
        return [r for r in self.records if self.splits.get(r.id) == split]


def load_dataset(root) -> DatasetManifest:
    """
    Scans a dataset directory and verifies that every image has the same size.

    Only image headers are read here; pixels are decoded later by `decode_images`.

    Args:
        root (str | pathlib.Path): Directory with one subdirectory per class name.

    Returns:
        DatasetManifest: Records ordered lexicographically by '<class>/<file name>'.

    Raises:
        DataError: If a class directory is missing or empty, or image sizes differ.
        ItemError: If an image file cannot be opened.
    """
    root = pathlib.Path(root)
    records, sizes = [], {}
    for label, name in enumerate(CLASS_NAMES):
        class_dir = root / name
        if not class_dir.is_dir():
            raise DataError(f"Class directory '{class_dir}' does not exist")
        files = sorted(class_dir.glob('*.png'))
        if not files:
            raise DataError(f"Class '{name}' has no images in '{class_dir}'")
        for path in files:
            try:
                with Image.open(path) as img:
                    width, height = img.size
            except (OSError, UnidentifiedImageError) as e:
                raise ItemError(path, e)
            sizes.setdefault((height, width), path)
            records.append(ImageRecord(f"{name}/{path.name}", path, label))
    if len(sizes) > 1:
        found = ', '.join(f"{h}x{w} ({p.name})" for (h, w), p in sizes.items())
        raise DataError(f"Images in '{root}' have mixed dimensions: {found}")
    records.sort(key=lambda r: r.id)
    manifest = DatasetManifest(root, records, next(iter(sizes)))
    logger.info('Loaded %d images from %s: %s', len(records), root,
                ', '.join(f"{CLASS_NAMES[k]}={v}" for k, v in manifest.counts.items()))
    return manifest


def decode_image(path) -> np.ndarray:
    """Decodes one image file to [3, H, W] float64 values in [0, 1]."""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert('RGB'), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as e:
        raise ItemError(path, e)
    return pixels.transpose(2, 0, 1) / 255.0


def decode_images(records, workers: int = 1, transform=None, dtype=None) -> np.ndarray:
    """
    Decodes records into one array [N, 3, H, W], optionally transforming each image.

    Decoding runs on a thread pool; the output order always follows `records`.
    """
    def load(record):
        pixels = decode_image(record.path)
        return transform(pixels) if transform else pixels

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(load, records))
    else:
        images = [load(record) for record in records]
    return np.stack(images).astype(dtype or get_default_dtype()) if images else np.empty((0, 3, 0, 0))


def _cut(n: int, config: SplitConfig):
    # floor of the cumulative fractions; the epsilon absorbs 0.7 + 0.2 != 0.9 in binary
    return math.floor(config.train * n + 1e-9), math.floor((config.train + config.val) * n + 1e-9)


def stratified_split(manifest: DatasetManifest, config: SplitConfig) -> dict:
    """
    Assigns every sample to train, val or test.

    Each class is shuffled with a generator seeded by (seed, label) and cut at
    floor(0.7 n) and floor(0.9 n) for the default fractions, so a class of 10 gives
    (7, 2, 1) and a class of 9 gives (6, 2, 1). A class of 3 gives (2, 0, 1), so a
    dataset of two 3-sample classes has an empty validation split, which `train`
    rejects. With `stratified=False` the whole dataset is shuffled and cut once.

    Args:
        manifest (DatasetManifest): The loaded dataset; its `splits` field is replaced.
        config (SplitConfig): Fractions, seed and stratification flag.

    Returns:
        dict: Sample id -> split name.

    Raises:
        DataError: If a class (or the dataset, when not stratified) has fewer than 3 samples.
    """
    if config.stratified:
        groups = [(label, [r.id for r in manifest.records if r.label == label]) for label in range(len(CLASS_NAMES))]
    else:
        groups = [(None, [r.id for r in manifest.records])]
    assignment = {}
    for label, ids in groups:
        what = f"Class '{CLASS_NAMES[label]}'" if label is not None else 'Dataset'
        if len(ids) < 3:
            raise DataError(f"{what} has {len(ids)} samples, at least 3 are needed for a three-way split")
        key = [config.seed, label] if label is not None else [config.seed]
        order = np.random.default_rng(key).permutation(len(ids))
        train_end, val_end = _cut(len(ids), config)
        for position, index in enumerate(order):
            split = 'train' if position < train_end else 'val' if position < val_end else 'test'
            assignment[ids[index]] = split
    manifest.splits = assignment
    for split in SPLITS:
        logger.info('Split %s: %d samples', split, sum(1 for s in assignment.values() if s == split))
    return assignment


def batches(split, batch_size: int, seed: int, epoch: int) -> list:
    """
    Shuffles a split with a generator keyed by (seed, epoch) and cuts it into batches.

    The final partial batch is kept, so 100 samples with batch size 32 give sizes (32, 32, 32, 4).

    Args:
        split (sequence): Sample indices (or ids) of the split.
        batch_size (int): At least 1.
        seed (int): Run seed.
        epoch (int): Epoch number.

    Returns:
        list[np.ndarray]: The batches, in order.
    """
    if batch_size < 1:
        raise ConfigError(f"Batch size must be at least 1, got {batch_size}")
    items = np.asarray(split)
    order = items[np.random.default_rng([seed, epoch]).permutation(len(items))]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


class BatchPrefetcher:
    """
    Yields (images, labels) for a fixed batch sequence.

    Batches are assembled by a background thread into a bounded queue; with
    `single_thread=True` they are assembled inline. The sequence is the same either way.
    """
    _DONE = object()

    def __init__(self, images, labels, batch_indices, prefetch: int = 2, single_thread: bool = False):
        self.images = images
        self.labels = labels
        self.batch_indices = batch_indices
        self.prefetch = prefetch
        self.single_thread = single_thread

    def _assemble(self, idx):
        return self.images[idx], self.labels[idx]

    def __len__(self):
        return len(self.batch_indices)

    def __iter__(self):
        if self.single_thread:
            for idx in self.batch_indices:
                yield self._assemble(idx)
            return
        slots = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()

        def produce():
            try:
                for idx in self.batch_indices:
                    if stop.is_set():
                        return
                    slots.put(self._assemble(idx))
            except Exception as e:
                slots.put(e)
            slots.put(self._DONE)

        worker = threading.Thread(target=produce, daemon=True)
        worker.start()
        try:
            while True:
                item = slots.get()
                if item is self._DONE:
                    break
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            stop.set()
            while worker.is_alive():
                try:
                    slots.get_nowait()
                except queue.Empty:
                    worker.join(timeout=0.01)
