"""
Label-preserving augmentation of training images with values in [0, 1]:
horizontal and vertical flips, brightness, contrast and intensity (gamma).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from hybridlab.errors import ConfigError

logger = logging.getLogger(__name__)

OPS = ('flip-h', 'flip-v', 'brightness', 'contrast', 'intensity')


@dataclass
class AugmentConfig:
    """
    Augmentation settings.

    Attributes:
        ops (tuple): Enabled operations, a subset of OPS.
        k_normal (int): Augmented variants per normal image.
        k_all (int): Augmented variants per ALL image.
        brightness (tuple): Range of the additive offset.
        contrast (tuple): Range of the contrast factor around 0.5.
        gamma (tuple): Range of the intensity exponent.
        seed (int): Seed for variant choices.
    """
    ops: tuple = OPS
    k_normal: int = 7
    k_all: int = 7
    brightness: tuple = (-0.2, 0.2)
    contrast: tuple = (0.8, 1.2)
    gamma: tuple = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        self.ops = tuple(self.ops)
        unknown = set(self.ops) - set(OPS)
        if unknown:
            raise ConfigError(f"Unknown augmentation ops {sorted(unknown)}; choose from {', '.join(OPS)}")
        if self.k_normal < 0 or self.k_all < 0:
            raise ConfigError(f"Variants per image must be non-negative, got {self.k_normal} and {self.k_all}")
        if (self.k_normal or self.k_all) and not self.ops:
            raise ConfigError("Augmentation variants requested but no ops enabled")
        for key, low, high in (('brightness', -1.0, 1.0), ('contrast', 0.0, None), ('gamma', 0.0, None)):
            lo, hi = getattr(self, key)
            if lo > hi or lo < low or (high is not None and hi > high) or (key != 'brightness' and lo <= 0):
                raise ConfigError(f"Invalid {key} range ({lo}, {hi})")

    def variants_for(self, label: int) -> int:
        return self.k_all if label == 1 else self.k_normal

    def range_for(self, op: str):
        return {'brightness': self.brightness, 'contrast': self.contrast, 'intensity': self.gamma}.get(op)


DEFAULT_AUGMENT = AugmentConfig()


def augment(img, op: str, param=None, rng=None, config: AugmentConfig = DEFAULT_AUGMENT) -> np.ndarray:
    """
    Applies one augmentation to an image [C, H, W] with values in [0, 1].

    Args:
        img (np.ndarray): Input image.
        op (str): 'flip-h', 'flip-v', 'brightness' (x + delta), 'contrast' ((x - 0.5) f + 0.5)
            or 'intensity' (x ** gamma).
        param (float | None): Parameter of a photometric op; drawn from the configured range with
            `rng` when None.
        rng (np.random.Generator | None): Source for drawn parameters.
        config (AugmentConfig): Parameter ranges.

    Returns:
        np.ndarray: A new image clamped to [0, 1]. Neutral parameters (delta 0, factor 1, gamma 1)
        return an exact copy.

    Raises:
        ConfigError: If the op is unknown or the parameter lies outside its range.

    Example:
        augment([[a, b], [c, d]] per channel, 'flip-h') gives [[b, a], [d, c]].
    """
    if op == 'flip-h':
        return img[..., ::-1].copy()
    if op == 'flip-v':
        return img[..., ::-1, :].copy()
    bounds = config.range_for(op)
    if bounds is None:
        raise ConfigError(f"Unknown augmentation op '{op}'")
    if param is None:
        param = (rng or np.random.default_rng()).uniform(*bounds)
    if not bounds[0] <= param <= bounds[1]:
        raise ConfigError(f"{op} parameter {param} outside range {bounds}")
    neutral = 0.0 if op == 'brightness' else 1.0
    if param == neutral:
        return img.copy()
    dtype = img.dtype.type
    if op == 'brightness':
        out = img + dtype(param)
    elif op == 'contrast':
        out = (img - dtype(0.5)) * dtype(param) + dtype(0.5)
    else:
        out = np.power(np.clip(img, 0, 1), dtype(param))
    return np.clip(out, 0, 1)


def augment_variant(img, config: AugmentConfig, rng) -> np.ndarray:
    """One variant: every enabled op is applied with probability 1/2, at least one op always."""
    chosen = [op for op in config.ops if rng.random() < 0.5]
    if not chosen:
        chosen = [config.ops[rng.integers(len(config.ops))]]
    out = img
    for op in chosen:
        out = augment(out, op, rng=rng, config=config)
    return out


def augment_expand(images, labels, ids, config: AugmentConfig, workers: int = 1):
    """
    Expands the training split: each original is kept and followed by k augmented variants,
    k depending on its class.

    Variant choices come from a generator seeded by (seed, label, position, variant), so the
    result does not depend on the worker count.

    Args:
        images (np.ndarray): Training images [N, 3, H, W] in [0, 1].
        labels (np.ndarray): Labels [N].
        ids (list[str]): Sample ids.
        config (AugmentConfig): Ops, ranges, per-class multipliers and seed.
        workers (int): Threads used to build variants.

    Returns:
        tuple: (images, labels, ids) with n * (1 + k) entries per class.
    """
    counts = [1 + config.variants_for(int(label)) for label in labels]
    total = int(sum(counts))
    out_images = np.empty((total,) + images.shape[1:], dtype=images.dtype)
    out_labels = np.empty(total, dtype=np.asarray(labels).dtype)
    out_ids = []
    jobs = []
    row = 0
    for i, (label, count) in enumerate(zip(labels, counts)):
        out_images[row] = images[i]
        out_labels[row:row + count] = label
        out_ids.append(ids[i])
        for v in range(1, count):
            jobs.append((row + v, i, int(label), v))
            out_ids.append(f"{ids[i]}#aug{v}")
        row += count

    def build(job):
        target, i, label, v = job
        rng = np.random.default_rng([config.seed, label, i, v])
        out_images[target] = augment_variant(images[i], config, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(build, jobs))
    else:
        for job in jobs:
            build(job)
    logger.info('Augmented %d training images to %d', len(labels), total)
    return out_images, out_labels, out_ids
