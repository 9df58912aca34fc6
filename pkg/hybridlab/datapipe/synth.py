"""
Synthetic two-class cell images written in the loader's directory layout.

Normal-like cells are filled ellipses with smooth shading; blast-like cells are
irregular blobs with high-frequency texture and dark spots. Both classes draw
stain color and overall brightness from the same distributions, so the mean
pixel value alone does not separate them.
"""
import logging
import pathlib

import numpy as np
from PIL import Image

from hybridlab.datapipe.loader import CLASS_NAMES
from hybridlab.errors import ConfigError, StorageError

logger = logging.getLogger(__name__)


def _background(rng, size):
    base = np.array([0.86, 0.74, 0.80]) + rng.uniform(-0.04, 0.04, 3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    shade = 0.03 * np.sin(2 * np.pi * (rng.uniform(0.3, 1.0) * xx + rng.uniform(0.3, 1.0) * yy) + rng.uniform(0, 2 * np.pi))
    return base[None, None, :] + shade[:, :, None]


def _stain(rng):
    return np.array([0.42, 0.28, 0.58]) + rng.uniform(-0.08, 0.08, 3)


def _polar(rng, size):
    center = size / 2 + rng.uniform(-0.08, 0.08, 2) * size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    return dy, dx


def _normal_cell(rng, size):
    dy, dx = _polar(rng, size)
    radius = rng.uniform(0.22, 0.32) * size
    ratio = rng.uniform(0.8, 1.0)
    angle = rng.uniform(0, np.pi)
    u = (dx * np.cos(angle) + dy * np.sin(angle)) / radius
    v = (-dx * np.sin(angle) + dy * np.cos(angle)) / (radius * ratio)
    rho = np.sqrt(u * u + v * v)
    mask = 1 / (1 + np.exp((rho - 1) * 12))
    freq = rng.uniform(0.5, 1.5, 2)
    texture = 1 - 0.25 * rho ** 2 + 0.05 * np.sin(2 * np.pi * (freq[0] * dx + freq[1] * dy) / size)
    cell = _stain(rng)[None, None, :] * texture[:, :, None]
    return mask, cell


def _blast_cell(rng, size):
    dy, dx = _polar(rng, size)
    radius = rng.uniform(0.22, 0.32) * size
    theta = np.arctan2(dy, dx)
    edge = np.ones_like(theta)
    for k in range(2, 7):
        edge += rng.uniform(0, 0.12) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    rho = np.sqrt(dx * dx + dy * dy) / (radius * edge)
    mask = 1 / (1 + np.exp((rho - 1) * 12))
    speckle = rng.uniform(-0.15, 0.15, (size, size))
    texture = 0.87 + speckle
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(-0.5, 0.5, 2) * radius
        spot = np.exp(-((dy - cy) ** 2 + (dx - cx) ** 2) / (2 * (0.06 * radius + 0.5) ** 2))
        texture -= 0.35 * spot
    cell = _stain(rng)[None, None, :] * texture[:, :, None]
    return mask, cell


def render_cell(label: int, size: int, rng) -> np.ndarray:
    """Renders one image [size, size, 3] of uint8 values for the given class."""
    background = _background(rng, size)
    mask, cell = (_blast_cell if label == 1 else _normal_cell)(rng, size)
    img = background * (1 - mask[:, :, None]) + cell * mask[:, :, None]
    img *= rng.uniform(0.85, 1.1)
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


def synth_generate(out_dir, per_class: int, image_size: int = 64, seed: int = 0) -> dict:
    """
    Writes a synthetic dataset: `per_class` PNG images for each class.

    Every image has its own generator seeded by (seed, label, index), so the same seed
    always produces byte-identical files.

    Args:
        out_dir (str | pathlib.Path): Dataset root; class subdirectories are created.
        per_class (int): Images per class, at least 1.
        image_size (int): Height and width, at least 16.
        seed (int): Seed.

    Returns:
        dict: Class name -> list of written paths.

    Raises:
        ConfigError: If the size or count is too small.
        StorageError: If the directory or a file cannot be written.
    """
    if image_size < 16:
        raise ConfigError(f"Synthetic image size must be at least 16, got {image_size}")
    if per_class < 1:
        raise ConfigError(f"Images per class must be at least 1, got {per_class}")
    out_dir = pathlib.Path(out_dir)
    written = {}
    try:
        for label, name in enumerate(CLASS_NAMES):
            class_dir = out_dir / name
            class_dir.mkdir(parents=True, exist_ok=True)
            written[name] = []
            for i in range(per_class):
                rng = np.random.default_rng([seed, label, i])
                path = class_dir / f"{name}_{i:04d}.png"
                Image.fromarray(render_cell(label, image_size, rng)).save(path, format='PNG')
                written[name].append(path)
    except OSError as e:
        raise StorageError(f"Could not write synthetic dataset to '{out_dir}': {e}")
    logger.info('Wrote %d images per class (%dx%d) to %s', per_class, image_size, image_size, out_dir)
    return written
