"""
Image preprocessing: center crop, bicubic resize and the two normalization schemes.
"""
import logging
from dataclasses import dataclass

import numpy as np

from hybridlab.errors import ConfigError, DataError, DimensionError, StorageError

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (123.68, 116.78, 103.94)
NORMALIZATION_MODES = ('dataset', 'constant')


@dataclass(frozen=True)
class NormalizationStats:
    """
    Per-channel statistics.

    Attributes:
        mean (tuple): Per-channel mean; on the 0-255 scale when source is 'constant'.
        std (tuple): Per-channel standard deviation; unused for 'constant'.
        source (str): 'dataset' (computed from the training split) or 'constant'.
    """
    mean: tuple
    std: tuple = (1.0, 1.0, 1.0)
    source: str = 'dataset'

    def __post_init__(self):
        if self.source not in NORMALIZATION_MODES:
            raise ConfigError(f"Normalization source must be one of {NORMALIZATION_MODES}, got '{self.source}'")
        if self.source == 'dataset' and min(self.std) <= 0:
            raise DataError(f"Standard deviations must be positive, got {self.std}")


def constant_stats(mean=IMAGENET_MEAN) -> NormalizationStats:
    return NormalizationStats(tuple(float(m) for m in mean), (1.0, 1.0, 1.0), 'constant')


def center_crop(img, target) -> np.ndarray:
    """
    Cuts the centered (h, w) window out of an image [..., H, W].

    The window starts at ((H - h) // 2, (W - w) // 2); a 450x450 image cropped to
    380x380 starts at (35, 35).

    Raises:
        DimensionError: If the target is larger than the image.
    """
    h, w = target
    height, width = img.shape[-2:]
    if h > height or w > width:
        raise DimensionError(f"Crop {h}x{w} larger than image {height}x{width}")
    top, left = (height - h) // 2, (width - w) // 2
    return img[..., top:top + h, left:left + w].copy()


def _keys_kernel(d, a=-0.5):
    d2, d3 = d * d, d * d * d
    near = (a + 2) * d3 - (a + 3) * d2 + 1
    far = a * d3 - 5 * a * d2 + 8 * a * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def _resample_axis(in_size: int, out_size: int):
    """Source indices [out, 4] and weights [out, 4] for one axis, pixel centers aligned."""
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    base = np.floor(src).astype(np.int64)
    offsets = np.arange(-1, 3)
    index = np.clip(base[:, None] + offsets, 0, in_size - 1)
    weights = _keys_kernel(np.abs((src - base)[:, None] - offsets))
    return index, weights


def bicubic_resize(img, target) -> np.ndarray:
    """
    Resizes an image [C, H, W] with the Keys cubic kernel (a = -0.5).

    Output pixel centers map to input coordinates as (i + 0.5) * H / h - 0.5 and
    samples outside the image are clamped to the edge. The kernel weights sum to one,
    so constant images stay constant; affine ramps are reproduced away from the border.

    Args:
        img (np.ndarray): Image [C, H, W].
        target (tuple): (h, w), each at least 2.

    Returns:
        np.ndarray: Image [C, h, w] with the input's element type.
    """
    h, w = target
    if h < 2 or w < 2:
        raise DimensionError(f"Resize target must be at least 2x2, got {h}x{w}")
    data = np.asarray(img, dtype=np.float64)
    rows, row_w = _resample_axis(data.shape[-2], h)
    cols, col_w = _resample_axis(data.shape[-1], w)
    out = np.einsum('hk,chkw->chw', row_w, data[:, rows, :])
    out = np.einsum('wk,chwk->chw', col_w, out[:, :, cols])
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


def compute_dataset_stats(images) -> NormalizationStats:
    """
    Per-channel mean and (population) standard deviation over a batch of training images.

    Args:
        images (np.ndarray): Training images [N, 3, H, W], before augmentation.

    Returns:
        NormalizationStats: Source 'dataset'.

    Raises:
        DataError: If there are no images or a channel is constant.
    """
    if len(images) == 0:
        raise DataError("Cannot compute statistics of an empty training split")
    data = np.asarray(images, dtype=np.float64)
    mean = data.mean(axis=(0, 2, 3))
    std = data.std(axis=(0, 2, 3))
    for channel, sigma in enumerate(std):
        if sigma == 0:
            raise DataError(f"Channel {channel} is constant over the training split; standard deviation is 0")
    stats = NormalizationStats(tuple(float(m) for m in mean), tuple(float(s) for s in std), 'dataset')
    logger.info('Dataset statistics: mean %s std %s', np.round(mean, 4).tolist(), np.round(std, 4).tolist())
    return stats


def normalize(img, stats: NormalizationStats) -> np.ndarray:
    """
    Normalizes an image [3, H, W] or batch [N, 3, H, W] of [0, 1] values.

    'dataset': (x - mean) / std per channel.
    'constant': x * 255 - mean per channel, no division.
    """
    mean = np.asarray(stats.mean, dtype=np.float64)[:, None, None]
    data = np.asarray(img, dtype=np.float64)
    if stats.source == 'constant':
        out = data * 255.0 - mean
    else:
        out = (data - mean) / np.asarray(stats.std, dtype=np.float64)[:, None, None]
    return out.astype(img.dtype)


def save_stats(path, stats: NormalizationStats) -> None:
    """Writes three mean lines then three standard deviation lines."""
    try:
        with open(path, 'w') as stats_file:
            for value in (*stats.mean, *stats.std):
                stats_file.write(f"{value!r}\n")
    except OSError as e:
        raise StorageError(f"Could not write statistics to '{path}': {e}")


def load_stats(path, source: str = 'dataset') -> NormalizationStats:
    try:
        with open(path, 'r') as stats_file:
            values = [float(line) for line in stats_file if line.strip()]
    except (OSError, ValueError) as e:
        raise StorageError(f"Could not read statistics from '{path}': {e}")
    if len(values) != 6:
        raise StorageError(f"'{path}' must hold 6 values, found {len(values)}")
    return NormalizationStats(tuple(values[:3]), tuple(values[3:]), source)
