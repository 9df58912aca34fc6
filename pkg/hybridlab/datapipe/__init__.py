from hybridlab.datapipe.augment import OPS, AugmentConfig, augment, augment_expand
from hybridlab.datapipe.loader import (
    CLASS_NAMES, SPLITS, BatchPrefetcher, DatasetManifest, ImageRecord, SplitConfig,
    batches, decode_images, load_dataset, stratified_split,
)
from hybridlab.datapipe.preprocess import (
    IMAGENET_MEAN, NormalizationStats, bicubic_resize, center_crop, compute_dataset_stats,
    constant_stats, load_stats, normalize, save_stats,
)
from hybridlab.datapipe.synth import synth_generate
