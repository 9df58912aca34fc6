"""
Run configuration: the repository defaults in config.json, run files and CLI overrides,
merged into one validated `RunConfig`.
"""
import json
import logging
import pathlib
from dataclasses import asdict, dataclass, fields

from hybridlab.architectures import (
    DEFAULT_MOBILE_PLAN, DEFAULT_VGG_PLAN, NetworkSpec, build_hybrid, build_mobilenet_branch,
    build_plain, build_vgg_branch,
)
from hybridlab.datapipe.augment import OPS, AugmentConfig
from hybridlab.datapipe.loader import SplitConfig
from hybridlab.datapipe.preprocess import IMAGENET_MEAN, NORMALIZATION_MODES
from hybridlab.errors import ConfigError
from hybridlab.optim import OptimizerConfig
from hybridlab.tensor import dtype_for_width

logger = logging.getLogger(__name__)

ARCHITECTURES = ('vgg', 'mobile', 'hybrid')
REPO_DIR = pathlib.Path(__file__).parent.parent.resolve()


def get_config(file_path) -> dict:
    """
    Reads a JSON configuration file and returns its contents as a dictionary.

    Args:
        file_path (str | pathlib.Path): The path to the JSON configuration file.

    Returns:
        dict: A dictionary containing the contents of the JSON configuration file.

    Raises:
        FileNotFoundError: If the specified file_path does not exist.
        ConfigError: If the contents of the file are not a valid JSON object.

    Example:
        If 'config.json' contains {"epochs": 30}, calling get_config('config.json')
        will return {'epochs': 30}.
    """
    try:
        with open(file_path, 'r') as config_file:
            config = json.loads(config_file.read())
    except FileNotFoundError:
        raise FileNotFoundError(f"The configuration file at {file_path} was not found.")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Configuration file {file_path} is not valid JSON: {e}")
    if not isinstance(config, dict):
        raise ConfigError(f"Configuration file {file_path} must hold a JSON object")
    return config


def _decode_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_run_config(path) -> dict:
    """
    Reads a run configuration file.

    Files ending in '.json' are read as JSON objects. Any other file holds flat
    `key=value` lines; blank lines and lines starting with '#' are skipped, and each
    value is decoded as a JSON literal when it is one (30, 1e-3, true, [16, 32]) and
    kept as a plain string otherwise (adam, hybrid).

    Args:
        path (str | pathlib.Path): The run configuration file.

    Returns:
        dict: Key -> value.

    Raises:
        ConfigError: If the file does not exist or a line is not of the form key=value.

    Example:
        A file with the lines 'optimizer=sgd' and 'epochs=5' gives {'optimizer': 'sgd', 'epochs': 5}.
    """
    path = pathlib.Path(path)
    if not path.is_file():
        raise ConfigError(f"The run configuration file at {path} was not found.")
    if path.suffix == '.json':
        return get_config(path)
    values = {}
    with open(path, 'r') as run_file:
        for number, line in enumerate(run_file, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            key, sep, value = line.partition('=')
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{number}: expected key=value, got '{line}'")
            values[key.strip()] = _decode_value(value.strip())
    return values


@dataclass
class RunConfig:
    """
    Everything a training run depends on besides the dataset.

    Validation happens on construction, so an invalid configuration is rejected before
    any file is read or written.

    Attributes:
        architecture (str): 'hybrid', or 'vgg' / 'mobile' for the single-branch classifiers.
        input_size (int): Side of the square network input.
        crop_size (int | None): Side of the center crop taken before resizing; None disables it.
        vgg_plan (list): (width, convs) per VGG stage.
        mobile_plan (list): (width, stride) per depthwise-separable block.
        mobile_stem (int): Width of the MobileNet stem convolution.
        tap_blocks (list | None): 1-based MobileNet blocks to tap; None spreads five evenly.
        hidden_units (int): Units of the fused dense layer.
        dropout_rate (float): Dropout before the output layer.
        optimizer (str): 'sgd', 'adam' or 'rmsprop'.
        lr (float | None): Learning rate; None picks the optimizer default.
        normalization (str): 'dataset' statistics or 'constant' mean subtraction.
        imagenet_mean (list): Per-channel constants on the 0-255 scale for 'constant'.
        augment_ops (list): Enabled augmentation ops.
        augment_k_normal (int): Variants per normal training image.
        augment_k_all (int): Variants per ALL training image.
        epochs (int): Training epochs; 0 only evaluates the initial network.
        batch_size (int): Samples per optimizer step.
        seed (int): Seed for initialization, splits, batching and dropout.
        element_width (int): 32 or 64 bit floats.
        workers (int): Threads used for decoding, augmentation and batch prefetching.
        single_thread (bool): Run everything on the calling thread.
    """
    architecture: str = 'hybrid'
    input_size: int = 64
    crop_size: int = None
    vgg_plan: list = DEFAULT_VGG_PLAN
    mobile_plan: list = DEFAULT_MOBILE_PLAN
    mobile_stem: int = 16
    tap_blocks: list = None
    hidden_units: int = 256
    dropout_rate: float = 0.4
    optimizer: str = 'adam'
    lr: float = None
    momentum: float = 0.9
    beta1: float = 0.7
    beta2: float = 0.999
    rho: float = 0.8
    epsilon: float = 1e-7
    normalization: str = 'dataset'
    imagenet_mean: list = IMAGENET_MEAN
    augment_ops: list = OPS
    augment_k_normal: int = 7
    augment_k_all: int = 7
    augment_brightness: list = (-0.2, 0.2)
    augment_contrast: list = (0.8, 1.2)
    augment_gamma: list = (0.8, 1.2)
    augment_seed: int = None
    split_train: float = 0.7
    split_val: float = 0.2
    split_test: float = 0.1
    stratified: bool = True
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    element_width: int = 32
    workers: int = 1
    single_thread: bool = False

    def __post_init__(self):
        self._normalize_types()
        self.validate()

    def _normalize_types(self):
        self.vgg_plan = [list(stage) for stage in self.vgg_plan]
        self.mobile_plan = [list(block) if not isinstance(block, int) else [block, 1] for block in self.mobile_plan]
        self.imagenet_mean = [float(m) for m in self.imagenet_mean]
        self.augment_ops = list(self.augment_ops)
        for key in ('augment_brightness', 'augment_contrast', 'augment_gamma'):
            value = getattr(self, key)
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ConfigError(f"{key} must be a [low, high] pair, got {value!r}")
            setattr(self, key, [float(v) for v in value])
        if self.tap_blocks is not None:
            self.tap_blocks = list(self.tap_blocks)

    def validate(self) -> None:
        """
        Checks every field and builds every sub-configuration once.

        Raises:
            ConfigError: On the first invalid value.
        """
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"Architecture must be one of {', '.join(ARCHITECTURES)}, got '{self.architecture}'")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError(f"Normalization must be one of {', '.join(NORMALIZATION_MODES)}, got '{self.normalization}'")
        if len(self.imagenet_mean) != 3:
            raise ConfigError(f"imagenet_mean needs 3 values, got {self.imagenet_mean}")
        for key in ('input_size', 'mobile_stem', 'hidden_units', 'batch_size', 'workers'):
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{key} must be a positive integer, got {value!r}")
        if not isinstance(self.epochs, int) or isinstance(self.epochs, bool) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if self.crop_size is not None and (not isinstance(self.crop_size, int) or self.crop_size < 2):
            raise ConfigError(f"crop_size must be an integer of at least 2, got {self.crop_size!r}")
        if self.element_width not in (32, 64):
            raise ConfigError(f"element_width must be 32 or 64, got {self.element_width!r}")
        self.network_spec()
        self.optimizer_config()
        self.augment_config()
        self.split_config()

    @classmethod
    def from_mapping(cls, *sources) -> 'RunConfig':
        """
        Merges configuration mappings, later ones winning, and validates the result.

        Keys whose value is None are skipped, so unset CLI flags do not mask file values.

        Args:
            *sources (dict): Defaults, file values, CLI overrides, in increasing precedence.

        Returns:
            RunConfig: The validated configuration.

        Raises:
            ConfigError: If a key is unknown or a value invalid.
        """
        known = {f.name for f in fields(cls)}
        merged = {}
        for source in sources:
            for key, value in (source or {}).items():
                if key.startswith('_'):
                    continue
                if key not in known:
                    raise ConfigError(f"Unknown configuration key '{key}'")
                if value is not None:
                    merged[key] = value
        try:
            return cls(**merged)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration: {e}")

    def replace(self, **changes) -> 'RunConfig':
        return RunConfig.from_mapping(self.to_dict(), changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def dtype(self):
        return dtype_for_width(self.element_width)

    @property
    def data_workers(self) -> int:
        return 1 if self.single_thread else self.workers

    def network_spec(self) -> NetworkSpec:
        vgg = build_vgg_branch(self.vgg_plan, self.input_size)
        mobile = build_mobilenet_branch(self.mobile_plan, self.input_size, self.mobile_stem, self.tap_blocks)
        if self.architecture == 'vgg':
            return build_plain(vgg, self.hidden_units, self.dropout_rate)
        if self.architecture == 'mobile':
            return build_plain(mobile, self.hidden_units, self.dropout_rate)
        return build_hybrid(vgg, mobile, self.hidden_units, self.dropout_rate)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(self.optimizer, self.lr, self.momentum, self.beta1, self.beta2, self.rho, self.epsilon)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            ops=tuple(self.augment_ops),
            k_normal=self.augment_k_normal,
            k_all=self.augment_k_all,
            brightness=tuple(self.augment_brightness),
            contrast=tuple(self.augment_contrast),
            gamma=tuple(self.augment_gamma),
            seed=self.seed if self.augment_seed is None else self.augment_seed,
        )

    def split_config(self) -> SplitConfig:
        return SplitConfig(self.split_train, self.split_val, self.split_test, self.seed, self.stratified)


def load_run_config(path=None, overrides=None, defaults_path=None) -> RunConfig:
    """
    Builds the run configuration from the defaults file, an optional run file and overrides.

    Args:
        path (str | pathlib.Path | None): Run configuration file.
        overrides (dict | None): Values from the command line.
        defaults_path (str | pathlib.Path | None): Defaults file; the repository's config.json when None.

    Returns:
        RunConfig: The validated configuration.
    """
    defaults_path = pathlib.Path(defaults_path or REPO_DIR / 'config.json')
    defaults = get_config(defaults_path) if defaults_path.is_file() else {}
    file_values = read_run_config(path) if path else {}
    config = RunConfig.from_mapping(defaults, file_values, overrides)
    logger.debug('Run configuration: %s', config.to_dict())
    return config
