"""
hybridlab: a NumPy hybrid VGG + MobileNet classifier with intermediate-layer feature fusion,
its training recipe and the experiment harness around it.
"""
from hybridlab.architectures import (
    DEFAULT_MOBILE_PLAN, DEFAULT_VGG_PLAN, FULL_MOBILE_PLAN, FULL_VGG_PLAN, Network, NetworkSpec,
    backward, build_hybrid, build_mobilenet_branch, build_plain, build_vgg_branch, forward, init_params,
)
from hybridlab.checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from hybridlab.config import RunConfig, get_config, load_run_config, read_run_config
from hybridlab.errors import (
    ConfigError, DataError, DimensionError, FormatError, HybridLabError, ItemError, NumericError, StorageError,
)
from hybridlab.gradcheck import cmd_gradcheck
from hybridlab.grid import cmd_grid
from hybridlab.metrics import ConfusionMatrix, MetricsReport, accuracy, confusion, sensitivity, specificity
from hybridlab.optim import Optimizer, OptimizerConfig, OptimizerState
from hybridlab.training import cmd_eval, evaluate, train

cmd_train = train
