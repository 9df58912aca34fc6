"""
Training and evaluation of a classifier on a dataset directory.

A run directory holds:

    metrics.csv   one train and one val row per epoch (epoch 0: initial val only), then the test row
    stats.txt     the normalization statistics
    best.fusn     checkpoint with the best validation accuracy
    last.fusn     checkpoint after the latest epoch
"""
import json
import logging
import pathlib
import shutil
from dataclasses import dataclass

import numpy as np

from hybridlab.architectures import init_params
from hybridlab.checkpoint import checkpoint_load, checkpoint_save
from hybridlab.config import RunConfig
from hybridlab.datapipe import SPLITS, BatchPrefetcher, batches, constant_stats, load_stats, save_stats
from hybridlab.errors import ConfigError, DataError
from hybridlab.layers import EVAL, TRAIN, softmax_cross_entropy
from hybridlab.metrics import MetricsLog, MetricsReport, confusion, read_rows
from hybridlab.optim import Optimizer
from hybridlab.pipeline import prepare_data
from hybridlab.tensor import check_finite, default_dtype

logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.csv'
STATS_FILE = 'stats.txt'
BEST_FILE = 'best.fusn'
LAST_FILE = 'last.fusn'
EVAL_FILE = 'eval.csv'


@dataclass
class TrainResult:
    report: MetricsReport
    best_epoch: int
    best_val: float
    out_dir: pathlib.Path

    @property
    def metrics_path(self) -> pathlib.Path:
        return self.out_dir / METRICS_FILE

    @property
    def best_path(self) -> pathlib.Path:
        return self.out_dir / BEST_FILE

    @property
    def last_path(self) -> pathlib.Path:
        return self.out_dir / LAST_FILE


def _same_spec(a: dict, b: dict) -> bool:
    return json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def _better(candidate, best) -> bool:
    if candidate is None:
        return False
    return best is None or candidate > best


def evaluate(net, images, labels, batch_size: int = 32) -> MetricsReport:
    """
    Evaluation-mode forward pass over a split.

    Args:
        net (Network): The classifier.
        images (np.ndarray): Normalized images [N, 3, H, W].
        labels (np.ndarray): Labels [N].
        batch_size (int): Samples per forward pass.

    Returns:
        MetricsReport: Metrics and mean cross-entropy.

    Raises:
        DataError: If the split is empty.
        NumericError: If the loss is not finite.
    """
    if len(labels) == 0:
        raise DataError("Cannot evaluate an empty split")
    loss_sum = 0.0
    predictions = []
    for start in range(0, len(labels), batch_size):
        x, y = images[start:start + batch_size], labels[start:start + batch_size]
        logits, _, _ = net.forward(x, EVAL)
        loss, _, _ = softmax_cross_entropy(logits, y)
        loss_sum += loss * len(y)
        predictions.append(logits.argmax(axis=1))
    loss = loss_sum / len(labels)
    check_finite(loss, 'the evaluation loss')
    return MetricsReport.from_confusion(confusion(np.concatenate(predictions), labels), loss)


def train_epoch(net, optimizer, images, labels, config: RunConfig, epoch: int) -> MetricsReport:
    """
    One pass over the training arrays in the (seed, epoch) batch order.

    The dropout stream of each step is seeded by (seed, epoch, step), so an epoch
    depends only on the parameters and optimizer state it starts from.

    Returns:
        MetricsReport: Mean training loss and metrics of the training-mode predictions.

    Raises:
        NumericError: If a batch loss is not finite.
    """
    order = batches(np.arange(len(labels)), config.batch_size, config.seed, epoch)
    loss_sum = 0.0
    predictions = []
    truths = []
    for step, (x, y) in enumerate(BatchPrefetcher(images, labels, order, single_thread=config.single_thread)):
        net.zero_grad()
        logits, _, ctx = net.forward(x, TRAIN, np.random.default_rng([config.seed, epoch, step]))
        loss = net.backward(ctx, y)
        check_finite(loss, f"the training loss at epoch {epoch}, step {step + 1}")
        optimizer.step(net.parameters)
        logger.debug('Epoch %d step %d loss %.6f', epoch, step + 1, loss)
        loss_sum += loss * len(y)
        predictions.append(logits.argmax(axis=1))
        truths.append(y)
    return MetricsReport.from_confusion(confusion(np.concatenate(predictions), np.concatenate(truths)),
                                        loss_sum / len(labels))


def _resume(resume, net, optimizer, config: RunConfig, out_dir: pathlib.Path):
    """Loads parameters, optimizer state and counters, and rewinds the run directory to the checkpoint's epoch."""
    resume = pathlib.Path(resume)
    ckpt = checkpoint_load(resume)
    if not _same_spec(ckpt.config.get('network', {}), net.spec.to_dict()):
        raise ConfigError(f"Checkpoint '{resume}' was trained with a different architecture")
    if ckpt.optimizer_kind != config.optimizer:
        raise ConfigError(f"Checkpoint '{resume}' uses optimizer '{ckpt.optimizer_kind}', configuration says '{config.optimizer}'")
    net.load_state_dict(ckpt.parameters)
    optimizer.state = ckpt.optimizer_state
    source_dir = resume.parent
    for name in (METRICS_FILE, BEST_FILE):
        if not (out_dir / name).is_file():
            if not (source_dir / name).is_file():
                raise ConfigError(f"Cannot resume: '{name}' not found next to '{resume}'")
            shutil.copyfile(source_dir / name, out_dir / name)
    rows = [row for row in read_rows(out_dir / METRICS_FILE) if row[1] != 'test' and int(row[0]) <= ckpt.epoch]
    log = MetricsLog(out_dir / METRICS_FILE, rows)
    logger.info('Resuming from %s at epoch %d', resume, ckpt.epoch)
    return log, ckpt.epoch + 1, ckpt.step, ckpt.best_epoch, ckpt.best_val


def train(config: RunConfig, data_root, out_dir, resume=None) -> TrainResult:
    """
    Runs the full recipe: data preparation, the epoch loop and the final test evaluation.

    Every epoch appends a train row and a val row to metrics.csv and rewrites last.fusn;
    a strictly better validation accuracy rewrites best.fusn. The final test row is
    computed with the best checkpoint and carries its epoch.

    Args:
        config (RunConfig): Run configuration.
        data_root (str | pathlib.Path): Dataset directory.
        out_dir (str | pathlib.Path): Run directory, created if needed.
        resume (str | pathlib.Path | None): Checkpoint to continue from.

    Returns:
        TrainResult: Test metrics and the run directory.

    Raises:
        DataError: If the dataset is unusable.
        ConfigError: If the resume checkpoint does not fit the configuration.
        NumericError: If training diverges.
    """
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = config.to_dict()
    with default_dtype(config.dtype):
        data = prepare_data(config, data_root, augment=True)
        save_stats(out_dir / STATS_FILE, data.stats)
        net = init_params(config.network_spec(), config.seed, config.dtype)
        optimizer = Optimizer(config.optimizer_config())
        train_data, val_data, test_data = (data.splits[s] for s in SPLITS)
        logger.info('Training %s (%d parameters) with %s for %d epochs', net.spec.name,
                    net.parameter_count(), config.optimizer, config.epochs)

        if resume:
            log, first_epoch, step, best_epoch, best_val = _resume(resume, net, optimizer, config, out_dir)
        else:
            log = MetricsLog(out_dir / METRICS_FILE)
            first_epoch, step, best_epoch = 1, 0, 0
            initial = evaluate(net, val_data.images, val_data.labels, config.batch_size)
            log.write(initial.row(0, 'val'))
            best_val = initial.accuracy
            checkpoint_save(net, optimizer, echo, out_dir / BEST_FILE, 0, 0, 0, best_val)
            checkpoint_save(net, optimizer, echo, out_dir / LAST_FILE, 0, 0, 0, best_val)

        for epoch in range(first_epoch, config.epochs + 1):
            train_report = train_epoch(net, optimizer, train_data.images, train_data.labels, config, epoch)
            step = optimizer.state.t
            log.write(train_report.row(epoch, 'train'))
            val_report = evaluate(net, val_data.images, val_data.labels, config.batch_size)
            log.write(val_report.row(epoch, 'val'))
            if _better(val_report.accuracy, best_val):
                best_epoch, best_val = epoch, val_report.accuracy
                checkpoint_save(net, optimizer, echo, out_dir / BEST_FILE, epoch, step, best_epoch, best_val)
            checkpoint_save(net, optimizer, echo, out_dir / LAST_FILE, epoch, step, best_epoch, best_val)
            logger.info('Epoch %d/%d: train loss %.4f, val accuracy %s (best %s at epoch %d)', epoch, config.epochs,
                        train_report.loss, val_report.accuracy, best_val, best_epoch)

        best = checkpoint_load(out_dir / BEST_FILE).network(config.seed)
        report = evaluate(best, test_data.images, test_data.labels, config.batch_size)
        log.write(report.row(best_epoch, 'test'))
    logger.info('Test accuracy %s, sensitivity %s, specificity %s', report.accuracy, report.sensitivity, report.specificity)
    return TrainResult(report, best_epoch, best_val, out_dir)


def cmd_eval(checkpoint, data_root, split: str = 'test', config: RunConfig = None, out_path=None) -> MetricsReport:
    """
    Evaluates a checkpoint on one split of a dataset and appends the row to eval.csv.

    The split assignment and preprocessing are rebuilt from the configuration stored in
    the checkpoint. Dataset statistics come from the stats.txt next to the checkpoint
    when present and are recomputed from the training split otherwise.

    Args:
        checkpoint (str | pathlib.Path): Checkpoint file.
        data_root (str | pathlib.Path): Dataset directory.
        split (str): 'train', 'val' or 'test'.
        config (RunConfig | None): When given, its architecture must match the checkpoint's.
        out_path (str | pathlib.Path | None): CSV to append to; eval.csv next to the checkpoint by default.

    Returns:
        MetricsReport: The metrics; the row's epoch is the checkpoint's epoch.

    Raises:
        ConfigError: If the split is unknown or the architecture does not match.
    """
    if split not in SPLITS:
        raise ConfigError(f"Split must be one of {', '.join(SPLITS)}, got '{split}'")
    checkpoint = pathlib.Path(checkpoint)
    ckpt = checkpoint_load(checkpoint)
    echo = dict(ckpt.config)
    network = echo.pop('network', None)
    stored = RunConfig.from_mapping(echo)
    if network is None or not _same_spec(network, stored.network_spec().to_dict()):
        raise ConfigError(f"Checkpoint '{checkpoint}' holds an architecture that does not match its configuration")
    if config is not None and not _same_spec(network, config.network_spec().to_dict()):
        raise ConfigError(f"Checkpoint '{checkpoint}' does not match the configured architecture '{config.architecture}'")
    stats = None
    stats_path = checkpoint.parent / STATS_FILE
    if stored.normalization == 'constant':
        stats = constant_stats(stored.imagenet_mean)
    elif stats_path.is_file():
        stats = load_stats(stats_path)
    with default_dtype(stored.dtype):
        net = ckpt.network(stored.seed)
        data = prepare_data(stored, data_root, splits=(split,), stats=stats, augment=False)
        split_data = data.splits[split]
        report = evaluate(net, split_data.images, split_data.labels, stored.batch_size)
    row = report.row(ckpt.epoch, split)
    MetricsLog(out_path or checkpoint.parent / EVAL_FILE, append=True).write(row)
    return report
