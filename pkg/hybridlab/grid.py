"""
The experiment grid: every optimizer with both normalization schemes on the hybrid
classifier, then the two single-branch classifiers and the hybrid with the best of
those settings.

Each run trains in its own subdirectory. A failing run leaves empty metric cells and
a comment line at the end of grid.csv; the remaining runs continue.
"""
import logging
import pathlib

import numpy as np
import pandas

from hybridlab.config import RunConfig
from hybridlab.errors import ConfigError
from hybridlab.training import train

logger = logging.getLogger(__name__)

GRID_FILE = 'grid.csv'
OPTIMIZERS = ('adam', 'rmsprop', 'sgd')
NORMALIZATIONS = ('constant', 'dataset')
ARCHITECTURES = ('mobile', 'vgg', 'hybrid')
SEEDS_PER_CELL = 3
METRIC_COLUMNS = ['accuracy', 'sensitivity', 'specificity', 'loss', 'n']
COLUMNS = ['stage', 'architecture', 'optimizer', 'normalization'] + METRIC_COLUMNS + ['seeds']

# stage, architecture, optimizer, normalization, accuracy, sensitivity, specificity
REFERENCE_ROWS = [
    ('optimizer', 'hybrid', 'adam', 'constant', 95.14, 95.92, 93.44),
    ('optimizer', 'hybrid', 'rmsprop', 'constant', 93.38, 94.17, 91.61),
    ('optimizer', 'hybrid', 'sgd', 'constant', 93.17, 91.30, 98.42),
    ('optimizer', 'hybrid', 'adam', 'dataset', 96.17, 95.17, 98.58),
    ('optimizer', 'hybrid', 'rmsprop', 'dataset', 92.04, 90.58, 96.07),
    ('optimizer', 'hybrid', 'sgd', 'dataset', 89.76, 86.96, 99.53),
    ('architecture', 'mobile', 'adam', 'dataset', 88.00, 86.66, 92.24),
    ('architecture', 'vgg', 'adam', 'dataset', 80.77, 78.21, 96.32),
    ('architecture', 'hybrid', 'adam', 'dataset', 96.17, 95.17, 98.58),
]


def reference_lines() -> list:
    lines = ['# reference results: 380x380 cell images, 1000 epochs, ImageNet-initialized branches',
             '# stage,architecture,optimizer,normalization,accuracy,sensitivity,specificity']
    lines += ['# ' + ','.join(f"{v:.2f}" if isinstance(v, float) else v for v in row) for row in REFERENCE_ROWS]
    return lines


def _median(values):
    values = [v for v in values if v is not None and np.isfinite(v)]
    return round(float(np.median(values)), 2) if values else None


def _run_cell(config: RunConfig, data_root, run_dir: pathlib.Path, seeds, failures: list) -> dict:
    """Trains one grid cell once per seed; returns the median metrics and median best validation accuracy."""
    reports, best_vals = [], []
    for seed in seeds:
        seed_dir = run_dir / f"seed{seed}"
        try:
            result = train(config.replace(seed=seed), data_root, seed_dir)
        except Exception as e:
            logger.error('Run %s failed: %s', seed_dir, e)
            failures.append(f"{seed_dir.parent.name}/{seed_dir.name}: {type(e).__name__}: {e}")
            continue
        reports.append(result.report)
        best_vals.append(result.best_val)
    cell = {key: _median([getattr(r, key) for r in reports]) for key in METRIC_COLUMNS}
    if cell['n'] is not None:
        cell['n'] = int(cell['n'])
    cell['seeds'] = len(reports)
    cell['best_val'] = _median(best_vals)
    return cell


def cmd_grid(data_root, out_dir, config: RunConfig = None, seeds=None) -> pandas.DataFrame:
    """
    Runs the grid and writes grid.csv.

    Args:
        data_root (str | pathlib.Path): Dataset directory.
        out_dir (str | pathlib.Path): Directory for grid.csv and one subdirectory per run.
        config (RunConfig | None): Base configuration; architecture, optimizer and
            normalization are set per run.
        seeds (sequence | None): Seeds per cell; metrics are medians over seeds. Defaults to
            SEEDS_PER_CELL consecutive seeds starting at the config seed.

    Returns:
        pandas.DataFrame: Six optimizer x normalization rows followed by three architecture rows.

    Raises:
        ConfigError: If no seeds are given.
    """
    config = config or RunConfig()
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(SEEDS_PER_CELL)]
    if not seeds:
        raise ConfigError("The grid needs at least one seed")
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, failures, cells = [], [], {}

    for normalization in NORMALIZATIONS:
        for optimizer in OPTIMIZERS:
            logger.info('Grid: hybrid, %s, %s normalization', optimizer, normalization)
            cell_config = config.replace(architecture='hybrid', optimizer=optimizer, normalization=normalization)
            cell = _run_cell(cell_config, data_root, out_dir / f"hybrid-{optimizer}-{normalization}", seeds, failures)
            cells[(optimizer, normalization)] = cell
            rows.append({'stage': 'optimizer', 'architecture': 'hybrid', 'optimizer': optimizer,
                         'normalization': normalization, **cell})

    ranked = [(cell['best_val'], key) for key, cell in cells.items() if cell['best_val'] is not None]
    if ranked:
        best_optimizer, best_normalization = max(ranked, key=lambda item: item[0])[1]
    else:
        best_optimizer, best_normalization = config.optimizer, config.normalization
    logger.info('Grid: best setting %s with %s normalization', best_optimizer, best_normalization)

    for architecture in ARCHITECTURES:
        if architecture == 'hybrid':
            cell = cells[(best_optimizer, best_normalization)]
        else:
            cell_config = config.replace(architecture=architecture, optimizer=best_optimizer,
                                         normalization=best_normalization)
            run_dir = out_dir / f"{architecture}-{best_optimizer}-{best_normalization}"
            cell = _run_cell(cell_config, data_root, run_dir, seeds, failures)
        rows.append({'stage': 'architecture', 'architecture': architecture, 'optimizer': best_optimizer,
                     'normalization': best_normalization, **cell})

    table = pandas.DataFrame(rows)[COLUMNS].astype({'n': 'Int64'})
    path = out_dir / GRID_FILE
    with open(path, 'w', newline='') as grid_file:
        grid_file.write('\n'.join(reference_lines()) + '\n')
        table.to_csv(grid_file, index=False, float_format='%.2f')
        for failure in failures:
            grid_file.write(f"# failed: {' '.join(failure.splitlines())}\n")
    logger.info('Wrote %s (%d rows, %d failed runs)', path, len(table), len(failures))
    return table
