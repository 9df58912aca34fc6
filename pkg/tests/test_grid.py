import pathlib

import pandas
import pytest

from hybridlab import grid
from hybridlab.config import RunConfig
from hybridlab.errors import ConfigError, NumericError
from hybridlab.grid import GRID_FILE, REFERENCE_ROWS, SEEDS_PER_CELL, cmd_grid, reference_lines
from hybridlab.metrics import MetricsReport
from hybridlab.training import TrainResult

ACCURACY = {'adam': 80.0, 'sgd': 90.0}


def fake_train(config, data_root, out_dir, resume=None):
    """Instant stand-in for training: accuracy depends on the setting and the seed; RMSProp always diverges."""
    if config.optimizer == 'rmsprop':
        raise NumericError('Training loss became nan at epoch 1, step 1')
    accuracy = ACCURACY[config.optimizer] + (1.0 if config.normalization == 'dataset' else 0.0) + config.seed
    if config.architecture != 'hybrid':
        accuracy -= 10.0
    report = MetricsReport(accuracy, accuracy, accuracy, 0.25, 10)
    return TrainResult(report, 1, accuracy, pathlib.Path(out_dir))


@pytest.fixture
def fake_grid(monkeypatch, tmp_path):
    monkeypatch.setattr(grid, 'train', fake_train)
    table = cmd_grid('unused', tmp_path, seeds=[0, 1, 2])
    return table, tmp_path / GRID_FILE


class TestGridSelection:

    def test_row_layout(self, fake_grid):
        table, _ = fake_grid
        assert len(table) == 9
        assert table['stage'].tolist() == ['optimizer'] * 6 + ['architecture'] * 3
        assert table['architecture'].tolist()[-3:] == ['mobile', 'vgg', 'hybrid']
        assert list(zip(table['optimizer'][:6], table['normalization'][:6])) == [
            ('adam', 'constant'), ('rmsprop', 'constant'), ('sgd', 'constant'),
            ('adam', 'dataset'), ('rmsprop', 'dataset'), ('sgd', 'dataset'),
        ]

    def test_median_over_seeds(self, fake_grid):
        table, _ = fake_grid
        row = table[(table['optimizer'] == 'adam') & (table['normalization'] == 'dataset')].iloc[0]
        assert row['accuracy'] == 82.0
        assert row['seeds'] == 3

    def test_architecture_rows_use_best_setting(self, fake_grid):
        table, _ = fake_grid
        stage = table[table['stage'] == 'architecture']
        assert set(stage['optimizer']) == {'sgd'}
        assert set(stage['normalization']) == {'dataset'}
        assert stage['accuracy'].tolist() == [82.0, 82.0, 92.0]

    def test_failed_runs_leave_empty_cells(self, fake_grid):
        table, path = fake_grid
        failed = table[table['optimizer'] == 'rmsprop']
        assert len(failed) == 2
        assert failed['accuracy'].isna().all()
        assert (failed['seeds'] == 0).all()
        failure_lines = [line for line in path.read_text().splitlines() if line.startswith('# failed:')]
        assert len(failure_lines) == 6
        assert all('NumericError' in line for line in failure_lines)

    def test_csv_file(self, fake_grid):
        table, path = fake_grid
        lines = path.read_text().splitlines()
        assert lines[:len(reference_lines())] == reference_lines()
        written = pandas.read_csv(path, comment='#')
        assert len(written) == 9
        assert written['accuracy'].tolist()[-1] == 92.0
        assert written['accuracy'].isna().sum() == 2

    def test_default_seeds(self, monkeypatch, tmp_path):
        monkeypatch.setattr(grid, 'train', fake_train)
        table = cmd_grid('unused', tmp_path, RunConfig(seed=0))
        trained = table[table['optimizer'] != 'rmsprop']
        assert SEEDS_PER_CELL == 3
        assert (trained['seeds'] == SEEDS_PER_CELL).all()
        row = table[(table['optimizer'] == 'adam') & (table['normalization'] == 'dataset')].iloc[0]
        assert row['accuracy'] == 82.0

    def test_no_seeds(self, tmp_path):
        with pytest.raises(ConfigError):
            cmd_grid('unused', tmp_path, seeds=[])


class TestReferenceRows:

    def test_reference_table(self):
        assert len(REFERENCE_ROWS) == 9
        adam_dataset = [row for row in REFERENCE_ROWS if row[:4] == ('optimizer', 'hybrid', 'adam', 'dataset')][0]
        assert adam_dataset[4:] == (96.17, 95.17, 98.58)
        assert all(line.startswith('# ') for line in reference_lines())


class TestGridEndToEnd:

    def test_tiny_grid(self, tiny_config, tiny_dataset, tmp_path):
        table = cmd_grid(tiny_dataset, tmp_path, tiny_config.replace(epochs=1), seeds=[0])
        assert len(table) == 9
        row = table[(table['optimizer'] == 'adam') & (table['normalization'] == 'dataset')].iloc[0]
        assert row['seeds'] == 1
        assert row['n'] == 2
        assert (tmp_path / GRID_FILE).is_file()
        assert (tmp_path / 'hybrid-adam-dataset' / 'seed0' / 'metrics.csv').is_file()
