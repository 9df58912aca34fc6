import numpy as np
import pytest

from hybridlab import architectures
from hybridlab.checkpoint import checkpoint_load
from hybridlab.config import REPO_DIR, load_run_config
from hybridlab.datapipe import compute_dataset_stats, load_stats, synth_generate
from hybridlab.errors import ConfigError, DataError, NumericError
from hybridlab.metrics import read_log, read_rows
from hybridlab.pipeline import check_provenance, prepare_data
from hybridlab.training import cmd_eval, evaluate, train


class TestTrain:

    def test_metrics_rows(self, tiny_run):
        rows = read_rows(tiny_run.metrics_path)
        assert [(row[0], row[1]) for row in rows] == [
            ('0', 'val'), ('1', 'train'), ('1', 'val'), ('2', 'train'), ('2', 'val'), (str(tiny_run.best_epoch), 'test'),
        ]
        assert [int(row[6]) for row in rows] == [4, 28, 4, 28, 4, 2]

    def test_metric_ranges(self, tiny_run):
        frame = read_log(tiny_run.metrics_path)
        for column in ('accuracy', 'sensitivity', 'specificity'):
            values = frame[column].dropna()
            assert ((values >= 0) & (values <= 100)).all()
        assert (frame['loss'] > 0).all()

    def test_run_directory(self, tiny_run):
        assert tiny_run.best_path.is_file()
        assert tiny_run.last_path.is_file()
        assert (tiny_run.out_dir / 'stats.txt').is_file()
        last = checkpoint_load(tiny_run.last_path)
        assert last.epoch == 2
        assert last.step == 2 * 4
        assert last.best_epoch == tiny_run.best_epoch
        assert checkpoint_load(tiny_run.best_path).epoch == tiny_run.best_epoch

    def test_best_epoch_has_best_validation_accuracy(self, tiny_run):
        frame = read_log(tiny_run.metrics_path)
        val = frame[frame['split'] == 'val'].set_index('epoch')['accuracy']
        assert val[tiny_run.best_epoch] == val.max()
        assert tiny_run.best_val == val.max()

    def test_zero_epochs(self, tiny_config, tiny_dataset, tmp_path):
        result = train(tiny_config.replace(epochs=0), tiny_dataset, tmp_path)
        rows = read_rows(result.metrics_path)
        assert [(row[0], row[1]) for row in rows] == [('0', 'val'), ('0', 'test')]
        assert result.best_epoch == 0

    def test_deterministic(self, tiny_config, tiny_dataset, tmp_path):
        config = tiny_config.replace(epochs=1)
        first = train(config, tiny_dataset, tmp_path / 'a')
        second = train(config, tiny_dataset, tmp_path / 'b')
        assert first.metrics_path.read_bytes() == second.metrics_path.read_bytes()
        assert first.last_path.read_bytes() == second.last_path.read_bytes()

    def test_worker_count_does_not_change_the_run(self, tiny_config, tiny_dataset, tmp_path):
        config = tiny_config.replace(epochs=1)
        inline = train(config, tiny_dataset, tmp_path / 'inline')
        pooled = train(config.replace(single_thread=False, workers=3), tiny_dataset, tmp_path / 'pooled')
        assert inline.metrics_path.read_bytes() == pooled.metrics_path.read_bytes()

    def test_resume_matches_uninterrupted_run(self, tiny_config, tiny_dataset, tmp_path):
        straight = train(tiny_config, tiny_dataset, tmp_path / 'straight')
        train(tiny_config.replace(epochs=1), tiny_dataset, tmp_path / 'resumed')
        resumed = train(tiny_config, tiny_dataset, tmp_path / 'resumed', resume=tmp_path / 'resumed' / 'last.fusn')
        assert resumed.metrics_path.read_bytes() == straight.metrics_path.read_bytes()
        first, second = checkpoint_load(straight.last_path), checkpoint_load(resumed.last_path)
        for name, value in first.parameters.items():
            assert second.parameters[name].tobytes() == value.tobytes()
        assert second.optimizer_state.t == first.optimizer_state.t

    def test_resume_into_new_directory(self, tiny_config, tiny_dataset, tmp_path):
        train(tiny_config.replace(epochs=1), tiny_dataset, tmp_path / 'a')
        result = train(tiny_config, tiny_dataset, tmp_path / 'b', resume=tmp_path / 'a' / 'last.fusn')
        assert [row[1] for row in read_rows(result.metrics_path)] == ['val', 'train', 'val', 'train', 'val', 'test']

    def test_resume_with_other_optimizer(self, tiny_config, tiny_dataset, tmp_path):
        train(tiny_config.replace(epochs=0), tiny_dataset, tmp_path)
        with pytest.raises(ConfigError):
            train(tiny_config.replace(optimizer='sgd'), tiny_dataset, tmp_path, resume=tmp_path / 'last.fusn')

    def test_resume_with_other_architecture(self, tiny_config, tiny_dataset, tmp_path):
        train(tiny_config.replace(epochs=0), tiny_dataset, tmp_path)
        with pytest.raises(ConfigError):
            train(tiny_config.replace(hidden_units=4), tiny_dataset, tmp_path, resume=tmp_path / 'last.fusn')

    def test_divergence_raises_numeric_error(self, tiny_config, tiny_dataset, tmp_path, monkeypatch):
        original = architectures.softmax_cross_entropy

        def diverged(logits, labels):
            _, probs, grad = original(logits, labels)
            return float('nan'), probs, grad

        monkeypatch.setattr(architectures, 'softmax_cross_entropy', diverged)
        with pytest.raises(NumericError):
            train(tiny_config, tiny_dataset, tmp_path)

    def test_split_too_small_for_validation(self, tiny_config, tmp_path):
        synth_generate(tmp_path / 'data', per_class=3, image_size=16, seed=0)
        with pytest.raises(DataError, match='empty'):
            train(tiny_config, tmp_path / 'data', tmp_path / 'run')

    @pytest.mark.parametrize('architecture', ['vgg', 'mobile'])
    def test_single_branch_classifiers(self, tiny_config, tiny_dataset, tmp_path, architecture):
        result = train(tiny_config.replace(architecture=architecture, epochs=1), tiny_dataset, tmp_path)
        assert result.report.n == 2


class TestEvaluate:

    def test_eval_matches_train_test_row(self, tiny_run, tiny_dataset, tmp_path):
        report = cmd_eval(tiny_run.best_path, tiny_dataset, 'test', out_path=tmp_path / 'eval.csv')
        assert report == tiny_run.report
        assert read_rows(tmp_path / 'eval.csv')[0] == read_rows(tiny_run.metrics_path)[-1]

    def test_appends_next_to_checkpoint(self, tiny_run, tiny_dataset):
        before = len(read_rows(tiny_run.out_dir / 'eval.csv')) if (tiny_run.out_dir / 'eval.csv').is_file() else 0
        cmd_eval(tiny_run.best_path, tiny_dataset, 'val')
        assert len(read_rows(tiny_run.out_dir / 'eval.csv')) == before + 1

    def test_architecture_mismatch(self, tiny_run, tiny_dataset, tiny_config):
        with pytest.raises(ConfigError):
            cmd_eval(tiny_run.best_path, tiny_dataset, 'test', tiny_config.replace(hidden_units=16))

    def test_unknown_split(self, tiny_run, tiny_dataset):
        with pytest.raises(ConfigError):
            cmd_eval(tiny_run.best_path, tiny_dataset, 'holdout')

    def test_evaluate_is_pure(self, tiny_run, tiny_config, tiny_dataset):
        net = checkpoint_load(tiny_run.best_path).network()
        data = prepare_data(tiny_config, tiny_dataset, splits=('val',), stats=load_stats(tiny_run.out_dir / 'stats.txt'))
        before = net.state_dict()
        first = evaluate(net, data.splits['val'].images, data.splits['val'].labels)
        second = evaluate(net, data.splits['val'].images, data.splits['val'].labels, batch_size=1)
        assert first.accuracy == second.accuracy
        assert first.loss == pytest.approx(second.loss, rel=1e-5)
        for name, value in net.state_dict().items():
            assert value.tobytes() == before[name].tobytes()

    def test_non_finite_loss(self, tiny_run, tiny_config, tiny_dataset):
        net = checkpoint_load(tiny_run.best_path).network()
        net.parameters['head.fc2.bias'].value[...] = np.nan
        data = prepare_data(tiny_config, tiny_dataset, splits=('val',), stats=load_stats(tiny_run.out_dir / 'stats.txt'))
        with pytest.raises(NumericError, match='evaluation loss'):
            evaluate(net, data.splits['val'].images, data.splits['val'].labels)

    def test_empty_split(self, tiny_run):
        net = checkpoint_load(tiny_run.best_path).network()
        with pytest.raises(DataError):
            evaluate(net, np.zeros((0, 3, 16, 16), dtype=np.float32), np.zeros(0, dtype=np.int64))


class TestProvenance:

    def test_statistics_from_training_images_only(self, tiny_config, tiny_dataset):
        data = prepare_data(tiny_config, tiny_dataset, augment=False)
        train_ids = {i for i, s in data.manifest.splits.items() if s == 'train'}
        assert data.stats_ids == train_ids
        raw = prepare_data(tiny_config.replace(normalization='constant', imagenet_mean=[0, 0, 0]), tiny_dataset,
                           splits=('train',), augment=False)
        expected = compute_dataset_stats(raw.splits['train'].images / 255.0)
        np.testing.assert_allclose(data.stats.mean, expected.mean, rtol=1e-5)
        np.testing.assert_allclose(data.stats.std, expected.std, rtol=1e-4)

    def test_augmented_ids_point_to_training_images(self, tiny_config, tiny_dataset):
        data = prepare_data(tiny_config, tiny_dataset)
        ids = data.splits['train'].ids
        assert len(ids) == 28
        assert all(data.manifest.splits[i.split('#')[0]] == 'train' for i in ids)

    def test_leaked_sample_detected(self, tiny_config, tiny_dataset):
        data = prepare_data(tiny_config, tiny_dataset)
        data.splits['train'].ids[0] = data.splits['test'].ids[0]
        with pytest.raises(DataError):
            check_provenance(data)

    def test_leaked_statistics_detected(self, tiny_config, tiny_dataset):
        data = prepare_data(tiny_config, tiny_dataset)
        data.stats_ids = data.stats_ids | {data.splits['val'].ids[0]}
        with pytest.raises(DataError):
            check_provenance(data)

    def test_constant_normalization(self, tiny_config, tiny_dataset):
        data = prepare_data(tiny_config.replace(normalization='constant'), tiny_dataset, augment=False)
        assert data.stats.source == 'constant'
        assert data.stats_ids == frozenset()
        assert data.splits['val'].images.max() <= 255.0 - 103.94 + 1e-3


@pytest.mark.slow
class TestLearningTrend:
    """Full training runs on synthetic data; minutes each, deselected by default."""

    SEEDS = (0, 1, 2)

    @pytest.fixture(scope='class')
    def hundred_per_class(self, tmp_path_factory):
        root = tmp_path_factory.mktemp('synth100')
        synth_generate(root, per_class=100, image_size=16, seed=11)
        return root

    def test_training_loss_falls_over_thirty_epochs(self, tiny_config, hundred_per_class, tmp_path):
        first, last = [], []
        for seed in self.SEEDS:
            result = train(tiny_config.replace(epochs=30, seed=seed), hundred_per_class, tmp_path / f"seed{seed}")
            frame = read_log(result.metrics_path)
            losses = frame[frame['split'] == 'train'].set_index('epoch')['loss']
            first.append(losses[1])
            last.append(losses[30])
        assert np.median(last) < np.median(first)

    def test_hybrid_matches_single_branches(self, tmp_path):
        synth_generate(tmp_path / 'data', per_class=200, image_size=64, seed=0)
        config = load_run_config(REPO_DIR / 'configs' / 'desk.conf', {'epochs': 3, 'single_thread': True})
        accuracy = {}
        for architecture in ('hybrid', 'vgg', 'mobile'):
            runs = [train(config.replace(architecture=architecture, seed=seed), tmp_path / 'data',
                          tmp_path / architecture / f"seed{seed}") for seed in self.SEEDS]
            accuracy[architecture] = np.median([run.report.accuracy for run in runs])
        assert accuracy['hybrid'] >= 90.0
        assert accuracy['hybrid'] >= max(accuracy['vgg'], accuracy['mobile']) - 2.0
