import numpy as np
import pytest

from hybridlab.architectures import build_hybrid, build_mobilenet_branch, build_vgg_branch, init_params
from hybridlab.checkpoint import MAGIC, checkpoint_load, checkpoint_save
from hybridlab.errors import ConfigError, FormatError, StorageError
from hybridlab.gradcheck import tiny_hybrid_spec
from hybridlab.optim import Optimizer, OptimizerConfig


@pytest.fixture
def trained(rng):
    """A tiny network and an Adam optimizer after one step."""
    net = init_params(tiny_hybrid_spec(), seed=2)
    optimizer = Optimizer(OptimizerConfig('adam'))
    _, _, ctx = net.forward(rng.standard_normal((3, 3, 8, 8)).astype(np.float32))
    net.backward(ctx, [0, 1, 1])
    optimizer.step(net.parameters)
    return net, optimizer


class TestRoundTrip:

    def test_bitwise(self, tmp_path, trained):
        net, optimizer = trained
        path = checkpoint_save(net, optimizer, {'seed': 2, 'optimizer': 'adam'}, tmp_path / 'last.fusn',
                               epoch=3, step=17, best_epoch=2, best_val=71.25)
        ckpt = checkpoint_load(path)
        assert (ckpt.epoch, ckpt.step, ckpt.best_epoch, ckpt.best_val) == (3, 17, 2, 71.25)
        assert ckpt.optimizer_kind == 'adam'
        assert ckpt.optimizer_state.t == 1
        assert ckpt.config['seed'] == 2
        assert set(ckpt.parameters) == set(net.parameters)
        for name, param in net.parameters.items():
            assert ckpt.parameters[name].dtype == param.value.dtype
            assert ckpt.parameters[name].tobytes() == param.value.tobytes()
        for name, slots in optimizer.state.buffers.items():
            for slot, value in slots.items():
                assert ckpt.optimizer_state.buffers[name][slot].tobytes() == value.tobytes()

    def test_rebuilt_network_predicts_identically(self, tmp_path, trained, rng):
        net, optimizer = trained
        ckpt = checkpoint_load(checkpoint_save(net, optimizer, {}, tmp_path / 'best.fusn'))
        batch = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        assert ckpt.network().forward(batch)[0].tobytes() == net.forward(batch)[0].tobytes()

    def test_no_best_yet(self, tmp_path, trained):
        net, optimizer = trained
        assert checkpoint_load(checkpoint_save(net, optimizer, {}, tmp_path / 'a.fusn')).best_val is None

    def test_float64(self, tmp_path):
        net = init_params(tiny_hybrid_spec(), seed=0, dtype=np.float64)
        ckpt = checkpoint_load(checkpoint_save(net, Optimizer(OptimizerConfig('sgd')), {}, tmp_path / 'a.fusn'))
        assert ckpt.parameters['head.fc1.weight'].dtype == np.float64
        assert ckpt.optimizer_kind == 'sgd'
        assert ckpt.optimizer_state.buffers == {}

    def test_no_temporary_file_left(self, tmp_path, trained):
        net, optimizer = trained
        checkpoint_save(net, optimizer, {}, tmp_path / 'run' / 'last.fusn')
        assert [p.name for p in (tmp_path / 'run').iterdir()] == ['last.fusn']


class TestCorruption:

    @pytest.fixture
    def data(self, tmp_path, trained):
        net, optimizer = trained
        return checkpoint_save(net, optimizer, {'seed': 0}, tmp_path / 'good.fusn').read_bytes()

    def test_starts_with_magic(self, data):
        assert data[:4] == MAGIC

    def test_bad_magic(self, tmp_path, data):
        path = tmp_path / 'bad.fusn'
        path.write_bytes(b'XXXX' + data[4:])
        with pytest.raises(FormatError):
            checkpoint_load(path)

    def test_unknown_version(self, tmp_path, data):
        path = tmp_path / 'v2.fusn'
        path.write_bytes(data[:4] + (2).to_bytes(2, 'little') + data[6:])
        with pytest.raises(FormatError, match='version 2'):
            checkpoint_load(path)

    @pytest.mark.parametrize('fraction', [0.0, 0.01, 0.3, 0.6, 0.99])
    def test_truncated(self, tmp_path, data, fraction):
        path = tmp_path / 'short.fusn'
        path.write_bytes(data[:int(len(data) * fraction)])
        with pytest.raises(StorageError):
            checkpoint_load(path)

    def test_trailing_bytes(self, tmp_path, data):
        path = tmp_path / 'long.fusn'
        path.write_bytes(data + b'\0')
        with pytest.raises(FormatError):
            checkpoint_load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError):
            checkpoint_load(tmp_path / 'none.fusn')

    def test_parameters_for_another_architecture(self, tmp_path, trained):
        net, optimizer = trained
        ckpt = checkpoint_load(checkpoint_save(net, optimizer, {}, tmp_path / 'a.fusn'))
        other = init_params(build_hybrid(build_vgg_branch([(3, 1)], input_size=8),
                                         build_mobilenet_branch([2] * 5, input_size=8, stem_width=2),
                                         hidden_units=4), seed=0)
        with pytest.raises(ConfigError):
            other.load_state_dict(ckpt.parameters)
