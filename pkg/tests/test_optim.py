import numpy as np
import pytest

from hybridlab.errors import ConfigError
from hybridlab.optim import KINDS, Optimizer, OptimizerConfig
from hybridlab.tensor import Parameter


def scalar_param(w=1.0, g=0.0, name='w'):
    return Parameter(name, np.array([w], dtype=np.float64), np.array([g], dtype=np.float64))


def run(kind, grads, w=1.0, **overrides):
    param = scalar_param(w)
    optimizer = Optimizer(OptimizerConfig(kind, **overrides))
    for g in grads:
        param.grad[...] = g
        optimizer.step({'w': param})
    return param, optimizer


def sgd_oracle(grads, w=1.0, lr=1e-4, mu=0.9):
    v = 0.0
    for g in grads:
        v = mu * v + g
        w = w - lr * v
    return w


def adam_oracle(grads, w=1.0, lr=1e-3, b1=0.7, b2=0.999, eps=1e-7):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return w


def rmsprop_oracle(grads, w=1.0, lr=1e-4, rho=0.8, eps=1e-7):
    s = 0.0
    for g in grads:
        s = rho * s + (1 - rho) * g * g
        w = w - lr * g / (s ** 0.5 + eps)
    return w


class TestOptimizerConfig:

    def test_default_learning_rates(self):
        assert OptimizerConfig('adam').lr == 1e-3
        assert OptimizerConfig('sgd').lr == 1e-4
        assert OptimizerConfig('rmsprop').lr == 1e-4

    def test_explicit_learning_rate_kept(self):
        assert OptimizerConfig('sgd', lr=0.05).lr == 0.05

    @pytest.mark.parametrize('overrides', [
        {'kind': 'lbfgs'}, {'lr': 0.0}, {'lr': -1e-3}, {'momentum': 1.0}, {'beta1': -0.1},
        {'beta2': 1.0}, {'rho': 1.5}, {'epsilon': 0.0},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            OptimizerConfig(**overrides)


class TestSGDMomentum:

    def test_single_step(self):
        param, optimizer = run('sgd', [0.5])
        assert param.value[0] == pytest.approx(0.99995, abs=1e-15)
        assert optimizer.state.buffers['w']['velocity'][0] == 0.5

    def test_two_steps(self):
        param, optimizer = run('sgd', [1.0, 1.0])
        assert optimizer.state.buffers['w']['velocity'][0] == pytest.approx(1.9)
        assert param.value[0] == pytest.approx(1 - 1e-4 * 2.9, abs=1e-15)


class TestAdam:

    def test_single_step(self):
        param, optimizer = run('adam', [1.0])
        assert param.value[0] == pytest.approx(0.999, abs=1e-9)
        assert optimizer.state.t == 1

    @pytest.mark.parametrize('scale', [0.01, 1.0, 100.0])
    def test_first_step_scale_invariant(self, scale):
        param, _ = run('adam', [scale])
        assert 1 - param.value[0] == pytest.approx(1e-3, rel=1e-3)


class TestRMSProp:

    def test_single_step(self):
        param, optimizer = run('rmsprop', [1.0])
        assert optimizer.state.buffers['w']['mean_square'][0] == pytest.approx(0.2)
        assert param.value[0] == pytest.approx(1 - 1e-4 / (np.sqrt(0.2) + 1e-7), abs=1e-15)
        assert param.value[0] == pytest.approx(0.9997764, abs=1e-8)

    def test_mean_square_converges_geometrically(self):
        _, optimizer = run('rmsprop', [1.0] * 50)
        assert optimizer.state.buffers['w']['mean_square'][0] == pytest.approx(1 - 0.8 ** 50, rel=1e-12)


class TestTrajectories:

    GRADS = [np.sin(t) + 0.3 for t in range(20)]

    @pytest.mark.parametrize('kind,oracle', [('sgd', sgd_oracle), ('adam', adam_oracle), ('rmsprop', rmsprop_oracle)])
    def test_matches_scalar_oracle(self, kind, oracle):
        param, _ = run(kind, self.GRADS)
        assert param.value[0] == pytest.approx(oracle(self.GRADS), abs=1e-10)

    @pytest.mark.parametrize('kind', KINDS)
    def test_zero_gradient_leaves_parameter_bitwise(self, kind):
        param, optimizer = run(kind, [0.3, -0.2])
        before = param.value.tobytes()
        buffers = {k: v.tobytes() for k, v in optimizer.state.buffers['w'].items()}
        param.grad[...] = 0
        optimizer.step({'w': param})
        assert param.value.tobytes() == before
        assert {k: v.tobytes() for k, v in optimizer.state.buffers['w'].items()} == buffers

    @pytest.mark.parametrize('kind', KINDS)
    def test_fresh_state_zero_gradient(self, kind):
        param, optimizer = run(kind, [0.0])
        assert param.value[0] == 1.0
        assert 'w' not in optimizer.state.buffers

    @pytest.mark.parametrize('kind', KINDS)
    def test_quadratic_decreases_monotonically(self, kind):
        param = Parameter('w', np.array([1.0, -2.0, 0.5]))
        optimizer = Optimizer(OptimizerConfig(kind))
        losses = []
        for _ in range(50):
            param.grad[...] = param.value
            optimizer.step({'w': param})
            losses.append(0.5 * float(np.sum(param.value ** 2)))
        assert all(b < a for a, b in zip(losses[5:], losses[6:]))

    def test_frozen_parameter_untouched(self):
        param = scalar_param(g=1.0)
        param.trainable = False
        Optimizer(OptimizerConfig('adam')).step({'w': param})
        assert param.value[0] == 1.0

    def test_buffers_mirror_parameter_shapes(self, rng):
        params = {'a': Parameter('a', rng.standard_normal((2, 3))), 'b': Parameter('b', rng.standard_normal(4))}
        for p in params.values():
            p.grad[...] = 1.0
        optimizer = Optimizer(OptimizerConfig('adam'))
        optimizer.step(params)
        for name, p in params.items():
            assert optimizer.state.buffers[name]['m'].shape == p.value.shape
            assert optimizer.state.buffers[name]['v'].shape == p.value.shape
