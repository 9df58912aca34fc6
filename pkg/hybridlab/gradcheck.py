"""
Finite-difference verification of every backward pass.

Each layer kind is checked on small random inputs in 64-bit precision: the scalar
sum(forward(inputs) * g) for a fixed random upstream gradient g is differentiated
numerically with central differences and compared with the analytic backward.
The end-to-end item does the same for every parameter of a tiny hybrid network
under the cross-entropy loss.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from hybridlab import layers
from hybridlab.architectures import build_hybrid, build_mobilenet_branch, build_vgg_branch, init_params
from hybridlab.layers import TRAIN
from hybridlab.tensor import default_dtype, finite_diff_grad, relative_error

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class GradcheckItem:
    name: str
    max_error: float
    worst: str = ''

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error <= TOLERANCE


@dataclass
class GradcheckReport:
    items: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    @property
    def failures(self) -> list:
        return [item.name for item in self.items if not item.passed]

    def lines(self) -> list:
        out = [f"{item.name:<24} {item.max_error:.3e}  {'ok' if item.passed else 'FAIL'}  {item.worst}".rstrip()
               for item in self.items]
        out.append(f"{'result':<24} {'pass' if self.passed else 'fail'} ({len(self.items)} items, tolerance {TOLERANCE:g})")
        return out


def _check(name: str, inputs: dict, forward, backward, rng) -> GradcheckItem:
    """
    Compares analytic and numeric gradients for every entry of `inputs`.

    Args:
        name (str): Item name.
        inputs (dict): Name -> float64 array; the arrays are perturbed in place.
        forward (callable): inputs -> output array.
        backward (callable): (inputs, upstream gradient) -> dict of name -> gradient.
        rng (np.random.Generator): Source of the upstream gradient.
    """
    upstream = rng.standard_normal(forward(inputs).shape)
    analytic = backward(inputs, upstream)
    worst_error, worst_name = 0.0, ''
    for key, value in inputs.items():
        numeric = finite_diff_grad(lambda _: float(np.sum(forward(inputs) * upstream)), value, STEP)
        error = relative_error(analytic[key], numeric)
        if error >= worst_error:
            worst_error, worst_name = error, key
    return GradcheckItem(name, worst_error, worst_name)


def _away_from_zero(rng, shape):
    return rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def _layer_items(rng) -> list:
    items = []
    conv = {'x': rng.standard_normal((2, 2, 5, 5)), 'w': rng.standard_normal((3, 2, 3, 3)), 'b': rng.standard_normal(3)}
    items.append(_check(
        'conv2d', conv,
        lambda p: layers.conv2d_forward(p['x'], p['w'], p['b'], 1, 'valid')[0],
        lambda p, g: dict(zip('xwb', layers.conv2d_backward(g, layers.conv2d_forward(p['x'], p['w'], p['b'], 1, 'valid')[1]))),
        rng))

    strided = {'x': rng.standard_normal((2, 2, 6, 6)), 'w': rng.standard_normal((3, 2, 3, 3)), 'b': rng.standard_normal(3)}
    items.append(_check(
        'conv2d_same_stride2', strided,
        lambda p: layers.conv2d_forward(p['x'], p['w'], p['b'], 2, 'same')[0],
        lambda p, g: dict(zip('xwb', layers.conv2d_backward(g, layers.conv2d_forward(p['x'], p['w'], p['b'], 2, 'same')[1]))),
        rng))

    depthwise = {'x': rng.standard_normal((2, 3, 5, 5)), 'w': rng.standard_normal((3, 3, 3)), 'b': rng.standard_normal(3)}
    items.append(_check(
        'depthwise', depthwise,
        lambda p: layers.depthwise_forward(p['x'], p['w'], p['b'], 1, 'same')[0],
        lambda p, g: dict(zip('xwb', layers.depthwise_backward(g, layers.depthwise_forward(p['x'], p['w'], p['b'], 1, 'same')[1]))),
        rng))

    separable = {
        'x': rng.standard_normal((2, 2, 6, 6)),
        'dw_w': rng.standard_normal((2, 3, 3)), 'dw_b': rng.standard_normal(2),
        'pw_w': rng.standard_normal((3, 2, 1, 1)), 'pw_b': rng.standard_normal(3),
    }

    def separable_forward(p):
        return layers.depthwise_separable_forward(p['x'], p['dw_w'], p['dw_b'], p['pw_w'], p['pw_b'], 2, 'same')

    items.append(_check(
        'depthwise_separable', separable,
        lambda p: separable_forward(p)[0],
        lambda p, g: dict(zip(('x', 'dw_w', 'dw_b', 'pw_w', 'pw_b'),
                              layers.depthwise_separable_backward(g, separable_forward(p)[1]))),
        rng))

    items.append(_check(
        'relu', {'x': _away_from_zero(rng, (3, 7))},
        lambda p: layers.relu_forward(p['x'])[0],
        lambda p, g: {'x': layers.relu_backward(g, layers.relu_forward(p['x'])[1])},
        rng))

    # distinct values 0.1 apart keep every window's maximum unique under the perturbation
    pool_input = (rng.permutation(50).reshape(2, 1, 5, 5) * 0.1).astype(np.float64)
    items.append(_check(
        'maxpool2', {'x': pool_input},
        lambda p: layers.maxpool2_forward(p['x'])[0],
        lambda p, g: {'x': layers.maxpool2_backward(g, layers.maxpool2_forward(p['x'])[1])},
        rng))

    items.append(_check(
        'global_avg_pool', {'x': rng.standard_normal((2, 3, 4, 3))},
        lambda p: layers.global_avg_pool_forward(p['x'])[0],
        lambda p, g: {'x': layers.global_avg_pool_backward(g, layers.global_avg_pool_forward(p['x'])[1])},
        rng))

    dense = {'x': rng.standard_normal((3, 4)), 'w': rng.standard_normal((5, 4)), 'b': rng.standard_normal(5)}
    items.append(_check(
        'dense', dense,
        lambda p: layers.dense_forward(p['x'], p['w'], p['b'])[0],
        lambda p, g: dict(zip('xwb', layers.dense_backward(g, layers.dense_forward(p['x'], p['w'], p['b'])[1]))),
        rng))

    seed = int(rng.integers(2 ** 31))
    items.append(_check(
        'dropout', {'x': rng.standard_normal((3, 6))},
        lambda p: layers.dropout_forward(p['x'], 0.4, TRAIN, np.random.default_rng(seed))[0],
        lambda p, g: {'x': layers.dropout_backward(g, layers.dropout_forward(p['x'], 0.4, TRAIN, np.random.default_rng(seed))[1])},
        rng))

    parts = {'a': rng.standard_normal((3, 2)), 'b': rng.standard_normal((3, 3))}
    items.append(_check(
        'concat', parts,
        lambda p: layers.concat_forward([p['a'], p['b']])[0],
        lambda p, g: dict(zip('ab', layers.concat_backward(g, layers.concat_forward([p['a'], p['b']])[1]))),
        rng))

    labels = rng.integers(0, 3, 4)
    items.append(_check(
        'softmax_cross_entropy', {'logits': rng.standard_normal((4, 3))},
        lambda p: np.array(layers.softmax_cross_entropy(p['logits'], labels)[0]),
        lambda p, g: {'logits': layers.softmax_cross_entropy(p['logits'], labels)[2] * g},
        rng))
    return items


def tiny_hybrid_spec():
    """A hybrid spec on 8x8 inputs with widths of at most 4."""
    vgg = build_vgg_branch(((2, 1), (3, 1)), input_size=8)
    mobile = build_mobilenet_branch(((2, 1), (3, 2), (3, 1), (4, 1), (4, 1)), input_size=8, stem_width=2)
    return build_hybrid(vgg, mobile, hidden_units=4, dropout_rate=0.4)


def _network_item(seed: int, rng) -> GradcheckItem:
    net = init_params(tiny_hybrid_spec(), seed, np.float64)
    batch = rng.standard_normal((2,) + net.spec.input_shape)
    labels = np.array([0, 1])
    dropout_seed = int(rng.integers(2 ** 31))

    def loss():
        logits, _, _ = net.forward(batch, TRAIN, np.random.default_rng(dropout_seed))
        return layers.softmax_cross_entropy(logits, labels)[0]

    net.zero_grad()
    _, _, ctx = net.forward(batch, TRAIN, np.random.default_rng(dropout_seed))
    net.backward(ctx, labels)
    worst_error, worst_name = 0.0, ''
    for name in sorted(net.parameters):
        param = net.parameters[name]
        numeric = finite_diff_grad(lambda _: loss(), param.value, STEP)
        error = relative_error(param.grad, numeric)
        if error >= worst_error:
            worst_error, worst_name = error, name
    return GradcheckItem('network', worst_error, worst_name)


def cmd_gradcheck(seed: int = 0) -> GradcheckReport:
    """
    Runs the gradient checks of all layer kinds and of the end-to-end network.

    Args:
        seed (int): Seed for inputs, upstream gradients and network initialization.

    Returns:
        GradcheckReport: One item per layer kind plus 'network'; an item fails when its
        maximum relative error exceeds 1e-4.

    Example:
        report = cmd_gradcheck(seed=0)
        print('\\n'.join(report.lines()))
    """
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        report = GradcheckReport(_layer_items(rng))
        report.items.append(_network_item(seed, rng))
    for item in report.items:
        logger.info('gradcheck %s: %.3e %s', item.name, item.max_error, 'ok' if item.passed else 'FAIL')
    return report
