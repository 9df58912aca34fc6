"""
Declarative network specs for the VGG-style branch, the MobileNet-style branch
with five intermediate taps and the fused classifier head, plus the executable
`Network` built from a spec.

Every tap is reduced by global average pooling to one value per channel. A
classifier spec concatenates the tap vectors of all of its branches and feeds
them to dense(hidden) -> relu -> dropout -> dense(classes).
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from hybridlab.errors import ConfigError, DataError, DimensionError
from hybridlab.layers import (
    EVAL, LAYER_TYPES, Dense, Dropout, GlobalAvgPool, LayerContext, ReLU,
    concat_backward, concat_forward, output_extent, padding_amount, softmax_cross_entropy,
)
from hybridlab.tensor import Parameter, get_default_dtype

logger = logging.getLogger(__name__)

# (width, convolutions) per stage; pooling after every stage
DEFAULT_VGG_PLAN = ((16, 2), (32, 2), (64, 2))
FULL_VGG_PLAN = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))

# (width, stride) per depthwise-separable block
DEFAULT_MOBILE_PLAN = ((16, 1), (32, 2), (32, 1), (64, 2), (64, 1))
FULL_MOBILE_PLAN = ((64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2), (512, 1), (512, 1),
                     (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1))

MOBILE_TAP_COUNT = 5


@dataclass
class LayerSpec:
    kind: str
    name: str
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: str = 'same'


@dataclass
class HeadSpec:
    hidden_units: int = 256
    dropout_rate: float = 0.4
    classes: int = 2


@dataclass
class NetworkSpec:
    """
    A branch (ordered layers plus tap indices) or a classifier (branches plus head).

    Attributes:
        name (str): Branch name, used as the parameter name prefix ('vgg', 'mobile') or classifier name.
        input_shape (tuple): (channels, height, width) of one input image.
        layers (list[LayerSpec]): Branch layers in execution order; empty for classifiers.
        taps (list[int]): Indices of layers whose outputs are pooled into tap vectors.
        branches (list[NetworkSpec]): Branches of a classifier; empty for branches.
        head (HeadSpec | None): Present exactly when the spec is a classifier.
    """
    name: str
    input_shape: tuple
    layers: list = field(default_factory=list)
    taps: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    head: HeadSpec = None

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.validate()

    @property
    def is_classifier(self) -> bool:
        return self.head is not None

    def validate(self) -> None:
        if self.is_classifier != bool(self.branches):
            raise ConfigError(f"Spec '{self.name}' must have a head exactly when it has branches")
        if self.is_classifier:
            if self.head.classes != 2:
                raise ConfigError(f"Only two-class heads are supported, got {self.head.classes}")
            if self.head.hidden_units < 1:
                raise ConfigError(f"Hidden units must be positive, got {self.head.hidden_units}")
            if not 0 <= self.head.dropout_rate < 1:
                raise ConfigError(f"Dropout rate must be in [0, 1), got {self.head.dropout_rate}")
            return
        if not self.taps:
            raise ConfigError(f"Branch '{self.name}' has no taps")
        if any(b <= a for a, b in zip(self.taps, self.taps[1:])):
            raise ConfigError(f"Tap indices of '{self.name}' must be strictly increasing, got {self.taps}")
        if self.taps[0] < 0 or self.taps[-1] >= len(self.layers):
            raise ConfigError(f"Tap indices {self.taps} out of range for {len(self.layers)} layers")
        self.layer_shapes()

    def layer_shapes(self) -> list:
        """
        Propagates the input shape through the branch layers.

        Returns:
            list[tuple]: Output shape (channels, height, width) of every layer.

        Raises:
            ConfigError: If a layer receives a map smaller than its kernel.
        """
        c, h, w = self.input_shape
        shapes = []
        for layer in self.layers:
            if layer.kind in ('conv2d', 'depthwise_separable'):
                pad = padding_amount(layer.padding, layer.kernel)
                if min(h, w) + 2 * pad < layer.kernel:
                    raise ConfigError(f"Input {h}x{w} too small for layer '{layer.name}'")
                h = output_extent(h, layer.kernel, layer.stride, pad)
                w = output_extent(w, layer.kernel, layer.stride, pad)
                c = layer.out_channels
            elif layer.kind == 'maxpool2':
                h, w = -(-h // 2), -(-w // 2)
            elif layer.kind != 'relu':
                raise ConfigError(f"Unknown branch layer kind '{layer.kind}'")
            shapes.append((c, h, w))
        return shapes

    def tap_lengths(self) -> list:
        """Length of every tap vector, concatenated over branches for a classifier."""
        if self.is_classifier:
            return [n for branch in self.branches for n in branch.tap_lengths()]
        shapes = self.layer_shapes()
        return [shapes[i][0] for i in self.taps]

    @property
    def fusion_length(self) -> int:
        return sum(self.tap_lengths())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'NetworkSpec':
        return cls(
            name=data['name'],
            input_shape=tuple(data['input_shape']),
            layers=[LayerSpec(**layer) for layer in data.get('layers', [])],
            taps=list(data.get('taps', [])),
            branches=[cls.from_dict(branch) for branch in data.get('branches', [])],
            head=HeadSpec(**data['head']) if data.get('head') else None,
        )


def build_vgg_branch(plan=DEFAULT_VGG_PLAN, input_size: int = 64, in_channels: int = 3,
                     name: str = 'vgg') -> NetworkSpec:
    """
    Builds a VGG-style branch: stages of [conv3x3 -> relu] pairs, each stage closed by 2x2 max pooling.

    The single tap is the output of the final pooling layer.

    Args:
        plan (sequence): (width, number of convolutions) per stage.
        input_size (int): Height and width of the square input.
        in_channels (int): Input channels.
        name (str): Branch name and parameter prefix.

    Returns:
        NetworkSpec: The branch spec.

    Raises:
        ConfigError: If the plan is empty or malformed, or the input is too small for the pooling depth.

    Example:
        The default plan on a 64x64 input ends in an 8x8x64 map, so its tap vector has length 64.
    """
    plan = [tuple(stage) for stage in plan]
    if not plan:
        raise ConfigError("VGG plan must contain at least one stage")
    if any(len(stage) != 2 or stage[0] < 1 or stage[1] < 1 for stage in plan):
        raise ConfigError(f"VGG plan stages must be (width, convs) with positive entries, got {plan}")
    if input_size < 2 ** len(plan):
        raise ConfigError(f"Input size {input_size} too small for {len(plan)} pooling stages")
    layers = []
    for s, (width, convs) in enumerate(plan, start=1):
        for c in range(1, convs + 1):
            layers.append(LayerSpec('conv2d', f"{name}.conv{s}_{c}", width, 3, 1, 'same'))
            layers.append(LayerSpec('relu', f"{name}.relu{s}_{c}"))
        layers.append(LayerSpec('maxpool2', f"{name}.pool{s}"))
    return NetworkSpec(name, (in_channels, input_size, input_size), layers, [len(layers) - 1])


def default_tap_blocks(blocks: int) -> list:
    """Five blocks spread evenly over the depth, always including the first and the last."""
    return sorted({int(round(b)) for b in np.linspace(1, blocks, MOBILE_TAP_COUNT)})


def build_mobilenet_branch(plan=DEFAULT_MOBILE_PLAN, input_size: int = 64, stem_width: int = 16,
                           tap_blocks=None, in_channels: int = 3, name: str = 'mobile') -> NetworkSpec:
    """
    Builds a MobileNet-style branch: a stride-2 3x3 stem convolution followed by
    depthwise-separable blocks, each followed by relu. Five taps sit after five
    designated blocks.

    Args:
        plan (sequence): (width, stride) per block; a bare width means stride 1.
        input_size (int): Height and width of the square input.
        stem_width (int): Output channels of the stem convolution.
        tap_blocks (sequence | None): 1-based block numbers to tap; defaults to five evenly spaced
            blocks, which is every block of a five-block plan.
        in_channels (int): Input channels.
        name (str): Branch name and parameter prefix.

    Returns:
        NetworkSpec: The branch spec.

    Raises:
        ConfigError: If the plan has fewer than five blocks or the taps are not five valid blocks.
    """
    blocks = [(stage, 1) if isinstance(stage, int) else tuple(stage) for stage in plan]
    if len(blocks) < MOBILE_TAP_COUNT:
        raise ConfigError(f"MobileNet plan needs at least {MOBILE_TAP_COUNT} blocks, got {len(blocks)}")
    if any(width < 1 or stride < 1 for width, stride in blocks):
        raise ConfigError(f"MobileNet blocks must have positive width and stride, got {blocks}")
    tap_blocks = list(tap_blocks) if tap_blocks is not None else default_tap_blocks(len(blocks))
    if len(tap_blocks) != MOBILE_TAP_COUNT or len(set(tap_blocks)) != MOBILE_TAP_COUNT:
        raise ConfigError(f"Exactly {MOBILE_TAP_COUNT} distinct tap blocks required, got {tap_blocks}")
    if min(tap_blocks) < 1 or max(tap_blocks) > len(blocks):
        raise ConfigError(f"Tap blocks {tap_blocks} out of range 1..{len(blocks)}")
    layers = [
        LayerSpec('conv2d', f"{name}.stem", stem_width, 3, 2, 'same'),
        LayerSpec('relu', f"{name}.stem_relu"),
    ]
    taps = []
    for b, (width, stride) in enumerate(blocks, start=1):
        layers.append(LayerSpec('depthwise_separable', f"{name}.block{b}", width, 3, stride, 'same'))
        layers.append(LayerSpec('relu', f"{name}.relu{b}"))
        if b in tap_blocks:
            taps.append(len(layers) - 1)
    return NetworkSpec(name, (in_channels, input_size, input_size), layers, taps)


def build_hybrid(vgg: NetworkSpec, mobile: NetworkSpec, hidden_units: int = 256,
                 dropout_rate: float = 0.4, classes: int = 2) -> NetworkSpec:
    """
    Fuses both branches: all tap vectors (one from VGG, five from MobileNet) are
    concatenated and fed to the dense(hidden) -> relu -> dropout -> dense(classes) head.

    Raises:
        ConfigError: If the branches accept different input shapes.
    """
    if vgg.input_shape != mobile.input_shape:
        raise ConfigError(f"Branch input shapes differ: {vgg.input_shape} vs {mobile.input_shape}")
    head = HeadSpec(hidden_units, dropout_rate, classes)
    return NetworkSpec('hybrid', vgg.input_shape, branches=[vgg, mobile], head=head)


def build_plain(branch: NetworkSpec, hidden_units: int = 256, dropout_rate: float = 0.4,
                classes: int = 2) -> NetworkSpec:
    """Single-branch classifier with the same head, fed by the branch's final tap only."""
    trimmed = NetworkSpec(branch.name, branch.input_shape, list(branch.layers), [branch.taps[-1]])
    head = HeadSpec(hidden_units, dropout_rate, classes)
    return NetworkSpec(f"plain-{branch.name}", branch.input_shape, branches=[trimmed], head=head)


def _head_layers(head: HeadSpec) -> list:
    return [Dense('head.fc1'), ReLU('head.relu'), Dropout('head.dropout', head.dropout_rate), Dense('head.fc2')]


def _param_shapes(spec: NetworkSpec):
    """Yields (name, shape, fan_in) for every parameter, in a fixed order; fan_in is None for biases."""
    for branch in spec.branches:
        shapes = branch.layer_shapes()
        for i, layer in enumerate(branch.layers):
            c_in = branch.input_shape[0] if i == 0 else shapes[i - 1][0]
            k, c_out = layer.kernel, layer.out_channels
            if layer.kind == 'conv2d':
                yield f"{layer.name}.weight", (c_out, c_in, k, k), c_in * k * k
                yield f"{layer.name}.bias", (c_out,), None
            elif layer.kind == 'depthwise_separable':
                yield f"{layer.name}.dw_weight", (c_in, k, k), k * k
                yield f"{layer.name}.dw_bias", (c_in,), None
                yield f"{layer.name}.pw_weight", (c_out, c_in, 1, 1), c_in
                yield f"{layer.name}.pw_bias", (c_out,), None
    fused, hidden, classes = spec.fusion_length, spec.head.hidden_units, spec.head.classes
    yield 'head.fc1.weight', (hidden, fused), fused
    yield 'head.fc1.bias', (hidden,), None
    yield 'head.fc2.weight', (classes, hidden), hidden
    yield 'head.fc2.bias', (classes,), None


class Network:
    """
    An executable classifier: spec, named parameters and the layer objects built from the spec.

    Forward passes keep their caches in a `LayerContext`, so evaluation passes do not
    touch the network state. Only `backward` (gradients) and optimizer steps (values) mutate it.
    """

    def __init__(self, spec: NetworkSpec, parameters: dict, seed: int = 0):
        if not spec.is_classifier:
            raise ConfigError(f"Spec '{spec.name}' has no head; wrap branches with build_hybrid or build_plain")
        self.spec = spec
        self.parameters = parameters
        self.seed = seed
        self.branches = []
        for branch in spec.branches:
            last = branch.taps[-1]
            layers = [LAYER_TYPES[l.kind](l.name, **self._layer_kwargs(l)) for l in branch.layers[:last + 1]]
            pools = {i: GlobalAvgPool(f"{branch.name}.tap{n}") for n, i in enumerate(branch.taps, start=1)}
            self.branches.append((branch, layers, pools))
        self.head = _head_layers(spec.head)
        for name, shape, _ in _param_shapes(spec):
            if name not in parameters or parameters[name].value.shape != shape:
                raise ConfigError(f"Parameter '{name}' missing or not of shape {shape}")

    @staticmethod
    def _layer_kwargs(layer: LayerSpec) -> dict:
        if layer.kind in ('conv2d', 'depthwise_separable'):
            return {'stride': layer.stride, 'padding': layer.padding}
        return {}

    @property
    def dtype(self):
        return next(iter(self.parameters.values())).value.dtype

    def parameter_count(self, prefix: str = '') -> int:
        return sum(p.size for name, p in self.parameters.items() if name.startswith(prefix))

    def zero_grad(self) -> None:
        for param in self.parameters.values():
            param.zero_grad()

    def state_dict(self) -> dict:
        return {name: p.value.copy() for name, p in self.parameters.items()}

    def load_state_dict(self, state: dict) -> None:
        """
        Copies parameter values from `state`.

        Raises:
            ConfigError: If names or shapes do not match this network.
        """
        if set(state) != set(self.parameters):
            missing = sorted(set(self.parameters) ^ set(state))
            raise ConfigError(f"Parameter names do not match the architecture: {missing[:5]}")
        for name, value in state.items():
            param = self.parameters[name]
            if value.shape != param.value.shape:
                raise ConfigError(f"Parameter '{name}' has shape {value.shape}, architecture needs {param.value.shape}")
            param.value[...] = value

    def forward(self, batch, mode: str = EVAL, rng=None):
        """
        Runs both branches and the head on a batch.

        Args:
            batch (np.ndarray): Images [N, C, H, W] matching the spec's input shape.
            mode (str): 'train' (dropout active) or 'eval'.
            rng (np.random.Generator | None): Dropout stream; defaults to one seeded with the network seed.

        Returns:
            tuple: (logits [N, classes], tap vectors as a list of [N, D_i], LayerContext for backward).

        Raises:
            DimensionError: If the batch does not match the input shape.
        """
        if batch.ndim != 4 or batch.shape[1:] != self.spec.input_shape:
            raise DimensionError(f"Batch shape {batch.shape} does not match input {self.spec.input_shape}")
        ctx = LayerContext(mode, rng if rng is not None else np.random.default_rng(self.seed))
        params = self.parameters
        taps = []
        for _, layers, pools in self.branches:
            x = batch
            for i, layer in enumerate(layers):
                x = layer.forward(x, params, ctx)
                if i in pools:
                    taps.append(pools[i].forward(x, params, ctx))
        x, sizes = concat_forward(taps)
        ctx.save('head.concat', sizes)
        for layer in self.head:
            x = layer.forward(x, params, ctx)
        ctx.save('logits', x)
        return x, taps, ctx

    def backward(self, ctx: LayerContext, labels) -> float:
        """
        Mean softmax cross-entropy over the batch of the matching forward; accumulates
        gradients into every parameter, splitting the fusion gradient across branches.

        Raises:
            DataError: If a label is not a valid class index.
        """
        logits = ctx.load('logits')
        labels = np.asarray(labels)
        if labels.shape != (logits.shape[0],) or labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise DataError(f"Labels {labels.tolist()} invalid for {logits.shape[1]} classes")
        loss, _, grad = softmax_cross_entropy(logits, labels)
        params = self.parameters
        for layer in reversed(self.head):
            grad = layer.backward(grad, params, ctx)
        tap_grads = iter(concat_backward(grad, ctx.load('head.concat')))
        per_branch = [[next(tap_grads) for _ in pools] for _, _, pools in self.branches]
        for (_, layers, pools), grads in zip(self.branches, per_branch):
            by_index = dict(zip(sorted(pools), grads))
            grad = None
            for i in range(len(layers) - 1, -1, -1):
                if i in by_index:
                    tap_grad = pools[i].backward(np.ascontiguousarray(by_index[i]), params, ctx)
                    grad = tap_grad if grad is None else grad + tap_grad
                grad = layers[i].backward(grad, params, ctx)
        return loss


def init_params(spec: NetworkSpec, seed: int, dtype=None) -> Network:
    """
    Creates a network with He-normal weights (std = sqrt(2 / fan_in)) and zero biases.

    Weights are drawn from `np.random.default_rng(seed)` in a fixed parameter order, so the
    same seed always yields bitwise-identical parameters.

    Args:
        spec (NetworkSpec): A classifier spec.
        seed (int): Generator seed.
        dtype (type | None): Element type; defaults to the current default.

    Returns:
        Network: The initialized network.
    """
    if not spec.is_classifier:
        raise ConfigError(f"Spec '{spec.name}' has no head; wrap branches with build_hybrid or build_plain")
    dtype = dtype or get_default_dtype()
    rng = np.random.default_rng(seed)
    parameters = {}
    for name, shape, fan_in in _param_shapes(spec):
        if fan_in is None:
            value = np.zeros(shape, dtype=dtype)
        else:
            value = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        parameters[name] = Parameter(name, value)
    net = Network(spec, parameters, seed)
    logger.debug('Initialized %s with %d parameters', spec.name, net.parameter_count())
    return net


def forward(net: Network, batch, mode: str = EVAL, rng=None):
    return net.forward(batch, mode, rng)


def backward(net: Network, ctx: LayerContext, labels) -> float:
    return net.backward(ctx, labels)
