"""
Forward and backward passes for every layer kind of the hybrid network.

The kernels follow the cached forward/backward style: each `*_forward`
returns `(out, cache)` and the matching `*_backward` consumes the cache.
Layer objects wrap the kernels, keep no state of their own and store their
caches in a `LayerContext`, one per forward pass.

Kernels work on batches; the convenience functions `conv2d`,
`depthwise_separable`, `relu`, `maxpool2`, `global_avg_pool`, `dense`,
`dropout`, `concat` and `softmax_cross_entropy` also accept a single sample.
"""
from dataclasses import dataclass, field

import numpy as np

from hybridlab.errors import ConfigError, DimensionError, StateError

TRAIN = 'train'
EVAL = 'eval'


@dataclass
class LayerContext:
    """
    Per-forward-pass state: cached inputs for backward, the mode and the dropout stream.

    Attributes:
        mode (str): 'train' or 'eval'.
        rng (np.random.Generator): Deterministic stream for dropout masks.
        cache (dict): Layer key -> cached forward values.
    """
    mode: str = EVAL
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (TRAIN, EVAL):
            raise ConfigError(f"Mode must be '{TRAIN}' or '{EVAL}', got '{self.mode}'")

    def save(self, key, value) -> None:
        self.cache[key] = value

    def load(self, key):
        try:
            return self.cache[key]
        except KeyError:
            raise StateError(f"Backward for '{key}' called without a matching forward in {self.mode} mode")


def _as_batch(x, rank):
    """Adds a batch axis to a single sample; returns the array and whether it was added."""
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise DimensionError(f"Expected a rank {rank - 1} sample or rank {rank} batch, got shape {x.shape}")
    return x, False


def padding_amount(padding, kernel: int) -> int:
    if padding == 'valid':
        return 0
    if padding == 'same':
        return kernel // 2
    raise ConfigError(f"Padding must be 'valid' or 'same', got '{padding}'")


def output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _windows(xp, kernel, stride, out_h, out_w):
    # read-only view [N, C, out_h, out_w, k, k] over the padded input
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, out_h, out_w, kernel, kernel),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw),
        writeable=False,
    )


def _pad_input(x, kernel, stride, padding):
    if kernel % 2 == 0 and padding == 'same':
        raise ConfigError(f"'same' padding needs an odd kernel, got {kernel}")
    if stride < 1:
        raise ConfigError(f"Stride must be at least 1, got {stride}")
    pad = padding_amount(padding, kernel)
    _, _, h, w = x.shape
    if h + 2 * pad < kernel or w + 2 * pad < kernel:
        raise DimensionError(f"Kernel {kernel}x{kernel} is larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    return xp, pad, output_extent(h, kernel, stride, pad), output_extent(w, kernel, stride, pad)


def _scatter_windows(dcols, x_shape, kernel, stride, pad):
    """Adds window gradients [N, C, oh, ow, k, k] back onto the input grid (col2im)."""
    n, c, h, w = x_shape
    _, _, out_h, out_w, _, _ = dcols.shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += dcols[:, :, :, :, i, j]
    return dxp[:, :, pad:pad + h, pad:pad + w]


def conv2d_forward(x, weight, bias, stride=1, padding='valid'):
    """
    Cross-correlation of a batch with a filter bank, plus bias.

    Args:
        x (np.ndarray): Input batch [N, C_in, H, W].
        weight (np.ndarray): Filters [C_out, C_in, k, k].
        bias (np.ndarray): Biases [C_out].
        stride (int): Step between windows, at least 1.
        padding (str): 'valid' (no padding) or 'same' (k // 2 zeros on every side).

    Returns:
        tuple: Output [N, C_out, H', W'] with H' = (H + 2p - k) // stride + 1, and the cache.

    Raises:
        DimensionError: If channel counts differ or the kernel is larger than the padded input.
    """
    c_out, c_in, kernel, kernel_w = weight.shape
    if kernel != kernel_w:
        raise DimensionError(f"Only square kernels are supported, got {weight.shape}")
    if x.shape[1] != c_in:
        raise DimensionError(f"Input has {x.shape[1]} channels, filters expect {c_in} (shapes {x.shape} and {weight.shape})")
    if bias.shape != (c_out,):
        raise DimensionError(f"Bias shape {bias.shape} does not match {c_out} filters")
    xp, pad, out_h, out_w = _pad_input(x, kernel, stride, padding)
    windows = _windows(xp, kernel, stride, out_h, out_w)
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, windows, weight, stride, pad)


def conv2d_backward(dout, cache):
    x_shape, windows, weight, stride, pad = cache
    kernel = weight.shape[2]
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    dcols = np.tensordot(dout, weight, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    dx = _scatter_windows(dcols, x_shape, kernel, stride, pad)
    return dx, dw, db


def depthwise_forward(x, weight, bias, stride=1, padding='same'):
    """One k x k filter per channel: x [N, C, H, W], weight [C, k, k], bias [C]."""
    c, kernel, _ = weight.shape
    if x.shape[1] != c:
        raise DimensionError(f"Input has {x.shape[1]} channels, depthwise filters expect {c}")
    xp, pad, out_h, out_w = _pad_input(x, kernel, stride, padding)
    windows = _windows(xp, kernel, stride, out_h, out_w)
    out = np.einsum('nchwij,cij->nchw', windows, weight) + bias[None, :, None, None]
    return out, (x.shape, windows, weight, stride, pad)


def depthwise_backward(dout, cache):
    x_shape, windows, weight, stride, pad = cache
    db = dout.sum(axis=(0, 2, 3))
    dw = np.einsum('nchw,nchwij->cij', dout, windows)
    dcols = dout[:, :, :, :, None, None] * weight[None, :, None, None, :, :]
    dx = _scatter_windows(dcols, x_shape, weight.shape[1], stride, pad)
    return dx, dw, db


def depthwise_separable_forward(x, dw_weight, dw_bias, pw_weight, pw_bias, stride=1, padding='same'):
    """Depthwise k x k stage followed by a 1 x 1 pointwise stage; pw_weight is [C_out, C, 1, 1]."""
    if pw_weight.shape[1] != dw_weight.shape[0]:
        raise DimensionError(
            f"Pointwise stage expects {pw_weight.shape[1]} channels, depthwise stage yields {dw_weight.shape[0]}")
    mid, dw_cache = depthwise_forward(x, dw_weight, dw_bias, stride, padding)
    out, pw_cache = conv2d_forward(mid, pw_weight, pw_bias, 1, 'valid')
    return out, (dw_cache, pw_cache)


def depthwise_separable_backward(dout, cache):
    dw_cache, pw_cache = cache
    dmid, dpw_w, dpw_b = conv2d_backward(dout, pw_cache)
    dx, ddw_w, ddw_b = depthwise_backward(dmid, dw_cache)
    return dx, ddw_w, ddw_b, dpw_w, dpw_b


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    # subgradient 0 at x == 0
    return np.where(cache > 0, dout, 0).astype(dout.dtype, copy=False)


def maxpool2_forward(x):
    """
    2 x 2 max pooling with stride 2.

    Odd extents are padded with -inf on the bottom and right, so the output is
    ceil(H / 2) x ceil(W / 2). Backward routes each gradient to the first
    maximum of its window in row-major order.
    """
    n, c, h, w = x.shape
    out_h, out_w = -(-h // 2), -(-w // 2)
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, 0), (0, 2 * out_h - h), (0, 2 * out_w - w)), constant_values=-np.inf)
    blocks = x.reshape(n, c, out_h, 2, out_w, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, out_h, out_w, 4)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, ((n, c, h, w), argmax)


def maxpool2_backward(dout, cache):
    (n, c, h, w), argmax = cache
    out_h, out_w = argmax.shape[2:]
    blocks = np.zeros((n, c, out_h, out_w, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, argmax[..., None], dout[..., None], axis=-1)
    dx = blocks.reshape(n, c, out_h, out_w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * out_h, 2 * out_w)
    return np.ascontiguousarray(dx[:, :, :h, :w])


def global_avg_pool_forward(x):
    if x.shape[2] * x.shape[3] < 1:
        raise DimensionError(f"Global average pooling needs a non-empty map, got {x.shape}")
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, cache):
    n, c, h, w = cache
    return np.broadcast_to(dout[:, :, None, None] / (h * w), cache).astype(dout.dtype)


def dense_forward(x, weight, bias):
    """Fully connected layer: x [N, D_in], weight [D_out, D_in], bias [D_out] -> [N, D_out]."""
    if x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise DimensionError(f"Cannot apply weights {weight.shape} and bias {bias.shape} to input {x.shape}")
    return x @ weight.T + bias, (x, weight)


def dense_backward(dout, cache):
    x, weight = cache
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def dropout_forward(x, rate, mode, rng):
    """
    Inverted dropout: in train mode zero each element with probability `rate` and
    scale survivors by 1 / (1 - rate); eval mode is the identity.

    Raises:
        ConfigError: If rate is outside [0, 1).
    """
    if not 0 <= rate < 1:
        raise ConfigError(f"Dropout rate must be in [0, 1), got {rate}")
    if mode == EVAL or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def concat_forward(features):
    if not features:
        raise ConfigError("concat needs at least one feature tensor")
    sizes = [f.shape[-1] for f in features]
    return np.concatenate(features, axis=-1), sizes


def concat_backward(dout, cache):
    offsets = np.cumsum(cache)[:-1]
    return np.split(dout, offsets, axis=-1)


def softmax_cross_entropy(logits, labels):
    """
    Softmax probabilities and mean cross-entropy loss.

    Args:
        logits (np.ndarray): [K] for one sample or [N, K] for a batch, K >= 2.
        labels (int | np.ndarray): Class index, or [N] class indices.

    Returns:
        tuple: (loss, probs, dlogits) where loss is the mean of -ln probs[label],
        probs has the shape of `logits` and dlogits = (probs - onehot) / N.

    Raises:
        DimensionError: If there are fewer than two classes or a label is out of range.
    """
    single = logits.ndim == 1
    logits = logits[None] if single else logits
    labels = np.atleast_1d(np.asarray(labels))
    n, classes = logits.shape
    if classes < 2:
        raise DimensionError(f"Need at least two classes, got {classes}")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= classes:
        raise DimensionError(f"Labels {labels.tolist()} do not fit {n} samples of {classes} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    loss = float(-log_probs[np.arange(n), labels].mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    if single:
        return loss, probs[0], dlogits[0]
    return loss, probs, dlogits


def conv2d(x, weight, bias, stride=1, padding='valid'):
    x, single = _as_batch(x, 4)
    out, _ = conv2d_forward(x, weight, bias, stride, padding)
    return out[0] if single else out


def depthwise_separable(x, dw_weight, dw_bias, pw_weight, pw_bias, stride=1, padding='same'):
    x, single = _as_batch(x, 4)
    out, _ = depthwise_separable_forward(x, dw_weight, dw_bias, pw_weight, pw_bias, stride, padding)
    return out[0] if single else out


def relu(x):
    return relu_forward(x)[0]


def maxpool2(x):
    x, single = _as_batch(x, 4)
    out, _ = maxpool2_forward(x)
    return out[0] if single else out


def global_avg_pool(x):
    x, single = _as_batch(x, 4)
    out, _ = global_avg_pool_forward(x)
    return out[0] if single else out


def dense(x, weight, bias):
    x, single = _as_batch(x, 2)
    out, _ = dense_forward(x, weight, bias)
    return out[0] if single else out


def dropout(x, rate, mode, rng=None):
    return dropout_forward(x, rate, mode, rng or np.random.default_rng(0))[0]


def concat(features):
    return concat_forward(features)[0]


class Layer:
    """Base class: a named layer whose parameters live in the owning network."""
    kind = None
    param_suffixes = ()

    def __init__(self, name: str):
        self.name = name

    def param_names(self) -> list:
        return [f"{self.name}.{suffix}" for suffix in self.param_suffixes]

    def forward(self, x, params: dict, ctx: LayerContext):
        raise NotImplementedError

    def backward(self, dout, params: dict, ctx: LayerContext):
        raise NotImplementedError

    def _values(self, params):
        return [params[name].value for name in self.param_names()]

    def _accumulate(self, params, grads):
        for name, grad in zip(self.param_names(), grads):
            params[name].grad += grad


class Conv2D(Layer):
    kind = 'conv2d'
    param_suffixes = ('weight', 'bias')

    def __init__(self, name, stride=1, padding='same'):
        super().__init__(name)
        self.stride = stride
        self.padding = padding

    def forward(self, x, params, ctx):
        out, cache = conv2d_forward(x, *self._values(params), self.stride, self.padding)
        ctx.save(self.name, cache)
        return out

    def backward(self, dout, params, ctx):
        dx, dw, db = conv2d_backward(dout, ctx.load(self.name))
        self._accumulate(params, (dw, db))
        return dx


class DepthwiseSeparable(Layer):
    kind = 'depthwise_separable'
    param_suffixes = ('dw_weight', 'dw_bias', 'pw_weight', 'pw_bias')

    def __init__(self, name, stride=1, padding='same'):
        super().__init__(name)
        self.stride = stride
        self.padding = padding

    def forward(self, x, params, ctx):
        out, cache = depthwise_separable_forward(x, *self._values(params), self.stride, self.padding)
        ctx.save(self.name, cache)
        return out

    def backward(self, dout, params, ctx):
        dx, *grads = depthwise_separable_backward(dout, ctx.load(self.name))
        self._accumulate(params, grads)
        return dx


class ReLU(Layer):
    kind = 'relu'

    def forward(self, x, params, ctx):
        out, cache = relu_forward(x)
        ctx.save(self.name, cache)
        return out

    def backward(self, dout, params, ctx):
        return relu_backward(dout, ctx.load(self.name))


class MaxPool2(Layer):
    kind = 'maxpool2'

    def forward(self, x, params, ctx):
        out, cache = maxpool2_forward(x)
        ctx.save(self.name, cache)
        return out

    def backward(self, dout, params, ctx):
        return maxpool2_backward(dout, ctx.load(self.name))


class GlobalAvgPool(Layer):
    kind = 'global_avg_pool'

    def forward(self, x, params, ctx):
        out, cache = global_avg_pool_forward(x)
        ctx.save(self.name, cache)
        return out

    def backward(self, dout, params, ctx):
        return global_avg_pool_backward(dout, ctx.load(self.name))


class Dense(Layer):
    kind = 'dense'
    param_suffixes = ('weight', 'bias')

    def forward(self, x, params, ctx):
        out, cache = dense_forward(x, *self._values(params))
        ctx.save(self.name, cache)
        return out

    def backward(self, dout, params, ctx):
        dx, dw, db = dense_backward(dout, ctx.load(self.name))
        self._accumulate(params, (dw, db))
        return dx


class Dropout(Layer):
    kind = 'dropout'

    def __init__(self, name, rate):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ConfigError(f"Dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, params, ctx):
        out, cache = dropout_forward(x, self.rate, ctx.mode, ctx.rng)
        ctx.save(self.name, cache)
        return out

    def backward(self, dout, params, ctx):
        return dropout_backward(dout, ctx.load(self.name))


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, DepthwiseSeparable, ReLU, MaxPool2, GlobalAvgPool, Dense, Dropout)}
