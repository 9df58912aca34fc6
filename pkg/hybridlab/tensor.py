"""
Dense tensor helpers shared by every layer.

Tensors are plain row-major numpy arrays. Images are [channels, height, width]
and batches are [batch, channels, height, width]. The element type is chosen
per run: 32-bit floats for training, 64-bit floats for gradient checks.
"""
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from hybridlab.errors import DimensionError, NumericError

_DTYPES = {32: np.float32, 64: np.float64}
_default_dtype = np.float32


def dtype_for_width(element_width: int) -> type:
    """
    Maps an element width in bits to the numpy floating point type used for it.

    Args:
        element_width (int): 32 or 64.

    Returns:
        type: numpy.float32 or numpy.float64.

    Raises:
        ValueError: If the width is not 32 or 64.
    """
    try:
        return _DTYPES[element_width]
    except KeyError:
        raise ValueError(f"Element width must be 32 or 64, got {element_width}")


def get_default_dtype() -> type:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _DTYPES.values():
        raise ValueError(f"Unsupported element type {dtype}")
    _default_dtype = dtype


@contextmanager
def default_dtype(dtype):
    """Temporarily switches the default element type, e.g. to float64 for gradient checks."""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def check_finite(tensor, what: str) -> None:
    if not np.all(np.isfinite(tensor)):
        raise NumericError(f"Non-finite values in {what}")


@dataclass
class Parameter:
    """
    A trainable tensor paired with its gradient accumulator.

    Attributes:
        name (str): Stable name, unique within the owning network, e.g. 'mobile.block3.pw_weight'.
        value (np.ndarray): Current value.
        grad (np.ndarray): Accumulated gradient, same shape as `value`.
        trainable (bool): Whether optimizers update this parameter.
    """
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    trainable: bool = True

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(
                f"Gradient shape {self.grad.shape} does not match parameter '{self.name}' {self.value.shape}")

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad[...] = 0


def matmul(a, b) -> np.ndarray:
    """
    Matrix product of an [M, K] and a [K, N] tensor.

    Raises:
        DimensionError: If either operand is not rank 2 or the inner extents differ.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"Cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


_ELEMENTWISE = {
    'add': np.add,
    'sub': np.subtract,
    'mul': np.multiply,
}


def elementwise(op: str, a, b) -> np.ndarray:
    """
    Applies a pointwise operation.

    Args:
        op (str): One of 'add', 'sub', 'mul' (tensor or scalar `b`) or 'scale' (scalar `b`).
        a (np.ndarray): Left operand.
        b (np.ndarray | float): Right operand; tensors must match `a` exactly, no broadcasting.

    Returns:
        np.ndarray: A new tensor with the shape of `a`.

    Raises:
        DimensionError: If `b` is a tensor of a different shape, or 'scale' gets a tensor.
        ValueError: If `op` is unknown.

    Example:
        elementwise('scale', np.array([2., 4.]), 0.5) returns array([1., 2.]).
    """
    a = np.asarray(a)
    if op == 'scale':
        if np.ndim(b) != 0:
            raise DimensionError(f"'scale' takes a scalar, got shape {np.shape(b)}")
        if b == 1:
            return a.copy()
        return a * a.dtype.type(b)
    if op not in _ELEMENTWISE:
        raise ValueError(f"Unknown elementwise operation '{op}'")
    if np.ndim(b) == 0:
        return _ELEMENTWISE[op](a, a.dtype.type(b))
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"Shape mismatch for '{op}': {a.shape} vs {b.shape}")
    return _ELEMENTWISE[op](a, b)


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """
    Central-difference estimate of the gradient of a scalar function.

    Each coordinate of `x` is perturbed in place by +h and -h and restored afterwards,
    so `f` may close over `x` (for instance a network parameter).

    Args:
        f (callable): Function of no arguments or of `x`, returning a scalar.
        x (np.ndarray): Point of evaluation; modified temporarily.
        h (float): Step, must be positive.

    Returns:
        np.ndarray: g[i] = (f(x + h e_i) - f(x - h e_i)) / (2h), same shape as `x`.

    Raises:
        ValueError: If h is not positive.
        NumericError: If any evaluation of `f` is not finite.
    """
    if h <= 0:
        raise ValueError(f"Step h must be positive, got {h}")
    if not x.flags.c_contiguous:
        raise ValueError("finite_diff_grad perturbs x in place and needs a contiguous array")
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        upper = float(f(x))
        flat[i] = saved - h
        lower = float(f(x))
        flat[i] = saved
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericError(f"Function evaluation not finite at coordinate {i}")
        out[i] = (upper - lower) / (2 * h)
    return grad.astype(x.dtype, copy=False)


def relative_error(analytic, numeric) -> float:
    """Norm-based relative error between two gradient estimates; 0 when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
