"""
Binary checkpoints of a training run.

Layout, all integers and tensor payloads little-endian:

    b'FUSN'                       magic
    u16                           format version
    u32 + bytes                   JSON echo of the run configuration
    u32 epoch, u64 step, u32 best epoch, f64 best val accuracy (NaN when none)
    u32 count, then per tensor    parameters
    u16 + bytes                   optimizer kind
    u64                           optimizer step count
    u32 count, then per tensor    optimizer buffers, named '<parameter>/<slot>'

A tensor is: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
u8 element code (1 = float32, 2 = float64), raw values.

Dropout, batch order and augmentation streams are derived from the seed and the
(epoch, step) counters, so the counters are the whole random state of a run.
"""
import json
import logging
import math
import os
import pathlib
import struct
from dataclasses import dataclass, field

import numpy as np

from hybridlab.architectures import Network, NetworkSpec, init_params
from hybridlab.errors import FormatError, StorageError
from hybridlab.optim import Optimizer, OptimizerState

logger = logging.getLogger(__name__)

MAGIC = b'FUSN'
VERSION = 1
_CODES = {np.dtype('<f4'): 1, np.dtype('<f8'): 2}
_DTYPES = {code: dtype for dtype, code in _CODES.items()}


@dataclass
class Checkpoint:
    """
    The contents of a checkpoint file.

    Attributes:
        config (dict): Run configuration echo, including the network spec under 'network'.
        parameters (dict): Parameter name -> array.
        optimizer_kind (str): 'sgd', 'adam' or 'rmsprop'.
        optimizer_state (OptimizerState): Moment buffers and step count.
        epoch (int): Completed epochs.
        step (int): Completed optimizer steps.
        best_epoch (int): Epoch with the best validation accuracy so far.
        best_val (float | None): That accuracy.
    """
    config: dict
    parameters: dict
    optimizer_kind: str
    optimizer_state: OptimizerState = field(default_factory=OptimizerState)
    epoch: int = 0
    step: int = 0
    best_epoch: int = 0
    best_val: float = None

    def network(self, seed: int = 0) -> Network:
        """Rebuilds the network from the stored spec and loads the stored parameters into it."""
        spec = NetworkSpec.from_dict(self.config['network'])
        dtype = next(iter(self.parameters.values())).dtype.type
        net = init_params(spec, seed, dtype)
        net.load_state_dict(self.parameters)
        return net


class _Reader:

    def __init__(self, data: bytes, path):
        self.data = memoryview(data)
        self.offset = 0
        self.path = path

    def take(self, size: int) -> memoryview:
        if self.offset + size > len(self.data):
            raise StorageError(f"Checkpoint '{self.path}' is truncated at byte {len(self.data)}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def text(self, length_fmt: str) -> str:
        return bytes(self.take(self.unpack(length_fmt))).decode('utf-8')

    def tensor(self):
        name = self.text('<H')
        rank = self.unpack('<B')
        dims = struct.unpack(f"<{rank}I", self.take(4 * rank))
        code = self.unpack('<B')
        if code not in _DTYPES:
            raise FormatError(f"Checkpoint '{self.path}': tensor '{name}' has unknown element code {code}")
        dtype = _DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).reshape(dims)
        return name, values.astype(dtype.newbyteorder('='))


def _pack_text(fmt: str, text: str) -> bytes:
    raw = text.encode('utf-8')
    return struct.pack(fmt, len(raw)) + raw


def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    dtype = value.dtype.newbyteorder('<')
    if dtype not in _CODES:
        raise FormatError(f"Tensor '{name}' has unsupported element type {value.dtype}")
    head = _pack_text('<H', name) + struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape)
    return head + struct.pack('<B', _CODES[dtype]) + np.ascontiguousarray(value, dtype=dtype).tobytes()


def checkpoint_save(net: Network, optimizer: Optimizer, config: dict, path, epoch: int = 0, step: int = 0,
                    best_epoch: int = 0, best_val: float = None) -> pathlib.Path:
    """
    Writes a checkpoint.

    The file is written next to its destination and renamed into place, so a reader
    never sees a partial checkpoint.

    Args:
        net (Network): The network whose parameters are saved.
        optimizer (Optimizer): Its configuration kind and state are saved.
        config (dict): Run configuration echo; the network spec is added under 'network'.
        path (str | pathlib.Path): Destination.
        epoch (int): Completed epochs.
        step (int): Completed optimizer steps.
        best_epoch (int): Best validation epoch so far.
        best_val (float | None): Best validation accuracy so far.

    Returns:
        pathlib.Path: The written path.

    Raises:
        StorageError: If the file cannot be written.
    """
    path = pathlib.Path(path)
    echo = dict(config)
    echo['network'] = net.spec.to_dict()
    parts = [MAGIC, struct.pack('<H', VERSION), _pack_text('<I', json.dumps(echo, sort_keys=True))]
    parts.append(struct.pack('<IQId', epoch, step, best_epoch, math.nan if best_val is None else best_val))
    params = net.state_dict()
    parts.append(struct.pack('<I', len(params)))
    parts.extend(_pack_tensor(name, params[name]) for name in sorted(params))
    state = optimizer.state
    buffers = {f"{name}/{slot}": value for name, slots in state.buffers.items() for slot, value in slots.items()}
    parts.append(_pack_text('<H', optimizer.config.kind) + struct.pack('<QI', state.t, len(buffers)))
    parts.extend(_pack_tensor(name, buffers[name]) for name in sorted(buffers))
    tmp_path = path.with_name(path.name + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp_path, 'wb') as ckpt_file:
            ckpt_file.write(b''.join(parts))
        os.replace(tmp_path, path)
    except OSError as e:
        raise StorageError(f"Could not write checkpoint '{path}': {e}")
    logger.info('Saved checkpoint %s (epoch %d)', path, epoch)
    return path


def checkpoint_load(path) -> Checkpoint:
    """
    Reads a checkpoint.

    Args:
        path (str | pathlib.Path): The checkpoint file.

    Returns:
        Checkpoint: Configuration echo, parameters, optimizer state and counters.

    Raises:
        FormatError: If the magic bytes or the format version do not match.
        StorageError: If the file cannot be read or is truncated.
    """
    try:
        with open(path, 'rb') as ckpt_file:
            data = ckpt_file.read()
    except OSError as e:
        raise StorageError(f"Could not read checkpoint '{path}': {e}")
    reader = _Reader(data, path)
    magic = bytes(reader.take(4))
    if magic != MAGIC:
        raise FormatError(f"'{path}' is not a checkpoint (magic {magic!r})")
    version = reader.unpack('<H')
    if version != VERSION:
        raise FormatError(f"Checkpoint '{path}' has format version {version}, expected {VERSION}")
    try:
        config = json.loads(reader.text('<I'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Checkpoint '{path}' has an unreadable configuration: {e}")
    epoch, step, best_epoch, best_val = reader.unpack('<IQId')
    parameters = dict(reader.tensor() for _ in range(reader.unpack('<I')))
    kind = reader.text('<H')
    t, count = reader.unpack('<QI')
    state = OptimizerState(t=t)
    for _ in range(count):
        name, value = reader.tensor()
        param, _, slot = name.rpartition('/')
        state.buffers.setdefault(param, {})[slot] = value
    if reader.offset != len(data):
        raise FormatError(f"Checkpoint '{path}' has {len(data) - reader.offset} trailing bytes")
    return Checkpoint(config, parameters, kind, state, epoch, step, best_epoch,
                      None if math.isnan(best_val) else best_val)
