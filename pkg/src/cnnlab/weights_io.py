"""Binary weights container and deterministic weight generation.

Container layout (little-endian): magic "CNNL", format version u32 = 1,
layer count u32 (total layers of the network the blobs belong to), then a
sequence of blob records until end of file.  Each record is: layer index
u32 (0-based), blob kind u8, element count u64, raw float32 payload.
Pool and LRN layers carry no blobs.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import BinaryIO, Union

import numpy as np

from .compute_kernels import ConvWeights, DTYPE, FcWeights, Tensor
from .errors import WeightsError
from .model_ir import ConvSpec, FcSpec, NetworkModel

MAGIC = b"CNNL"
VERSION = 1


class BlobKind(IntEnum):
    CONV_KERNEL = 0
    CONV_BIAS = 1
    FC_MATRIX = 2
    FC_BIAS = 3


LayerWeights = Union[ConvWeights, FcWeights]


def _write_blob(fh: BinaryIO, layer_index: int, kind: BlobKind, array: np.ndarray) -> None:
    payload = np.ascontiguousarray(array, dtype=DTYPE)
    fh.write(struct.pack("<IBQ", layer_index, int(kind), payload.size))
    fh.write(payload.astype("<f4", copy=False).tobytes())


def save_weights(fh: BinaryIO, model: NetworkModel, weights: dict[int, LayerWeights]) -> None:
    """Write all parameter blobs for a model; layers are keyed by 0-based index."""
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(model.layers)))
    for index, layer in enumerate(model.layers):
        if isinstance(layer, ConvSpec):
            blob = weights.get(index)
            if not isinstance(blob, ConvWeights):
                raise WeightsError(f"layer {index}: expected conv weights")
            _write_blob(fh, index, BlobKind.CONV_KERNEL, blob.kernel)
            _write_blob(fh, index, BlobKind.CONV_BIAS, blob.bias)
        elif isinstance(layer, FcSpec):
            blob = weights.get(index)
            if not isinstance(blob, FcWeights):
                raise WeightsError(f"layer {index}: expected fc weights")
            _write_blob(fh, index, BlobKind.FC_MATRIX, blob.matrix)
            _write_blob(fh, index, BlobKind.FC_BIAS, blob.bias)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise WeightsError("truncated weights file")
    return data


def _read_blobs(fh: BinaryIO) -> tuple[int, dict[tuple[int, int], np.ndarray]]:
    if _read_exact(fh, 4) != MAGIC:
        raise WeightsError("not a weights file (bad magic)")
    version, layer_count = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise WeightsError(f"unsupported weights format version {version}")
    blobs: dict[tuple[int, int], np.ndarray] = {}
    while True:
        header = fh.read(13)
        if not header:
            break
        if len(header) != 13:
            raise WeightsError("truncated blob record")
        layer_index, kind, count = struct.unpack("<IBQ", header)
        payload = _read_exact(fh, count * 4)
        key = (layer_index, kind)
        if key in blobs:
            raise WeightsError(f"duplicate blob for layer {layer_index}, kind {kind}")
        blobs[key] = np.frombuffer(payload, dtype="<f4").astype(DTYPE)
    return layer_count, blobs


def _take(blobs: dict, index: int, kind: BlobKind, expected: int, shape: tuple) -> np.ndarray:
    key = (index, int(kind))
    if key not in blobs:
        raise WeightsError(f"layer {index}: missing {kind.name.lower()} blob")
    arr = blobs.pop(key)
    if arr.size != expected:
        raise WeightsError(
            f"layer {index}: {kind.name.lower()} has {arr.size} elements, expected {expected}"
        )
    return arr.reshape(shape)


def load_weights(fh: BinaryIO, model: NetworkModel) -> dict[int, LayerWeights]:
    """Read and validate every parameter blob the model requires."""
    layer_count, blobs = _read_blobs(fh)
    if layer_count != len(model.layers):
        raise WeightsError(
            f"weights file describes {layer_count} layers, model has {len(model.layers)}"
        )
    out: dict[int, LayerWeights] = {}
    for index, layer in enumerate(model.layers):
        if isinstance(layer, ConvSpec):
            k = layer.kernel
            kernel = _take(blobs, index, BlobKind.CONV_KERNEL, np.prod(k.as_tuple()), k.as_tuple())
            bias = _take(blobs, index, BlobKind.CONV_BIAS, k.out_channels, (k.out_channels,))
            out[index] = ConvWeights(kernel=kernel, bias=bias)
        elif isinstance(layer, FcSpec):
            n_in, n_out = layer.input_len, layer.output_len
            matrix = _take(blobs, index, BlobKind.FC_MATRIX, n_in * n_out, (n_in, n_out))
            bias = _take(blobs, index, BlobKind.FC_BIAS, n_out, (n_out,))
            out[index] = FcWeights(matrix=matrix, bias=bias)
    if blobs:
        extra = sorted(blobs)
        raise WeightsError(f"unexpected blobs for non-parameterized layers: {extra}")
    return out


def save_tensor(fh: BinaryIO, tensor: Tensor) -> None:
    """Write a single tensor as a one-blob container (used for CLI inputs)."""
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, 1))
    _write_blob(fh, 0, BlobKind.CONV_KERNEL, tensor.data)


def load_tensor_data(fh: BinaryIO) -> np.ndarray:
    """Read the flat payload of a single-blob container."""
    _, blobs = _read_blobs(fh)
    if len(blobs) != 1:
        raise WeightsError(f"expected a single-blob tensor file, found {len(blobs)} blobs")
    return next(iter(blobs.values()))


def generate_weights(model: NetworkModel, seed: int) -> dict[int, LayerWeights]:
    """Deterministic uniform [-0.05, 0.05] weights for desk-scale runs.

    Draw order is fixed (layers in order, kernel/matrix before bias) so a
    given (model, seed) pair always produces identical parameters.
    """
    rng = np.random.default_rng(seed)

    def draw(*shape: int) -> np.ndarray:
        return rng.uniform(-0.05, 0.05, size=shape).astype(DTYPE)

    out: dict[int, LayerWeights] = {}
    for index, layer in enumerate(model.layers):
        if isinstance(layer, ConvSpec):
            k = layer.kernel
            out[index] = ConvWeights(kernel=draw(*k.as_tuple()), bias=draw(k.out_channels))
        elif isinstance(layer, FcSpec):
            out[index] = FcWeights(
                matrix=draw(layer.input_len, layer.output_len), bias=draw(layer.output_len)
            )
    return out
