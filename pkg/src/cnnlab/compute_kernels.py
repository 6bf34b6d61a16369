"""Reference forward kernels for every layer kind, plus the FC backward pass.

All kernels are pure functions over immutable tensors with single-precision
semantics: inputs and outputs are float32, intermediates may be wider.  Two
convolution routes are provided: a direct sliding-window reference and a
patch-matrix (im2col) GEMM lowering, kept deliberately distinct so each can
check the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeError
from .model_ir import ActivationKind, ConvSpec, FcSpec, NormSpec, PoolKind, PoolSpec, TensorShape

DTYPE = np.float32


@dataclass(frozen=True)
class Tensor:
    """Dense 3-D value block in channel-major (channel, row, column) order."""

    shape: TensorShape
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.shape != self.shape.as_tuple():
            raise ShapeError(f"data shape {self.data.shape} does not match {self.shape.as_tuple()}")
        if self.data.dtype != DTYPE:
            raise ShapeError(f"tensor data must be float32, got {self.data.dtype}")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("tensor contains non-finite values")

    @staticmethod
    def from_array(array: np.ndarray) -> "Tensor":
        arr = np.ascontiguousarray(array, dtype=DTYPE)
        if arr.ndim != 3:
            raise ShapeError(f"expected a 3-D array, got {arr.ndim}-D")
        return Tensor(TensorShape(*arr.shape), arr)

    @staticmethod
    def from_flat(vector: np.ndarray) -> "Tensor":
        """Wrap a 1-D vector as an (n, 1, 1) tensor."""
        arr = np.ascontiguousarray(vector, dtype=DTYPE)
        if arr.ndim != 1:
            raise ShapeError(f"expected a 1-D vector, got {arr.ndim}-D")
        return Tensor(TensorShape(arr.size, 1, 1), arr.reshape(arr.size, 1, 1))

    @staticmethod
    def zeros(shape: TensorShape) -> "Tensor":
        return Tensor(shape, np.zeros(shape.as_tuple(), dtype=DTYPE))

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True)
class FcWeights:
    """Fully connected parameters: (in_len, out_len) matrix plus bias."""

    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("fc weights need a 2-D matrix and 1-D bias")
        if self.matrix.shape[1] != self.bias.shape[0]:
            raise ShapeError(
                f"matrix columns {self.matrix.shape[1]} must equal bias length {self.bias.shape[0]}"
            )
        if self.matrix.dtype != DTYPE or self.bias.dtype != DTYPE:
            raise ShapeError("fc weights must be float32")

    @property
    def in_len(self) -> int:
        return self.matrix.shape[0]

    @property
    def out_len(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ConvWeights:
    """Convolution parameters: (out_c, in_c, k_h, k_w) kernels plus per-output-channel bias."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.kernel.ndim != 4 or self.bias.ndim != 1:
            raise ShapeError("conv weights need a 4-D kernel bank and 1-D bias")
        if self.kernel.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"kernel out-channels {self.kernel.shape[0]} must equal bias length {self.bias.shape[0]}"
            )
        if self.kernel.dtype != DTYPE or self.bias.dtype != DTYPE:
            raise ShapeError("conv weights must be float32")


class FcGradients(NamedTuple):
    dx: Tensor
    dmatrix: np.ndarray
    dbias: np.ndarray


def apply_activation(values: np.ndarray, kind: ActivationKind) -> np.ndarray:
    """Elementwise nonlinearity; sigmoid(x) = 1 / (1 + exp(-x))."""
    kind = ActivationKind(kind)
    if kind is ActivationKind.NONE:
        return values.astype(DTYPE, copy=False)
    if kind is ActivationKind.RELU:
        return np.maximum(values, 0).astype(DTYPE, copy=False)
    x = values.astype(np.float64)
    if kind is ActivationKind.SIGMOID:
        out = (1.0 / (1.0 + np.exp(-x))).astype(DTYPE)
        # float32 rounding would saturate to 0.0/1.0 for |x| > ~17; keep the
        # output strictly inside (0, 1).
        tiny = np.nextafter(DTYPE(0), DTYPE(1))
        return np.clip(out, tiny, DTYPE(1) - np.finfo(DTYPE).epsneg)
    return np.tanh(x).astype(DTYPE)


def fc_forward(x: Tensor, weights: FcWeights, act: ActivationKind = ActivationKind.NONE) -> Tensor:
    """y_k = act(sum_j M[j, k] * x_j + b_k) over the flattened input."""
    vec = x.flat
    if vec.size != weights.in_len:
        raise ShapeError(f"fc input length {vec.size} does not match matrix rows {weights.in_len}")
    pre = vec @ weights.matrix + weights.bias
    return Tensor.from_flat(apply_activation(pre, act))


def _pad_input(x: Tensor, spec: ConvSpec) -> np.ndarray:
    p = spec.padding
    return np.pad(x.data, ((0, 0), (p.top, p.bottom), (p.left, p.right)))


def _check_conv_args(x: Tensor, spec: ConvSpec, weights: ConvWeights) -> None:
    if x.shape != spec.input:
        raise ShapeError(f"conv input shape {x.shape.as_tuple()} does not match spec {spec.input.as_tuple()}")
    if weights.kernel.shape != spec.kernel.as_tuple():
        raise ShapeError(
            f"conv kernel shape {weights.kernel.shape} does not match spec {spec.kernel.as_tuple()}"
        )


def conv2d_forward(x: Tensor, spec: ConvSpec, weights: ConvWeights) -> Tensor:
    """Direct sliding-window convolution (the reference route).

    Accumulates one kernel tap at a time over the zero-padded input; no
    matrix lowering is involved, so this stays an independent check against
    conv2d_forward_gemm.
    """
    _check_conv_args(x, spec, weights)
    out_shape = spec.output
    s = spec.stride
    padded = _pad_input(x, spec)
    kernel = weights.kernel
    acc = np.zeros(out_shape.as_tuple(), dtype=DTYPE)
    for ky in range(spec.kernel.height):
        for kx in range(spec.kernel.width):
            window = padded[
                :,
                ky : ky + s * out_shape.height : s,
                kx : kx + s * out_shape.width : s,
            ]
            for ci in range(spec.kernel.in_channels):
                acc += kernel[:, ci, ky, kx, np.newaxis, np.newaxis] * window[ci]
    acc += weights.bias[:, np.newaxis, np.newaxis]
    return Tensor(out_shape, apply_activation(acc, spec.activation))


def im2col(x: Tensor, spec: ConvSpec) -> np.ndarray:
    """Patch matrix of shape (in_c*k_h*k_w, out_h*out_w) for GEMM lowering."""
    if x.shape != spec.input:
        raise ShapeError(f"conv input shape {x.shape.as_tuple()} does not match spec {spec.input.as_tuple()}")
    out = spec.output
    s = spec.stride
    padded = _pad_input(x, spec)
    k = spec.kernel
    cols = np.empty((k.in_channels, k.height, k.width, out.height, out.width), dtype=DTYPE)
    for ky in range(k.height):
        for kx in range(k.width):
            cols[:, ky, kx] = padded[:, ky : ky + s * out.height : s, kx : kx + s * out.width : s]
    return cols.reshape(k.in_channels * k.height * k.width, out.height * out.width)


def conv2d_forward_gemm(x: Tensor, spec: ConvSpec, weights: ConvWeights) -> Tensor:
    """Convolution as one matrix-matrix product over the im2col patch matrix."""
    _check_conv_args(x, spec, weights)
    out = spec.output
    k = spec.kernel
    patches = im2col(x, spec)
    flat_kernel = weights.kernel.reshape(k.out_channels, k.in_channels * k.height * k.width)
    product = flat_kernel @ patches + weights.bias[:, np.newaxis]
    result = product.reshape(out.as_tuple())
    return Tensor(out, apply_activation(result, spec.activation))


def lrn_forward(x: Tensor, spec: NormSpec) -> Tensor:
    """Across-channel LRN with the window clipped at channel boundaries.

    out[c] = in[c] / (k + (alpha/n) * sum_{c' in window(c)} in[c']^2)^beta
    """
    if x.shape != spec.input:
        raise ShapeError(f"lrn input shape {x.shape.as_tuple()} does not match spec {spec.input.as_tuple()}")
    data = x.data.astype(np.float64)
    squares = data * data
    half = (spec.local_size - 1) // 2
    channels = spec.input.channels
    out = np.empty_like(data)
    for c in range(channels):
        lo = max(0, c - half)
        hi = min(channels, c + half + 1)
        window_sum = squares[lo:hi].sum(axis=0)
        denom = (spec.bias_k + (spec.alpha / spec.local_size) * window_sum) ** spec.beta
        out[c] = data[c] / denom
    return Tensor(spec.input, out.astype(DTYPE))


def pool_forward(x: Tensor, spec: PoolSpec) -> Tensor:
    """Per-channel windowed max or arithmetic mean with the layer's stride."""
    if x.shape != spec.input:
        raise ShapeError(f"pool input shape {x.shape.as_tuple()} does not match spec {spec.input.as_tuple()}")
    out = spec.output
    win_h, win_w = spec.window
    s = spec.stride
    windows = np.empty((win_h * win_w,) + out.as_tuple(), dtype=DTYPE)
    idx = 0
    for wy in range(win_h):
        for wx in range(win_w):
            windows[idx] = x.data[:, wy : wy + s * out.height : s, wx : wx + s * out.width : s]
            idx += 1
    if spec.kind is PoolKind.MAX:
        result = windows.max(axis=0)
    else:
        result = (windows.sum(axis=0, dtype=np.float64) / (win_h * win_w)).astype(DTYPE)
    return Tensor(out, result)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the flattened tensor."""
    vec = x.flat.astype(np.float64)
    if vec.size == 0:
        raise ShapeError("softmax requires a non-empty vector")
    shifted = vec - vec.max()
    exps = np.exp(shifted)
    return Tensor.from_flat((exps / exps.sum()).astype(DTYPE))


def dropout_inference(x: Tensor, rate: float) -> Tensor:
    """Inference-mode dropout: identity (inverted-dropout scaling happened at train time)."""
    if not (0.0 <= rate < 1.0):
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    return x


def fc_backward(x: Tensor, weights: FcWeights, dy: Tensor) -> FcGradients:
    """Gradients of the linear layer: dx = M @ dy, dM = outer(x, dy), db = dy."""
    x_vec = x.flat
    dy_vec = dy.flat
    if x_vec.size != weights.in_len:
        raise ShapeError(f"fc input length {x_vec.size} does not match matrix rows {weights.in_len}")
    if dy_vec.size != weights.out_len:
        raise ShapeError(f"gradient length {dy_vec.size} does not match matrix columns {weights.out_len}")
    dx = weights.matrix @ dy_vec
    dmatrix = np.outer(x_vec, dy_vec).astype(DTYPE)
    dbias = dy_vec.copy()
    return FcGradients(Tensor.from_flat(dx), dmatrix, dbias)


def run_fc_layer(x: Tensor, spec: FcSpec, weights: FcWeights) -> Tensor:
    """Forward pass of an FC layer including its dropout/softmax tail."""
    if x.flat.size != spec.input_len:
        raise ShapeError(f"fc layer expects {spec.input_len} inputs, got {x.flat.size}")
    y = fc_forward(x, weights, ActivationKind.NONE)
    if spec.mode.value == "softmax":
        return softmax(y)
    return dropout_inference(y, spec.dropout_rate)
