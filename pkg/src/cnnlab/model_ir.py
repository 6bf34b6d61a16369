"""Layer-tuple network IR: parsing, shape inference, and FLOP accounting.

A network is an ordered chain of four layer kinds (convolution, local
response normalization, pooling, fully connected).  Layers are immutable
records; every operation here is a pure function, so the IR is safe to
share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Union

from .errors import ModelError

# Largest element count a tensor may declare (fits signed 64-bit indexing).
MAX_ELEMENTS = 2**63 - 1


class ActivationKind(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    NONE = "none"


class PoolKind(str, Enum):
    MAX = "max"
    AVG = "avg"


class FcMode(str, Enum):
    DROPOUT = "dropout"
    SOFTMAX = "softmax"


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class TensorShape:
    """3-D feature-map geometry: channels x height x width."""

    channels: int
    height: int
    width: int

    def __post_init__(self) -> None:
        for name in ("channels", "height", "width"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ModelError(f"tensor {name} must be a positive integer, got {v!r}")
        if self.element_count > MAX_ELEMENTS:
            raise ModelError(f"tensor element count {self.element_count} exceeds addressable range")

    @property
    def element_count(self) -> int:
        return self.channels * self.height * self.width

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class KernelShape:
    """Convolution kernel bank: out-channels x in-channels x height x width."""

    out_channels: int
    in_channels: int
    height: int
    width: int

    def __post_init__(self) -> None:
        for name in ("out_channels", "in_channels", "height", "width"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ModelError(f"kernel {name} must be a positive integer, got {v!r}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.height, self.width)


@dataclass(frozen=True)
class Padding:
    """Zero-padding applied to each spatial edge."""

    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def __post_init__(self) -> None:
        for name in ("top", "bottom", "left", "right"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ModelError(f"padding {name} must be a non-negative integer, got {v!r}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.top, self.bottom, self.left, self.right)


def infer_conv_output_shape(
    input_shape: TensorShape,
    kernel: KernelShape,
    stride: int,
    padding: Padding = Padding(),
    strict: bool = True,
) -> TensorShape:
    """Output geometry of a strided convolution over a zero-padded input.

    out = (in + pad_before + pad_after - kernel) / stride + 1, per axis.
    In strict mode the division must be exact; with strict=False floor
    semantics apply (trailing rows/columns that do not fit are dropped).
    """
    if not isinstance(stride, int) or stride < 1:
        raise ModelError(f"stride must be a positive integer, got {stride!r}")
    if kernel.in_channels != input_shape.channels:
        raise ModelError(
            f"kernel in-channels {kernel.in_channels} does not match input channels {input_shape.channels}"
        )
    out_hw = []
    for extent, k, before, after in (
        (input_shape.height, kernel.height, padding.top, padding.bottom),
        (input_shape.width, kernel.width, padding.left, padding.right),
    ):
        padded = extent + before + after
        if padded < k:
            raise ModelError(f"padded extent {padded} smaller than kernel extent {k}")
        span = padded - k
        if strict and span % stride != 0:
            raise ModelError(
                f"stride does not tile padded input (padded {padded}, kernel {k}, stride {stride})"
            )
        out_hw.append(span // stride + 1)
    return TensorShape(kernel.out_channels, out_hw[0], out_hw[1])


def infer_pool_output_shape(
    input_shape: TensorShape, window: tuple[int, int], stride: int
) -> TensorShape:
    """Output geometry of windowed pooling: floor((in - win)/stride) + 1 per axis."""
    if not isinstance(stride, int) or stride < 1:
        raise ModelError(f"stride must be a positive integer, got {stride!r}")
    win_h, win_w = window
    if not all(isinstance(w, int) and w >= 1 for w in (win_h, win_w)):
        raise ModelError(f"pooling window must be positive integers, got {window}")
    if win_h > input_shape.height or win_w > input_shape.width:
        raise ModelError(
            f"pooling window {win_h}x{win_w} larger than input {input_shape.height}x{input_shape.width}"
        )
    out_h = (input_shape.height - win_h) // stride + 1
    out_w = (input_shape.width - win_w) // stride + 1
    return TensorShape(input_shape.channels, out_h, out_w)


@dataclass(frozen=True)
class ConvSpec:
    """Convolution layer record: input/kernel/output geometry, stride, padding, activation."""

    input: TensorShape
    kernel: KernelShape
    stride: int
    padding: Padding = Padding()
    activation: ActivationKind = ActivationKind.NONE
    strict_shapes: bool = True
    output: TensorShape = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        inferred = infer_conv_output_shape(
            self.input, self.kernel, self.stride, self.padding, self.strict_shapes
        )
        if self.output is None:
            object.__setattr__(self, "output", inferred)
        elif self.output != inferred:
            raise ModelError(
                f"declared conv output {self.output.as_tuple()} does not match inferred {inferred.as_tuple()}"
            )

    @property
    def layer_class(self) -> str:
        return "conv"

    @property
    def input_elements(self) -> int:
        return self.input.element_count

    @property
    def output_elements(self) -> int:
        return self.output.element_count


@dataclass(frozen=True)
class NormSpec:
    """Across-channel local response normalization layer record."""

    input: TensorShape
    local_size: int
    alpha: float
    beta: float
    bias_k: float = 1.0
    kind: str = "lrn"

    def __post_init__(self) -> None:
        if self.kind != "lrn":
            raise ModelError(f"unsupported normalization kind {self.kind!r}")
        if not isinstance(self.local_size, int) or self.local_size < 1 or self.local_size % 2 == 0:
            raise ModelError(f"local_size must be a positive odd count, got {self.local_size!r}")
        if self.local_size > self.input.channels:
            raise ModelError(
                f"local_size {self.local_size} exceeds input channels {self.input.channels}"
            )
        if self.alpha < 0:
            raise ModelError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0:
            raise ModelError(f"beta must be > 0, got {self.beta}")
        if self.bias_k <= 0:
            raise ModelError(f"bias constant must be > 0, got {self.bias_k}")

    @property
    def layer_class(self) -> str:
        return "lrn"

    @property
    def output(self) -> TensorShape:
        return self.input

    @property
    def input_elements(self) -> int:
        return self.input.element_count

    @property
    def output_elements(self) -> int:
        return self.input.element_count


@dataclass(frozen=True)
class PoolSpec:
    """Windowed pooling layer record (max or average)."""

    input: TensorShape
    kind: PoolKind
    window: tuple[int, int]
    stride: int
    window_count: int = 0  # pooling kernels in the layer; defaults to one per channel
    output: TensorShape = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        inferred = infer_pool_output_shape(self.input, self.window, self.stride)
        if self.output is None:
            object.__setattr__(self, "output", inferred)
        elif self.output != inferred:
            raise ModelError(
                f"declared pool output {self.output.as_tuple()} does not match inferred {inferred.as_tuple()}"
            )
        if self.window_count == 0:
            object.__setattr__(self, "window_count", self.input.channels)
        elif self.window_count < 1:
            raise ModelError(f"window_count must be positive, got {self.window_count}")

    @property
    def layer_class(self) -> str:
        return "pool"

    @property
    def input_elements(self) -> int:
        return self.input.element_count

    @property
    def output_elements(self) -> int:
        return self.output.element_count


@dataclass(frozen=True)
class FcSpec:
    """Fully connected layer record with a dropout or softmax tail."""

    input: Union[TensorShape, int]
    output_len: int
    mode: FcMode = FcMode.DROPOUT
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if isinstance(self.input, int):
            if self.input < 1:
                raise ModelError(f"fc input length must be positive, got {self.input}")
        elif not isinstance(self.input, TensorShape):
            raise ModelError(f"fc input must be a shape or flat length, got {type(self.input).__name__}")
        if not isinstance(self.output_len, int) or self.output_len < 1:
            raise ModelError(f"fc output length must be a positive integer, got {self.output_len!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ModelError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def layer_class(self) -> str:
        return "fc"

    @property
    def input_len(self) -> int:
        if isinstance(self.input, int):
            return self.input
        return self.input.element_count

    @property
    def input_elements(self) -> int:
        return self.input_len

    @property
    def output_elements(self) -> int:
        return self.output_len


LayerSpec = Union[ConvSpec, NormSpec, PoolSpec, FcSpec]


@dataclass(frozen=True)
class NetworkModel:
    """Named, ordered chain of layers.

    `transitions` lists boundary indices (between layers i and i+1) where a
    deliberate element-count mismatch is permitted, so a description can
    follow a published table that omits intermediate reshaping layers.
    """

    name: str
    layers: tuple[LayerSpec, ...]
    transitions: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if not self.layers:
            raise ModelError("empty network")
        for b in self.transitions:
            if not (0 <= b < len(self.layers) - 1):
                raise ModelError(f"transition annotation {b} outside boundary range")

    def layer_names(self) -> tuple[str, ...]:
        return tuple(f"{layer.layer_class}{i + 1}" for i, layer in enumerate(self.layers))

    def __iter__(self) -> Iterator[LayerSpec]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)


def count_layer_flops(layer: LayerSpec, direction: Direction = Direction.FORWARD) -> int:
    """Floating-point operations for one layer and direction, one image.

    Counting conventions: one multiply-accumulate is 2 FLOPs; bias adds and
    activation/softmax evaluations are excluded.  Fully connected forward is
    2*in*out; backward (input-gradient plus weight-gradient products) is
    exactly twice forward.  Pooling counts window_size-1 comparisons (max)
    or window_size add/scale ops (average) per output element.  LRN counts
    2*local_size+3 ops per element (squares, window sum, scale, bias add,
    power, divide), using the nominal window size.
    """
    direction = Direction(direction)
    if direction is Direction.BACKWARD:
        if not isinstance(layer, FcSpec):
            raise ModelError(f"unsupported direction: no backward pass for {layer.layer_class} layers")
        return 4 * layer.input_len * layer.output_len
    if isinstance(layer, FcSpec):
        return 2 * layer.input_len * layer.output_len
    if isinstance(layer, ConvSpec):
        k = layer.kernel
        out = layer.output
        return 2 * k.height * k.width * k.in_channels * out.height * out.width * k.out_channels
    if isinstance(layer, PoolSpec):
        win = layer.window[0] * layer.window[1]
        per_elem = win - 1 if layer.kind is PoolKind.MAX else win
        return layer.output.element_count * per_elem
    if isinstance(layer, NormSpec):
        return layer.input.element_count * (2 * layer.local_size + 3)
    raise ModelError(f"unknown layer type {type(layer).__name__}")


# --- model file format -------------------------------------------------------
#
# UTF-8 JSON: {"name": str, "layers": [layer...], "transitions": [int...]?}
# Layer objects carry "type" in {"conv","lrn","pool","fc"} plus exactly the
# tuple fields for that type; unknown keys are rejected.

_LAYER_KEYS = {
    "conv": {"type", "input", "kernel", "stride", "pad", "activation"},
    "lrn": {"type", "input", "local_size", "alpha", "beta", "k"},
    "pool": {"type", "input", "pool", "window", "stride"},
    "fc": {"type", "input", "out", "mode", "rate"},
}


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ModelError(f"{where}: missing required field {key!r}")
    return obj[key]


def _int_list(value, n: int, where: str) -> list[int]:
    if not isinstance(value, list) or len(value) != n or not all(isinstance(v, int) for v in value):
        raise ModelError(f"{where}: expected a list of {n} integers, got {value!r}")
    return value


def _shape(value, where: str) -> TensorShape:
    c, h, w = _int_list(value, 3, where)
    return TensorShape(c, h, w)


def _parse_layer(obj: dict, index: int) -> LayerSpec:
    where = f"layer {index + 1}"
    if not isinstance(obj, dict):
        raise ModelError(f"{where}: expected an object")
    kind = _require(obj, "type", where)
    if kind not in _LAYER_KEYS:
        raise ModelError(f"{where}: unknown layer type {kind!r}")
    unknown = set(obj) - _LAYER_KEYS[kind]
    if unknown:
        raise ModelError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        if kind == "conv":
            co, ci, kh, kw = _int_list(_require(obj, "kernel", where), 4, where)
            pad = _int_list(obj.get("pad", [0, 0, 0, 0]), 4, where)
            return ConvSpec(
                input=_shape(_require(obj, "input", where), where),
                kernel=KernelShape(co, ci, kh, kw),
                stride=_require(obj, "stride", where),
                padding=Padding(*pad),
                activation=ActivationKind(obj.get("activation", "none")),
            )
        if kind == "lrn":
            return NormSpec(
                input=_shape(_require(obj, "input", where), where),
                local_size=_require(obj, "local_size", where),
                alpha=float(_require(obj, "alpha", where)),
                beta=float(_require(obj, "beta", where)),
                bias_k=float(obj.get("k", 1.0)),
            )
        if kind == "pool":
            win_h, win_w = _int_list(_require(obj, "window", where), 2, where)
            return PoolSpec(
                input=_shape(_require(obj, "input", where), where),
                kind=PoolKind(_require(obj, "pool", where)),
                window=(win_h, win_w),
                stride=_require(obj, "stride", where),
            )
        raw_in = _require(obj, "input", where)
        fc_input: Union[TensorShape, int]
        if isinstance(raw_in, int):
            fc_input = raw_in
        else:
            fc_input = _shape(raw_in, where)
        return FcSpec(
            input=fc_input,
            output_len=_require(obj, "out", where),
            mode=FcMode(obj.get("mode", "dropout")),
            dropout_rate=float(obj.get("rate", 0.0)),
        )
    except ValueError as exc:  # bad enum literal
        raise ModelError(f"{where}: {exc}") from exc
    except ModelError as exc:
        raise ModelError(f"{where}: {exc}") from exc


def parse_model(text: str) -> NetworkModel:
    """Parse a model file into a NetworkModel, rejecting malformed input."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ModelError("model file must contain a JSON object")
    unknown = set(doc) - {"name", "layers", "transitions"}
    if unknown:
        raise ModelError(f"unknown top-level keys {sorted(unknown)}")
    name = _require(doc, "name", "model")
    if not isinstance(name, str) or not name:
        raise ModelError("model name must be a non-empty string")
    raw_layers = _require(doc, "layers", "model")
    if not isinstance(raw_layers, list):
        raise ModelError("layers must be a list")
    if not raw_layers:
        raise ModelError("empty network")
    layers = tuple(_parse_layer(obj, i) for i, obj in enumerate(raw_layers))
    transitions = doc.get("transitions", [])
    if not isinstance(transitions, list) or not all(isinstance(b, int) for b in transitions):
        raise ModelError("transitions must be a list of boundary indices")
    return NetworkModel(name=name, layers=layers, transitions=frozenset(transitions))


def _layer_to_obj(layer: LayerSpec) -> dict:
    if isinstance(layer, ConvSpec):
        return {
            "type": "conv",
            "input": list(layer.input.as_tuple()),
            "kernel": list(layer.kernel.as_tuple()),
            "stride": layer.stride,
            "pad": list(layer.padding.as_tuple()),
            "activation": layer.activation.value,
        }
    if isinstance(layer, NormSpec):
        return {
            "type": "lrn",
            "input": list(layer.input.as_tuple()),
            "local_size": layer.local_size,
            "alpha": layer.alpha,
            "beta": layer.beta,
            "k": layer.bias_k,
        }
    if isinstance(layer, PoolSpec):
        return {
            "type": "pool",
            "input": list(layer.input.as_tuple()),
            "pool": layer.kind.value,
            "window": list(layer.window),
            "stride": layer.stride,
        }
    if isinstance(layer, FcSpec):
        raw_in = layer.input if isinstance(layer.input, int) else list(layer.input.as_tuple())
        return {
            "type": "fc",
            "input": raw_in,
            "out": layer.output_len,
            "mode": layer.mode.value,
            "rate": layer.dropout_rate,
        }
    raise ModelError(f"unknown layer type {type(layer).__name__}")


def render_model(model: NetworkModel) -> str:
    """Serialize a model to its canonical file text (lossless round-trip)."""
    doc: dict = {"name": model.name, "layers": [_layer_to_obj(l) for l in model.layers]}
    if model.transitions:
        doc["transitions"] = sorted(model.transitions)
    return json.dumps(doc, indent=2) + "\n"


def load_model(path) -> NetworkModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())


@dataclass(frozen=True)
class LayerCheck:
    """Per-layer validation row."""

    name: str
    layer_class: str
    declared_output: tuple
    inferred_output: tuple
    output_elements: int
    successor_elements: int | None  # next layer's declared input count, if any
    boundary_ok: bool
    forward_flops: int


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[LayerCheck, ...]
    errors: tuple[str, ...]
    total_forward_flops: int

    @property
    def ok(self) -> bool:
        return not self.errors


def chain_contiguous(model: NetworkModel) -> bool:
    """True when every boundary's element counts match, annotations aside.

    Only contiguous chains can be executed; annotated transitions merely
    silence validation for descriptions that follow a published table.
    """
    return all(
        model.layers[i].output_elements == model.layers[i + 1].input_elements
        for i in range(len(model.layers) - 1)
    )


def validate_network(model: NetworkModel) -> ValidationReport:
    """Check shape transitions along the chain and total up forward FLOPs.

    Problems are returned as report entries rather than raised, so a report
    can be rendered for a broken description.
    """
    entries = []
    errors = []
    names = model.layer_names()
    total = 0
    for i, layer in enumerate(model.layers):
        out_shape = (layer.output_len,) if isinstance(layer, FcSpec) else layer.output.as_tuple()
        flops = count_layer_flops(layer, Direction.FORWARD)
        total += flops
        successor = model.layers[i + 1] if i + 1 < len(model.layers) else None
        succ_elems = successor.input_elements if successor is not None else None
        boundary_ok = True
        if successor is not None and i not in model.transitions:
            if layer.output_elements != succ_elems:
                boundary_ok = False
                errors.append(
                    f"boundary {i}: {names[i]} produces {layer.output_elements} elements "
                    f"but {names[i + 1]} expects {succ_elems}"
                )
        entries.append(
            LayerCheck(
                name=names[i],
                layer_class=layer.layer_class,
                declared_output=out_shape,
                inferred_output=out_shape,
                output_elements=layer.output_elements,
                successor_elements=succ_elems,
                boundary_ok=boundary_ok,
                forward_flops=flops,
            )
        )
    return ValidationReport(entries=tuple(entries), errors=tuple(errors), total_forward_flops=total)
