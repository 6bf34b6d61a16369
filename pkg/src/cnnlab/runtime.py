"""Scheduled execution of a network over the reference kernels.

The runtime walks the chain in order, running each layer's kernel while
charging modeled device costs from the schedule evaluation.  Intermediate
tensors live in a single shared buffer table tagged with a residency
device, mirroring a virtual memory space over host and accelerators; the
assignment never changes the numerics, only the modeled costs.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import compute_kernels as ck
from .device_models import DeviceProfile, density_metrics
from .errors import ScheduleError, ShapeError, WeightsError
from .model_ir import (
    ConvSpec,
    FcSpec,
    NetworkModel,
    NormSpec,
    PoolSpec,
    chain_contiguous,
    validate_network,
)
from .scheduler import (
    BYTES_PER_ELEMENT,
    Schedule,
    ScheduleCost,
    evaluate_schedule,
)
from .weights_io import LayerWeights

HOST = "host"


@dataclass(frozen=True)
class TransferRecord:
    buffer_id: str
    from_device: str
    to_device: str
    bytes: int
    seconds: float


class BufferSpace:
    """Shared buffer table: one residency tag per buffer, host included."""

    def __init__(self, devices: Mapping[str, DeviceProfile]):
        self._devices = devices
        self._residency: dict[str, str] = {}
        self._payloads: dict[str, ck.Tensor] = {}

    def define(self, buffer_id: str, tensor: ck.Tensor, device: str) -> None:
        if buffer_id in self._residency:
            raise ScheduleError(f"buffer {buffer_id!r} already defined")
        self._residency[buffer_id] = device
        self._payloads[buffer_id] = tensor

    def residency(self, buffer_id: str) -> str:
        if buffer_id not in self._residency:
            raise ScheduleError(f"buffer {buffer_id!r} has not been produced yet")
        return self._residency[buffer_id]

    def payload(self, buffer_id: str) -> ck.Tensor:
        self.residency(buffer_id)
        return self._payloads[buffer_id]

    def transfer(self, buffer_id: str, from_device: str, to_device: str) -> TransferRecord:
        """Move a buffer between devices; modeled seconds = bytes / min(bandwidths)."""
        actual = self.residency(buffer_id)
        if actual != from_device:
            raise ScheduleError(
                f"buffer {buffer_id!r} is resident on {actual!r}, not {from_device!r}"
            )
        nbytes = self._payloads[buffer_id].flat.size * BYTES_PER_ELEMENT
        if from_device == to_device:
            return TransferRecord(buffer_id, from_device, to_device, nbytes, 0.0)
        bandwidths = [
            self._devices[d].transfer_bytes_per_s for d in (from_device, to_device) if d != HOST
        ]
        if not bandwidths:
            raise ScheduleError("transfer must involve at least one device")
        seconds = nbytes / min(bandwidths)
        self._residency[buffer_id] = to_device
        return TransferRecord(buffer_id, from_device, to_device, nbytes, seconds)


def transfer_buffer(
    buffers: BufferSpace, buffer_id: str, from_device: str, to_device: str
) -> TransferRecord:
    return buffers.transfer(buffer_id, from_device, to_device)


@dataclass(frozen=True)
class BufferStep:
    """Planned residency of one boundary buffer."""

    buffer_id: str
    producer_device: str
    consumer_device: str
    bytes: int

    @property
    def needs_transfer(self) -> bool:
        return self.producer_device != self.consumer_device


@dataclass(frozen=True)
class ExecutionPlan:
    model: NetworkModel
    schedule: Schedule
    weights: dict[int, LayerWeights]
    devices: dict[str, DeviceProfile]
    buffer_plan: tuple[BufferStep, ...]


def build_execution_plan(
    model: NetworkModel,
    schedule: Schedule,
    weights: dict[int, LayerWeights],
    devices: Mapping[str, DeviceProfile],
) -> ExecutionPlan:
    """Validate weights against the model and derive boundary buffer residencies."""
    report = validate_network(model)
    if not report.ok:
        raise ScheduleError("model fails validation: " + "; ".join(report.errors))
    if not chain_contiguous(model):
        raise ScheduleError(
            "model has annotated shape transitions and no executable chain"
        )
    if len(schedule.assignment) != len(model.layers):
        raise ScheduleError("schedule does not match model layer count")
    names = model.layer_names()
    for index, layer in enumerate(model.layers):
        if isinstance(layer, ConvSpec):
            blob = weights.get(index)
            if not isinstance(blob, ck.ConvWeights):
                raise WeightsError(f"layer {names[index]}: missing conv weights")
            if blob.kernel.shape != layer.kernel.as_tuple():
                raise WeightsError(
                    f"layer {names[index]}: kernel has {blob.kernel.size} elements, "
                    f"expected {np.prod(layer.kernel.as_tuple())}"
                )
        elif isinstance(layer, FcSpec):
            blob = weights.get(index)
            if not isinstance(blob, ck.FcWeights):
                raise WeightsError(f"layer {names[index]}: missing fc weights")
            if blob.matrix.shape != (layer.input_len, layer.output_len):
                raise WeightsError(
                    f"layer {names[index]}: matrix has {blob.matrix.size} elements, "
                    f"expected {layer.input_len * layer.output_len}"
                )
    steps = []
    for i in range(len(model.layers) - 1):
        steps.append(
            BufferStep(
                buffer_id=f"b{i}",
                producer_device=schedule.assignment[i],
                consumer_device=schedule.assignment[i + 1],
                bytes=model.layers[i].output_elements * BYTES_PER_ELEMENT,
            )
        )
    return ExecutionPlan(
        model=model,
        schedule=schedule,
        weights=dict(weights),
        devices=dict(devices),
        buffer_plan=tuple(steps),
    )


@dataclass(frozen=True)
class ReportRow:
    layer: str
    device: str
    flops: int
    time_s: float
    power_w: float
    energy_j: float
    gflops: float
    gflops_per_w: float
    gflop_per_j: float


@dataclass(frozen=True)
class ProfileReport:
    rows: tuple[ReportRow, ...]
    totals: ScheduleCost
    wall_clock_s: Optional[float]


def _run_layer(layer, tensor: ck.Tensor, blob) -> ck.Tensor:
    if isinstance(layer, ConvSpec):
        return ck.conv2d_forward_gemm(tensor, layer, blob)
    if isinstance(layer, NormSpec):
        return ck.lrn_forward(tensor, layer)
    if isinstance(layer, PoolSpec):
        return ck.pool_forward(tensor, layer)
    if isinstance(layer, FcSpec):
        return ck.run_fc_layer(tensor, layer, blob)
    raise ShapeError(f"unknown layer type {type(layer).__name__}")


def cost_report(
    model: NetworkModel, schedule: Schedule, devices: Mapping[str, DeviceProfile]
) -> tuple[tuple[ReportRow, ...], ScheduleCost]:
    """Per-layer modeled rows plus totals, straight from the schedule evaluation."""
    cost = evaluate_schedule(model, schedule, devices)
    rows = []
    for name, device, est in zip(model.layer_names(), schedule.assignment, cost.per_layer):
        dens = density_metrics(est)
        rows.append(
            ReportRow(
                layer=name,
                device=device,
                flops=est.flops,
                time_s=est.time_s,
                power_w=est.power_w,
                energy_j=est.energy_j,
                gflops=est.throughput_gflops,
                gflops_per_w=dens.gflops_per_watt,
                gflop_per_j=dens.gflop_per_joule,
            )
        )
    return tuple(rows), cost


def execute(plan: ExecutionPlan, input_tensor: ck.Tensor) -> tuple[ck.Tensor, ProfileReport]:
    """Run the chain, returning the output tensor and the modeled cost report.

    Kernel numerics are identical for every schedule; the assignment only
    steers the modeled costs and buffer transfers.
    """
    first = plan.model.layers[0]
    expected = first.input_elements
    if input_tensor.flat.size != expected:
        raise ShapeError(
            f"input has {input_tensor.flat.size} elements, first layer expects {expected}"
        )
    if isinstance(first, (ConvSpec, NormSpec, PoolSpec)) and input_tensor.shape != first.input:
        raise ShapeError(
            f"input shape {input_tensor.shape.as_tuple()} does not match {first.input.as_tuple()}"
        )
    started = _time.perf_counter()
    buffers = BufferSpace(plan.devices)
    buffers.define("input", input_tensor, HOST)
    buffers.transfer("input", HOST, plan.schedule.assignment[0])
    current_id = "input"
    tensor = input_tensor
    for index, layer in enumerate(plan.model.layers):
        device = plan.schedule.assignment[index]
        if buffers.residency(current_id) != device:
            buffers.transfer(current_id, buffers.residency(current_id), device)
        tensor = _run_layer(layer, tensor, plan.weights.get(index))
        current_id = f"b{index}" if index < len(plan.model.layers) - 1 else "output"
        buffers.define(current_id, tensor, device)
    buffers.transfer("output", plan.schedule.assignment[-1], HOST)
    wall = _time.perf_counter() - started
    rows, totals = cost_report(plan.model, plan.schedule, plan.devices)
    return tensor, ProfileReport(rows=rows, totals=totals, wall_clock_s=wall)


def fmt(value: float) -> str:
    """Fixed 6-significant-digit rendering used by all tables and CSV output."""
    return f"{value:.6g}"


def report_csv(report: ProfileReport) -> str:
    lines = ["layer,device,flops,time_s,power_w,energy_j,gflops,gflops_per_w,gflop_per_j"]
    for r in report.rows:
        lines.append(
            f"{r.layer},{r.device},{r.flops},{fmt(r.time_s)},{fmt(r.power_w)},"
            f"{fmt(r.energy_j)},{fmt(r.gflops)},{fmt(r.gflops_per_w)},{fmt(r.gflop_per_j)}"
        )
    return "\n".join(lines) + "\n"


def report_table(report: ProfileReport) -> str:
    header = (
        "layer",
        "device",
        "flops",
        "time_s",
        "power_w",
        "energy_j",
        "gflops",
        "gflops_per_w",
        "gflop_per_j",
    )
    body = [
        (
            r.layer,
            r.device,
            str(r.flops),
            fmt(r.time_s),
            fmt(r.power_w),
            fmt(r.energy_j),
            fmt(r.gflops),
            fmt(r.gflops_per_w),
            fmt(r.gflop_per_j),
        )
        for r in report.rows
    ]
    t = report.totals
    body.append(
        (
            "total",
            "-",
            str(t.total_flops),
            fmt(t.total_time_s),
            fmt(t.peak_power_w) + " peak",
            fmt(t.total_energy_j),
            "-",
            "-",
            "-",
        )
    )
    widths = [max(len(header[i]), *(len(row[i]) for row in body)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    for row in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    extra = [
        f"transfer_time_s {fmt(t.transfer_time_s)}",
        f"host_io_time_s {fmt(t.host_io_time_s)}",
    ]
    if report.wall_clock_s is not None:
        extra.append(f"wall_clock_s {fmt(report.wall_clock_s)}")
    lines.append("; ".join(extra))
    return "\n".join(lines) + "\n"
