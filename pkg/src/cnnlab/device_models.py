"""Analytical per-device cost models: time, power, energy, and density metrics.

A device profile carries one effective throughput (GFLOP/s) and one average
power (W) per layer class, an optional fixed per-layer overhead, and a host
link bandwidth.  Layer time is flops / throughput + overhead; energy is
power * time.  Profiles are immutable after load and every estimator is a
pure function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Sequence

from .errors import ProfileError
from .model_ir import ConvSpec, Direction, FcSpec, LayerSpec, NormSpec, PoolSpec, count_layer_flops


class LayerClass(str, Enum):
    CONV = "conv"
    FC_FORWARD = "fc_forward"
    FC_BACKWARD = "fc_backward"
    POOL = "pool"
    LRN = "lrn"


def layer_class_of(layer: LayerSpec, direction: Direction = Direction.FORWARD) -> LayerClass:
    direction = Direction(direction)
    if isinstance(layer, FcSpec):
        return LayerClass.FC_BACKWARD if direction is Direction.BACKWARD else LayerClass.FC_FORWARD
    if direction is Direction.BACKWARD:
        raise ProfileError(f"no backward class for {layer.layer_class} layers")
    if isinstance(layer, ConvSpec):
        return LayerClass.CONV
    if isinstance(layer, PoolSpec):
        return LayerClass.POOL
    if isinstance(layer, NormSpec):
        return LayerClass.LRN
    raise ProfileError(f"unknown layer type {type(layer).__name__}")


@dataclass(frozen=True)
class ClassCost:
    """Effective throughput (GFLOP/s) and average power (W) for one layer class."""

    gflops: float
    watts: float

    def __post_init__(self) -> None:
        if self.gflops <= 0:
            raise ProfileError(f"throughput must be positive, got {self.gflops}")
        if self.watts <= 0:
            raise ProfileError(f"power must be positive, got {self.watts}")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    classes: dict[LayerClass, ClassCost]
    fixed_overhead_s: float = 0.0
    transfer_bytes_per_s: float = 8.0e9
    clock_mhz: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ProfileError("profile needs a non-empty name")
        if self.fixed_overhead_s < 0:
            raise ProfileError(f"overhead must be >= 0, got {self.fixed_overhead_s}")
        if self.transfer_bytes_per_s <= 0:
            raise ProfileError(f"transfer bandwidth must be positive, got {self.transfer_bytes_per_s}")

    def class_cost(self, layer_class: LayerClass) -> ClassCost:
        try:
            return self.classes[layer_class]
        except KeyError:
            raise ProfileError(
                f"device {self.name!r} does not support layer class {layer_class.value!r}"
            ) from None


@dataclass(frozen=True)
class LayerCostEstimate:
    """Modeled cost of one layer on one device."""

    time_s: float
    power_w: float
    energy_j: float
    throughput_gflops: float
    flops: int


@dataclass(frozen=True)
class DensityMetrics:
    gflops_per_watt: float
    gflop_per_joule: float


def load_device_profile(text: str) -> DeviceProfile:
    """Parse a profile file; all five layer classes are required."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ProfileError("profile file must contain a JSON object")
    unknown = set(doc) - {"name", "classes", "overhead_s", "transfer_bytes_per_s", "clock_mhz"}
    if unknown:
        raise ProfileError(f"unknown profile keys {sorted(unknown)}")
    if "name" not in doc or "classes" not in doc:
        raise ProfileError("profile requires 'name' and 'classes'")
    raw_classes = doc["classes"]
    classes: dict[LayerClass, ClassCost] = {}
    for cls in LayerClass:
        if cls.value not in raw_classes:
            raise ProfileError(f"missing layer class {cls.value!r}")
        entry = raw_classes[cls.value]
        extra = set(entry) - {"gflops", "watts"}
        if extra:
            raise ProfileError(f"class {cls.value!r}: unknown keys {sorted(extra)}")
        if "gflops" not in entry or "watts" not in entry:
            raise ProfileError(f"class {cls.value!r} requires 'gflops' and 'watts'")
        classes[cls] = ClassCost(gflops=float(entry["gflops"]), watts=float(entry["watts"]))
    stray = set(raw_classes) - {cls.value for cls in LayerClass}
    if stray:
        raise ProfileError(f"unknown layer classes {sorted(stray)}")
    clock = doc.get("clock_mhz")
    return DeviceProfile(
        name=doc["name"],
        classes=classes,
        fixed_overhead_s=float(doc.get("overhead_s", 0.0)),
        transfer_bytes_per_s=float(doc.get("transfer_bytes_per_s", 8.0e9)),
        clock_mhz=None if clock is None else float(clock),
    )


def load_profile_file(path) -> DeviceProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return load_device_profile(fh.read())


def estimate_layer_time(
    layer: LayerSpec, direction: Direction, profile: DeviceProfile
) -> float:
    """Modeled seconds: flops / (class GFLOP/s * 1e9) + fixed overhead."""
    cost = profile.class_cost(layer_class_of(layer, direction))
    flops = count_layer_flops(layer, direction)
    return flops / (cost.gflops * 1e9) + profile.fixed_overhead_s


def estimate_layer_energy(time_s: float, power_w: float) -> float:
    """Joules consumed at constant power over the modeled interval."""
    if time_s < 0:
        raise ProfileError(f"time must be >= 0, got {time_s}")
    if power_w <= 0:
        raise ProfileError(f"power must be positive, got {power_w}")
    return power_w * time_s


def estimate_layer_cost(
    layer: LayerSpec, direction: Direction, profile: DeviceProfile
) -> LayerCostEstimate:
    """Full per-layer estimate; throughput reflects overhead (achieved, not peak)."""
    cost = profile.class_cost(layer_class_of(layer, direction))
    flops = count_layer_flops(layer, direction)
    time_s = flops / (cost.gflops * 1e9) + profile.fixed_overhead_s
    energy = estimate_layer_energy(time_s, cost.watts)
    throughput = 0.0 if time_s == 0.0 else flops / time_s / 1e9
    return LayerCostEstimate(
        time_s=time_s,
        power_w=cost.watts,
        energy_j=energy,
        throughput_gflops=throughput,
        flops=flops,
    )


def density_metrics(est: LayerCostEstimate) -> DensityMetrics:
    """Throughput per watt and operations per joule for one estimate."""
    gflops_per_watt = est.throughput_gflops / est.power_w
    gflop_per_joule = 0.0 if est.energy_j == 0.0 else (est.flops / 1e9) / est.energy_j
    return DensityMetrics(gflops_per_watt=gflops_per_watt, gflop_per_joule=gflop_per_joule)


def mops_per_joule(flop_counts: Sequence[int], energies_j: Sequence[float]) -> float:
    """Aggregate operations-per-energy ratio in MFLOP per joule.

    Computed as mean layer operations (MFLOP) over mean layer energy (J),
    which for equal-length inputs equals total operations over total energy.
    This is the scale on which published per-class efficiency figures for
    multi-second accelerator measurements are quoted.
    """
    if not flop_counts or len(flop_counts) != len(energies_j):
        raise ProfileError("flop and energy sequences must be non-empty and equally long")
    mean_mflop = sum(f / 1e6 for f in flop_counts) / len(flop_counts)
    mean_energy = sum(energies_j) / len(energies_j)
    if mean_energy <= 0:
        raise ProfileError("mean energy must be positive")
    return mean_mflop / mean_energy


class Measurement(NamedTuple):
    """One calibration observation of a layer on a device."""

    layer: LayerSpec
    time_s: float
    power_w: float
    direction: Direction = Direction.FORWARD


def calibrate_profile(
    measurements: Iterable[Measurement],
    name: str = "calibrated",
    fixed_overhead_s: float = 0.0,
    transfer_bytes_per_s: float = 8.0e9,
) -> DeviceProfile:
    """Fit per-class throughput and power as plain means over measurements.

    Class throughput is the mean of flops/time and class power the mean of
    measured power.  The class-average model is exact only when a class's
    measurements share one throughput; heterogeneous data is averaged.
    Classes without measurements are left out of the resulting profile.
    """
    groups: dict[LayerClass, list[tuple[float, float]]] = {}
    for m in measurements:
        if m.time_s <= 0:
            raise ProfileError(f"measured time must be positive, got {m.time_s}")
        flops = count_layer_flops(m.layer, m.direction)
        groups.setdefault(layer_class_of(m.layer, m.direction), []).append(
            (flops / m.time_s / 1e9, m.power_w)
        )
    if not groups:
        raise ProfileError("no measurements to calibrate from")
    classes = {
        cls: ClassCost(
            gflops=sum(t for t, _ in rows) / len(rows),
            watts=sum(p for _, p in rows) / len(rows),
        )
        for cls, rows in groups.items()
    }
    return DeviceProfile(
        name=name,
        classes=classes,
        fixed_overhead_s=fixed_overhead_s,
        transfer_bytes_per_s=transfer_bytes_per_s,
    )
