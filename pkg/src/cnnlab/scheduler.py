"""Chain scheduling: assign each layer to a device, optimizing one objective.

Two solvers are provided: an exhaustive enumeration (the oracle) and a
dynamic program over chain prefixes.  Both accumulate costs through the
same table and in the same left-to-right order, so their objective values
agree bitwise, not merely within tolerance.

Execution model: strictly sequential chain.  The input tensor starts
host-resident, so the first layer pays a host-to-device transfer and the
final output pays a device-to-host transfer; both count toward total time.
Crossing a device boundary between layers moves the intermediate tensor at
the slower of the two link bandwidths.  Transfers carry no power model and
therefore contribute no energy.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

from .device_models import DeviceProfile, LayerCostEstimate, estimate_layer_cost
from .errors import ScheduleError
from .model_ir import Direction, NetworkModel

ENUMERATION_CAP = 2**20
BYTES_PER_ELEMENT = 4  # single-precision payloads


class ObjectiveKind(str, Enum):
    MIN_LATENCY = "min_latency"
    MIN_PEAK_POWER = "min_peak_power"
    MIN_ENERGY = "min_energy"
    MAX_GFLOPS_PER_WATT = "max_gflops_per_watt"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    power_budget_w: Optional[float] = None

    def __post_init__(self) -> None:
        if self.power_budget_w is not None and self.power_budget_w <= 0:
            raise ScheduleError(f"power budget must be positive, got {self.power_budget_w}")


@dataclass(frozen=True)
class Schedule:
    """Per-layer device assignment plus the implied inter-device transfers."""

    assignment: tuple[str, ...]
    transfers: tuple[tuple[int, int], ...]  # (boundary index, bytes)


@dataclass(frozen=True)
class ScheduleCost:
    total_time_s: float
    total_energy_j: float
    peak_power_w: float
    transfer_time_s: float  # inter-device boundary transfers only
    host_io_time_s: float  # input upload plus output download
    total_flops: int
    per_layer: tuple[LayerCostEstimate, ...]


def device_map(profiles: Iterable[DeviceProfile]) -> dict[str, DeviceProfile]:
    out: dict[str, DeviceProfile] = {}
    for p in profiles:
        if p.name in out:
            raise ScheduleError(f"duplicate device name {p.name!r}")
        out[p.name] = p
    if not out:
        raise ScheduleError("need at least one device")
    return out


class _CostTable:
    """Precomputed per-layer and per-boundary costs for one (model, devices) pair.

    All floats are stored once and re-added in a fixed order by every
    consumer, which is what makes oracle and DP results bit-identical.
    """

    def __init__(self, model: NetworkModel, devices: Mapping[str, DeviceProfile]):
        self.model = model
        self.names = sorted(devices)
        self.devices = devices
        layers = model.layers
        self.estimates: list[dict[str, LayerCostEstimate]] = []
        for layer in layers:
            self.estimates.append(
                {name: estimate_layer_cost(layer, Direction.FORWARD, devices[name]) for name in self.names}
            )
        self.boundary_bytes = [
            layers[i].output_elements * BYTES_PER_ELEMENT for i in range(len(layers) - 1)
        ]
        self.transfer_s: list[dict[tuple[str, str], float]] = []
        for nbytes in self.boundary_bytes:
            table: dict[tuple[str, str], float] = {}
            for a in self.names:
                for b in self.names:
                    if a == b:
                        table[(a, b)] = 0.0
                    else:
                        bw = min(devices[a].transfer_bytes_per_s, devices[b].transfer_bytes_per_s)
                        table[(a, b)] = nbytes / bw
            self.transfer_s.append(table)
        in_bytes = layers[0].input_elements * BYTES_PER_ELEMENT
        out_bytes = layers[-1].output_elements * BYTES_PER_ELEMENT
        self.host_in = {name: in_bytes / devices[name].transfer_bytes_per_s for name in self.names}
        self.host_out = {name: out_bytes / devices[name].transfer_bytes_per_s for name in self.names}
        self.total_flops = sum(est[self.names[0]].flops for est in self.estimates)

    def totals(self, assignment: tuple[str, ...]) -> tuple[float, float, float, float, float]:
        """(time, energy, peak power, boundary transfer time, host io time)."""
        first = assignment[0]
        host_io = self.host_in[first]
        time = host_io
        est = self.estimates[0][first]
        time = time + est.time_s
        energy = 0.0 + est.energy_j
        peak = est.power_w
        transfer = 0.0
        for i in range(1, len(assignment)):
            prev_dev = assignment[i - 1]
            dev = assignment[i]
            tr = self.transfer_s[i - 1][(prev_dev, dev)]
            time = time + tr
            transfer = transfer + tr
            est = self.estimates[i][dev]
            time = time + est.time_s
            energy = energy + est.energy_j
            if est.power_w > peak:
                peak = est.power_w
        out_t = self.host_out[assignment[-1]]
        time = time + out_t
        host_io = host_io + out_t
        return time, energy, peak, transfer, host_io


def _density(total_flops: int, total_time_s: float, peak_power_w: float) -> float:
    return ((total_flops / total_time_s) / 1e9) / peak_power_w


def objective_value(objective: Objective, cost: ScheduleCost) -> float:
    """Scalar being minimized; density is negated so smaller is better."""
    kind = objective.kind
    if kind is ObjectiveKind.MIN_LATENCY:
        return cost.total_time_s
    if kind is ObjectiveKind.MIN_PEAK_POWER:
        return cost.peak_power_w
    if kind is ObjectiveKind.MIN_ENERGY:
        return cost.total_energy_j
    return -_density(cost.total_flops, cost.total_time_s, cost.peak_power_w)


def make_schedule(
    model: NetworkModel, assignment: Iterable[str], devices: Mapping[str, DeviceProfile]
) -> Schedule:
    """Build a Schedule, deriving the transfer list from adjacent device changes."""
    assignment = tuple(assignment)
    if len(assignment) != len(model.layers):
        raise ScheduleError(
            f"assignment length {len(assignment)} does not match layer count {len(model.layers)}"
        )
    for name in assignment:
        if name not in devices:
            raise ScheduleError(f"unknown device {name!r}")
    transfers = tuple(
        (i, model.layers[i].output_elements * BYTES_PER_ELEMENT)
        for i in range(len(assignment) - 1)
        if assignment[i] != assignment[i + 1]
    )
    return Schedule(assignment=assignment, transfers=transfers)


def evaluate_schedule(
    model: NetworkModel, schedule: Schedule, devices: Mapping[str, DeviceProfile]
) -> ScheduleCost:
    """Deterministic cost of a schedule under the sequential-chain model."""
    expected = make_schedule(model, schedule.assignment, devices)
    if expected.transfers != schedule.transfers:
        raise ScheduleError("schedule transfer list does not match its assignment")
    table = _CostTable(model, devices)
    time, energy, peak, transfer, host_io = table.totals(schedule.assignment)
    per_layer = tuple(table.estimates[i][dev] for i, dev in enumerate(schedule.assignment))
    return ScheduleCost(
        total_time_s=time,
        total_energy_j=energy,
        peak_power_w=peak,
        transfer_time_s=transfer,
        host_io_time_s=host_io,
        total_flops=table.total_flops,
        per_layer=per_layer,
    )


def _check_cap(n_devices: int, n_layers: int, cap: int) -> None:
    if n_devices**n_layers > cap:
        raise ScheduleError(
            f"enumeration cap exceeded: {n_devices}^{n_layers} schedules > {cap}"
        )


def _objective_from_totals(objective: Objective, table: _CostTable, totals) -> float:
    time, energy, peak, _, _ = totals
    kind = objective.kind
    if kind is ObjectiveKind.MIN_LATENCY:
        return time
    if kind is ObjectiveKind.MIN_PEAK_POWER:
        return peak
    if kind is ObjectiveKind.MIN_ENERGY:
        return energy
    return -_density(table.total_flops, time, peak)


def enumerate_all_schedules(
    model: NetworkModel,
    devices: Mapping[str, DeviceProfile],
    objective: Objective,
    cap: int = ENUMERATION_CAP,
) -> Schedule:
    """Exhaustive oracle; ties broken toward the lexicographically smallest assignment."""
    table = _CostTable(model, devices)
    _check_cap(len(table.names), len(model.layers), cap)
    budget = objective.power_budget_w
    best_value: Optional[float] = None
    best_assignment: Optional[tuple[str, ...]] = None
    for assignment in itertools.product(table.names, repeat=len(model.layers)):
        totals = table.totals(assignment)
        if budget is not None and totals[2] > budget:
            continue
        value = _objective_from_totals(objective, table, totals)
        if best_value is None or value < best_value:
            best_value = value
            best_assignment = assignment
    if best_assignment is None:
        raise ScheduleError("no feasible schedule")
    return make_schedule(model, best_assignment, devices)


def _allowed_devices(table: _CostTable, budget: Optional[float]) -> list[list[str]]:
    """Per-layer device lists after applying the power budget."""
    allowed = []
    for i in range(len(table.model.layers)):
        names = [
            name
            for name in table.names
            if budget is None or table.estimates[i][name].power_w <= budget
        ]
        if not names:
            raise ScheduleError("no feasible schedule")
        allowed.append(names)
    return allowed


def _dp_min_additive(
    table: _CostTable,
    allowed: list[list[str]],
    use_energy: bool,
) -> tuple[str, ...]:
    """Forward chain DP; additions mirror _CostTable.totals exactly."""
    n_layers = len(table.model.layers)
    dp: dict[str, float] = {}
    parents: list[dict[str, str]] = []
    for d in allowed[0]:
        est = table.estimates[0][d]
        if use_energy:
            dp[d] = 0.0 + est.energy_j
        else:
            dp[d] = (table.host_in[d]) + est.time_s
    for i in range(1, n_layers):
        nxt: dict[str, float] = {}
        parent: dict[str, str] = {}
        for d in allowed[i]:
            est = table.estimates[i][d]
            best = None
            best_parent = None
            for prev in allowed[i - 1]:
                if use_energy:
                    cand = dp[prev]
                else:
                    cand = dp[prev] + table.transfer_s[i - 1][(prev, d)]
                if best is None or cand < best:
                    best = cand
                    best_parent = prev
            nxt[d] = best + (est.energy_j if use_energy else est.time_s)
            parent[d] = best_parent
        dp = nxt
        parents.append(parent)
    best_final = None
    best_dev = None
    for d in allowed[-1]:
        value = dp[d] if use_energy else dp[d] + table.host_out[d]
        if best_final is None or value < best_final:
            best_final = value
            best_dev = d
    chain = [best_dev]
    for parent in reversed(parents):
        chain.append(parent[chain[-1]])
    chain.reverse()
    return tuple(chain)


def _dp_min_peak_power(table: _CostTable, allowed: list[list[str]]) -> tuple[str, ...]:
    """Closed form of the threshold reduction: the minimum achievable peak is
    the maximum over layers of the per-layer minimum class power, and picking
    each layer's smallest-name device under that threshold is both optimal
    and the lexicographically smallest optimum."""
    peak = max(
        min(table.estimates[i][d].power_w for d in layer_allowed)
        for i, layer_allowed in enumerate(allowed)
    )
    return tuple(
        next(d for d in layer_allowed if table.estimates[i][d].power_w <= peak)
        for i, layer_allowed in enumerate(allowed)
    )


def dp_schedule(
    model: NetworkModel, devices: Mapping[str, DeviceProfile], objective: Objective
) -> Schedule:
    """Dynamic program over the chain; objective value matches the oracle exactly.

    Latency and energy are additive along the chain and solved directly in
    O(layers * devices^2).  Peak power uses the threshold reduction.  Density
    re-runs the latency DP once per candidate power ceiling (the distinct
    class powers) and keeps the best resulting schedule.
    """
    table = _CostTable(model, devices)
    budget = objective.power_budget_w
    allowed = _allowed_devices(table, budget)
    kind = objective.kind
    if kind is ObjectiveKind.MIN_LATENCY:
        assignment = _dp_min_additive(table, allowed, use_energy=False)
    elif kind is ObjectiveKind.MIN_ENERGY:
        assignment = _dp_min_additive(table, allowed, use_energy=True)
    elif kind is ObjectiveKind.MIN_PEAK_POWER:
        assignment = _dp_min_peak_power(table, allowed)
    else:
        ceilings = sorted(
            {
                table.estimates[i][d].power_w
                for i, layer_allowed in enumerate(allowed)
                for d in layer_allowed
            }
        )
        best_value = None
        assignment = None
        for ceiling in ceilings:
            capped = [
                [d for d in layer_allowed if table.estimates[i][d].power_w <= ceiling]
                for i, layer_allowed in enumerate(allowed)
            ]
            if any(not names for names in capped):
                continue
            candidate = _dp_min_additive(table, capped, use_energy=False)
            totals = table.totals(candidate)
            value = _objective_from_totals(objective, table, totals)
            if best_value is None or value < best_value:
                best_value = value
                assignment = candidate
        if assignment is None:
            raise ScheduleError("no feasible schedule")
    return make_schedule(model, assignment, devices)


def pareto_frontier(
    model: NetworkModel,
    devices: Mapping[str, DeviceProfile],
    cap: int = ENUMERATION_CAP,
) -> list[tuple[Schedule, ScheduleCost]]:
    """Schedules not dominated in (total time, total energy, peak power).

    Sorted by total time ascending; identical cost triples are collapsed to
    the lexicographically smallest assignment.
    """
    table = _CostTable(model, devices)
    _check_cap(len(table.names), len(model.layers), cap)
    candidates = []
    for assignment in itertools.product(table.names, repeat=len(model.layers)):
        time, energy, peak, _, _ = table.totals(assignment)
        candidates.append((time, energy, peak, assignment))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))  # stable: lex-smallest first on ties
    frontier: list[tuple[float, float, float, tuple[str, ...]]] = []
    for time, energy, peak, assignment in candidates:
        dominated = False
        for ft, fe, fp, _ in frontier:
            if ft <= time and fe <= energy and fp <= peak:
                dominated = True  # equal triples collapse onto the kept point
                break
        if not dominated:
            frontier.append((time, energy, peak, assignment))
    out = []
    for _, _, _, assignment in frontier:
        schedule = make_schedule(model, assignment, devices)
        out.append((schedule, evaluate_schedule(model, schedule, devices)))
    return out


def schedule_to_json(model: NetworkModel, schedule: Schedule) -> str:
    return json.dumps({"model": model.name, "assignment": list(schedule.assignment)}, indent=2) + "\n"


def schedule_from_json(
    text: str, model: NetworkModel, devices: Mapping[str, DeviceProfile]
) -> Schedule:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or set(doc) != {"model", "assignment"}:
        raise ScheduleError("schedule file must be an object with 'model' and 'assignment'")
    if doc["model"] != model.name:
        raise ScheduleError(
            f"schedule is for model {doc['model']!r}, not {model.name!r}"
        )
    return make_schedule(model, doc["assignment"], devices)
