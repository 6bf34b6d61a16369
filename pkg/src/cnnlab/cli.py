"""Command-line interface: validate, flops, infer, schedule, profile, pareto.

Every command is non-interactive, exits 0 on success, and reports failures
as exactly one diagnostic line on stderr with a nonzero exit code.  Numbers
are rendered with 6 significant digits and a '.' decimal separator so
outputs are byte-stable across runs and platforms.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import compute_kernels as ck
from . import model_ir, runtime, scheduler, weights_io
from .device_models import ClassCost, DeviceProfile, LayerClass, load_profile_file
from .errors import CnnlabError
from .model_ir import Direction, FcSpec
from .runtime import fmt

_OBJECTIVES = {
    "latency": scheduler.ObjectiveKind.MIN_LATENCY,
    "peak-power": scheduler.ObjectiveKind.MIN_PEAK_POWER,
    "energy": scheduler.ObjectiveKind.MIN_ENERGY,
    "density": scheduler.ObjectiveKind.MAX_GFLOPS_PER_WATT,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # single-line diagnostics, like every other failure
        raise CnnlabError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cnnlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model description")
    p.add_argument("--model", required=True)

    p = sub.add_parser("flops", help="per-layer operation counts")
    p.add_argument("--model", required=True)

    p = sub.add_parser("infer", help="run inference over the reference kernels")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    source = p.add_mutually_exclusive_group()
    source.add_argument("--input")
    source.add_argument("--seed", type=int)

    p = sub.add_parser("schedule", help="optimize the layer-to-device mapping")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", required=True, nargs="+", action="extend")
    p.add_argument("--objective", required=True, choices=sorted(_OBJECTIVES))
    p.add_argument("--power-budget", type=float, dest="power_budget")
    p.add_argument("--out", required=True)

    p = sub.add_parser("profile", help="modeled per-layer cost report")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", required=True, nargs="+", action="extend")
    p.add_argument("--schedule")
    p.add_argument("--csv")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pareto", help="non-dominated schedules in time/energy/peak power")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", required=True, nargs="+", action="extend")
    return parser


def _load_devices(paths) -> dict:
    return scheduler.device_map(load_profile_file(p) for p in paths)


def _cmd_validate(args) -> int:
    model = model_ir.load_model(args.model)
    report = model_ir.validate_network(model)
    for entry in report.entries:
        succ = "-" if entry.successor_elements is None else str(entry.successor_elements)
        status = "ok" if entry.boundary_ok else "MISMATCH"
        print(
            f"{entry.name}  {entry.layer_class}  out={'x'.join(map(str, entry.declared_output))}"
            f"  elements={entry.output_elements}  next_in={succ}  {status}"
        )
    print(f"total_forward_flops {report.total_forward_flops}")
    if not report.ok:
        for err in report.errors:
            print(f"error: {err}")
        raise CnnlabError(f"{len(report.errors)} validation error(s)")
    return 0


def _cmd_flops(args) -> int:
    model = model_ir.load_model(args.model)
    rows = []
    for name, layer in zip(model.layer_names(), model.layers):
        forward = model_ir.count_layer_flops(layer, Direction.FORWARD)
        if isinstance(layer, FcSpec):
            backward = str(model_ir.count_layer_flops(layer, Direction.BACKWARD))
        else:
            backward = "-"
        rows.append((name, layer.layer_class, str(forward), backward))
    header = ("layer", "type", "forward", "backward")
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(4)]
    print("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
    for row in rows:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return 0


def _seeded_input(model: model_ir.NetworkModel, seed: int) -> ck.Tensor:
    first = model.layers[0]
    rng = np.random.default_rng([seed, 1])
    if isinstance(first, FcSpec):
        flat = rng.random(first.input_len, dtype=np.float32)
        return ck.Tensor.from_flat(flat)
    shape = first.input
    data = rng.random(shape.as_tuple(), dtype=np.float32)
    return ck.Tensor(shape, data)


def _cmd_infer(args) -> int:
    model = model_ir.load_model(args.model)
    with open(args.weights, "rb") as fh:
        weights = weights_io.load_weights(fh, model)
    if args.input is not None:
        with open(args.input, "rb") as fh:
            flat = weights_io.load_tensor_data(fh)
        first = model.layers[0]
        if isinstance(first, FcSpec):
            tensor = ck.Tensor.from_flat(flat)
        else:
            if flat.size != first.input.element_count:
                raise CnnlabError(
                    f"input has {flat.size} elements, model expects {first.input.element_count}"
                )
            tensor = ck.Tensor(first.input, flat.reshape(first.input.as_tuple()))
    else:
        tensor = _seeded_input(model, args.seed if args.seed is not None else 0)
    devices = {"cpu": _default_profile()}
    schedule = scheduler.make_schedule(model, ["cpu"] * len(model.layers), devices)
    plan = runtime.build_execution_plan(model, schedule, weights, devices)
    output, _ = runtime.execute(plan, tensor)
    flat = output.flat
    total = float(np.sum(flat, dtype=np.float64))
    argmax = int(np.argmax(flat))
    print(
        f"output: length {flat.size}, sum {fmt(total)}, argmax {argmax}, max {fmt(float(flat[argmax]))}"
    )
    return 0


def _default_profile() -> DeviceProfile:
    cost = ClassCost(gflops=1.0, watts=1.0)
    return DeviceProfile(name="cpu", classes={cls: cost for cls in LayerClass})


def _cmd_schedule(args) -> int:
    model = model_ir.load_model(args.model)
    devices = _load_devices(args.profile)
    objective = scheduler.Objective(
        kind=_OBJECTIVES[args.objective], power_budget_w=args.power_budget
    )
    schedule = scheduler.dp_schedule(model, devices, objective)
    cost = scheduler.evaluate_schedule(model, schedule, devices)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(scheduler.schedule_to_json(model, schedule))
    print(f"assignment {','.join(schedule.assignment)}")
    print(f"total_time_s {fmt(cost.total_time_s)}")
    print(f"total_energy_j {fmt(cost.total_energy_j)}")
    print(f"peak_power_w {fmt(cost.peak_power_w)}")
    return 0


def _cmd_profile(args) -> int:
    model = model_ir.load_model(args.model)
    profiles = [load_profile_file(p) for p in args.profile]
    devices = scheduler.device_map(profiles)
    if args.schedule is not None:
        with open(args.schedule, "r", encoding="utf-8") as fh:
            schedule = scheduler.schedule_from_json(fh.read(), model, devices)
    else:
        first = profiles[0].name
        schedule = scheduler.make_schedule(model, [first] * len(model.layers), devices)
    validation = model_ir.validate_network(model)
    if not validation.ok:
        raise CnnlabError(f"{len(validation.errors)} validation error(s) in {model.name}")
    if model_ir.chain_contiguous(model):
        weights = weights_io.generate_weights(model, args.seed)
        plan = runtime.build_execution_plan(model, schedule, weights, devices)
        _, report = runtime.execute(plan, _seeded_input(model, args.seed))
    else:
        # Annotated-transition models have no executable chain; report modeled costs only.
        rows, totals = runtime.cost_report(model, schedule, devices)
        report = runtime.ProfileReport(rows=rows, totals=totals, wall_clock_s=None)
    sys.stdout.write(runtime.report_table(report))
    if args.csv is not None:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(runtime.report_csv(report))
    return 0


def _cmd_pareto(args) -> int:
    model = model_ir.load_model(args.model)
    devices = _load_devices(args.profile)
    frontier = scheduler.pareto_frontier(model, devices)
    print("total_time_s  total_energy_j  peak_power_w  assignment")
    for schedule, cost in frontier:
        print(
            f"{fmt(cost.total_time_s)}  {fmt(cost.total_energy_j)}  "
            f"{fmt(cost.peak_power_w)}  {','.join(schedule.assignment)}"
        )
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "flops": _cmd_flops,
    "infer": _cmd_infer,
    "schedule": _cmd_schedule,
    "profile": _cmd_profile,
    "pareto": _cmd_pareto,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CnnlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
