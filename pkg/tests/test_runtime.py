import numpy as np
import pytest

from cnnlab.compute_kernels import Tensor
from cnnlab.errors import ScheduleError, ShapeError, WeightsError
from cnnlab.model_ir import parse_model
from cnnlab.runtime import (
    HOST,
    BufferSpace,
    build_execution_plan,
    cost_report,
    execute,
    report_csv,
    transfer_buffer,
)
from cnnlab.scheduler import evaluate_schedule, make_schedule
from cnnlab.weights_io import generate_weights

SMALL = """
{"name": "tiny", "layers": [
  {"type": "conv", "input": [2, 6, 6], "kernel": [3, 2, 3, 3], "stride": 1, "pad": [1, 1, 1, 1], "activation": "relu"},
  {"type": "lrn", "input": [3, 6, 6], "local_size": 3, "alpha": 0.01, "beta": 0.75},
  {"type": "pool", "input": [3, 6, 6], "pool": "max", "window": [2, 2], "stride": 2},
  {"type": "fc", "input": [3, 3, 3], "out": 10, "mode": "softmax"}
]}
"""


@pytest.fixture
def tiny():
    return parse_model(SMALL)


def seeded_input(model, seed=0):
    rng = np.random.default_rng([seed, 1])
    shape = model.layers[0].input
    return Tensor(shape, rng.random(shape.as_tuple(), dtype=np.float32))


class TestPlanBuilding:
    def test_single_device_plan_has_no_transfers(self, alexnet13, gpu_fpga_devices):
        weights = generate_weights(alexnet13, seed=0)
        schedule = make_schedule(alexnet13, ["k40-cudnn"] * 13, gpu_fpga_devices)
        plan = build_execution_plan(alexnet13, schedule, weights, gpu_fpga_devices)
        assert sum(step.needs_transfer for step in plan.buffer_plan) == 0

    def test_mixed_plan_counts_device_changes(self, alexnet13, gpu_fpga_devices):
        weights = generate_weights(alexnet13, seed=0)
        assignment = ["de5-fpga" if l.layer_class != "fc" else "k40-cudnn" for l in alexnet13.layers]
        schedule = make_schedule(alexnet13, assignment, gpu_fpga_devices)
        plan = build_execution_plan(alexnet13, schedule, weights, gpu_fpga_devices)
        assert sum(step.needs_transfer for step in plan.buffer_plan) == 1

    def test_wrong_blob_size_names_layer_and_count(self, alexnet13, gpu_fpga_devices):
        weights = generate_weights(alexnet13, seed=0)
        fc6_index = 10
        bad = weights[fc6_index]
        weights[fc6_index] = type(bad)(
            matrix=bad.matrix[:, :-1].copy(), bias=bad.bias[:-1].copy()
        )
        schedule = make_schedule(alexnet13, ["k40-cudnn"] * 13, gpu_fpga_devices)
        with pytest.raises(WeightsError) as exc:
            build_execution_plan(alexnet13, schedule, weights, gpu_fpga_devices)
        assert "fc11" in str(exc.value)
        assert str(9216 * 4096) in str(exc.value)

    def test_annotated_model_rejected(self, alexnet8, gpu_fpga_devices):
        weights = generate_weights(alexnet8, seed=0)
        schedule = make_schedule(alexnet8, ["k40-cudnn"] * 8, gpu_fpga_devices)
        with pytest.raises(ScheduleError, match="no executable chain"):
            build_execution_plan(alexnet8, schedule, weights, gpu_fpga_devices)


class TestBufferSpace:
    def test_transfer_arithmetic(self, gpu_fpga_devices):
        buffers = BufferSpace(gpu_fpga_devices)
        tensor = Tensor.from_flat(np.zeros(4096, np.float32))
        buffers.define("x", tensor, "k40-cudnn")
        record = transfer_buffer(buffers, "x", "k40-cudnn", "de5-fpga")
        assert record.bytes == 16384
        assert record.seconds == pytest.approx(2.048e-6, rel=1e-12)
        assert buffers.residency("x") == "de5-fpga"

    def test_same_device_is_free(self, gpu_fpga_devices):
        buffers = BufferSpace(gpu_fpga_devices)
        buffers.define("x", Tensor.from_flat(np.zeros(4, np.float32)), "de5-fpga")
        record = transfer_buffer(buffers, "x", "de5-fpga", "de5-fpga")
        assert record.seconds == 0.0
        assert buffers.residency("x") == "de5-fpga"

    def test_use_before_definition(self, gpu_fpga_devices):
        buffers = BufferSpace(gpu_fpga_devices)
        with pytest.raises(ScheduleError, match="not been produced"):
            transfer_buffer(buffers, "ghost", HOST, "de5-fpga")

    def test_wrong_residency(self, gpu_fpga_devices):
        buffers = BufferSpace(gpu_fpga_devices)
        buffers.define("x", Tensor.from_flat(np.zeros(4, np.float32)), HOST)
        with pytest.raises(ScheduleError, match="resident on"):
            transfer_buffer(buffers, "x", "de5-fpga", "k40-cudnn")


class TestExecution:
    def test_output_is_normalized(self, tiny, gpu_fpga_devices):
        weights = generate_weights(tiny, seed=3)
        schedule = make_schedule(tiny, ["k40-cudnn"] * 4, gpu_fpga_devices)
        plan = build_execution_plan(tiny, schedule, weights, gpu_fpga_devices)
        out, report = execute(plan, seeded_input(tiny, 3))
        assert out.flat.size == 10
        assert abs(float(np.sum(out.flat, dtype=np.float64)) - 1.0) <= 1e-6
        assert report.wall_clock_s is not None

    def test_deterministic_across_runs(self, tiny, gpu_fpga_devices):
        weights = generate_weights(tiny, seed=5)
        schedule = make_schedule(tiny, ["de5-fpga"] * 4, gpu_fpga_devices)
        plan = build_execution_plan(tiny, schedule, weights, gpu_fpga_devices)
        a, ra = execute(plan, seeded_input(tiny, 5))
        b, rb = execute(plan, seeded_input(tiny, 5))
        assert np.array_equal(a.data, b.data)
        assert ra.totals == rb.totals

    def test_schedule_invariance(self, tiny, gpu_fpga_devices):
        weights = generate_weights(tiny, seed=7)
        x = seeded_input(tiny, 7)
        outputs = []
        for assignment in (
            ["k40-cudnn"] * 4,
            ["de5-fpga"] * 4,
            ["k40-cudnn", "de5-fpga", "k40-cudnn", "de5-fpga"],
        ):
            schedule = make_schedule(tiny, assignment, gpu_fpga_devices)
            plan = build_execution_plan(tiny, schedule, weights, gpu_fpga_devices)
            out, _ = execute(plan, x)
            outputs.append(out.data)
        assert np.array_equal(outputs[0], outputs[1])
        assert np.array_equal(outputs[0], outputs[2])

    def test_report_matches_schedule_evaluation_exactly(self, tiny, gpu_fpga_devices):
        weights = generate_weights(tiny, seed=11)
        assignment = ["de5-fpga", "de5-fpga", "k40-cudnn", "k40-cudnn"]
        schedule = make_schedule(tiny, assignment, gpu_fpga_devices)
        plan = build_execution_plan(tiny, schedule, weights, gpu_fpga_devices)
        _, report = execute(plan, seeded_input(tiny, 11))
        cost = evaluate_schedule(tiny, schedule, gpu_fpga_devices)
        assert report.totals == cost
        assert [r.time_s for r in report.rows] == [e.time_s for e in cost.per_layer]

    def test_conservation_of_elements(self, tiny, gpu_fpga_devices):
        # Every boundary hands exactly the produced element count to the consumer.
        for i in range(len(tiny.layers) - 1):
            assert tiny.layers[i].output_elements == tiny.layers[i + 1].input_elements

    def test_bad_input_shape(self, tiny, gpu_fpga_devices):
        weights = generate_weights(tiny, seed=0)
        schedule = make_schedule(tiny, ["k40-cudnn"] * 4, gpu_fpga_devices)
        plan = build_execution_plan(tiny, schedule, weights, gpu_fpga_devices)
        with pytest.raises(ShapeError, match="input"):
            execute(plan, Tensor.from_flat(np.zeros(5, np.float32)))


class TestReportRendering:
    def test_csv_header(self, tiny, gpu_fpga_devices):
        schedule = make_schedule(tiny, ["de5-fpga"] * 4, gpu_fpga_devices)
        rows, totals = cost_report(tiny, schedule, gpu_fpga_devices)
        from cnnlab.runtime import ProfileReport

        text = report_csv(ProfileReport(rows=rows, totals=totals, wall_clock_s=None))
        lines = text.splitlines()
        assert lines[0] == "layer,device,flops,time_s,power_w,energy_j,gflops,gflops_per_w,gflop_per_j"
        assert len(lines) == 5
