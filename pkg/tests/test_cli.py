import json

import pytest

from cnnlab.cli import main
from cnnlab.fixtures import fixture_path


def fx(name: str) -> str:
    return str(fixture_path(name))


MODEL8 = fx("alexnet8.model")
MODEL13 = fx("alexnet13.model")
CUDNN = fx("k40-cudnn.profile")
CUBLAS = fx("k40-cublas.profile")
FPGA = fx("de5-fpga.profile")


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestFlops:
    def test_table_rows(self, capsys):
        code, out, err = run(capsys, "flops", "--model", MODEL8)
        assert code == 0 and err == ""
        lines = {line.split()[0]: line.split() for line in out.splitlines()[1:]}
        assert lines["fc7"][2] == "33554432"
        assert lines["fc6"][3] == "150994944"
        assert lines["conv1"][3] == "-"

    def test_unit_conv_model(self, capsys, tmp_path):
        path = tmp_path / "unit.model"
        path.write_text(
            '{"name": "unit", "layers": [{"type": "conv", "input": [1, 1, 1],'
            ' "kernel": [1, 1, 1, 1], "stride": 1}]}'
        )
        code, out, _ = run(capsys, "flops", "--model", str(path))
        assert code == 0
        row = out.splitlines()[1].split()
        assert row[2] == "2" and row[3] == "-"

    def test_bad_model_single_stderr_line(self, capsys, tmp_path):
        path = tmp_path / "bad.model"
        path.write_text("{nope")
        code, out, err = run(capsys, "flops", "--model", str(path))
        assert code != 0
        assert err.count("\n") == 1 and err.startswith("error: ")

    def test_golden_stability(self, capsys):
        _, out1, _ = run(capsys, "flops", "--model", MODEL8)
        _, out2, _ = run(capsys, "flops", "--model", MODEL8)
        assert out1 == out2


class TestValidate:
    def test_clean_model(self, capsys):
        code, out, err = run(capsys, "validate", "--model", MODEL13)
        assert code == 0
        assert "total_forward_flops 2277693216" in out

    def test_broken_model(self, capsys, tmp_path):
        path = tmp_path / "broken.model"
        path.write_text(
            json.dumps(
                {
                    "name": "broken",
                    "layers": [
                        {"type": "fc", "input": 4, "out": 2},
                        {"type": "fc", "input": 3, "out": 2},
                    ],
                }
            )
        )
        code, out, err = run(capsys, "validate", "--model", str(path))
        assert code != 0
        assert err.count("\n") == 1


class TestSchedule:
    def test_latency_selects_gpu(self, capsys, tmp_path):
        out_path = tmp_path / "s.json"
        code, out, _ = run(
            capsys,
            "schedule", "--model", MODEL8,
            "--profile", CUDNN, FPGA,
            "--objective", "latency",
            "--out", str(out_path),
        )
        assert code == 0
        doc = json.loads(out_path.read_text())
        assert doc["assignment"] == ["k40-cudnn"] * 8
        assert "total_time_s" in out and "peak_power_w" in out

    def test_peak_power_selects_fpga(self, capsys, tmp_path):
        out_path = tmp_path / "s.json"
        code, _, _ = run(
            capsys,
            "schedule", "--model", MODEL8,
            "--profile", CUDNN, "--profile", FPGA,
            "--objective", "peak-power",
            "--out", str(out_path),
        )
        assert code == 0
        assert json.loads(out_path.read_text())["assignment"] == ["de5-fpga"] * 8

    def test_infeasible_budget(self, capsys, tmp_path):
        code, _, err = run(
            capsys,
            "schedule", "--model", MODEL8,
            "--profile", CUDNN, FPGA,
            "--objective", "latency",
            "--power-budget", "1.0",
            "--out", str(tmp_path / "s.json"),
        )
        assert code != 0
        assert err == "error: no feasible schedule\n"

    def test_golden_stability(self, capsys, tmp_path):
        outputs = []
        for i in range(2):
            path = tmp_path / f"s{i}.json"
            _, out, _ = run(
                capsys,
                "schedule", "--model", MODEL8,
                "--profile", CUDNN, FPGA,
                "--objective", "energy",
                "--out", str(path),
            )
            outputs.append((out, path.read_text()))
        assert outputs[0] == outputs[1]


class TestProfile:
    def test_fpga_conv_rows_power(self, capsys):
        code, out, _ = run(capsys, "profile", "--model", MODEL8, "--profile", FPGA)
        assert code == 0
        for line in out.splitlines():
            if line.startswith("conv"):
                assert line.split()[4] == "2.23"

    def test_gpu_fc_density(self, capsys):
        code, out, _ = run(capsys, "profile", "--model", MODEL8, "--profile", CUDNN)
        assert code == 0
        for line in out.splitlines():
            if line.startswith("fc"):
                density = float(line.split()[7])
                assert density == pytest.approx(14.20, rel=0.05)

    def test_rerun_is_byte_identical(self, capsys):
        _, out1, _ = run(capsys, "profile", "--model", MODEL13, "--profile", CUDNN, FPGA, "--seed", "4")
        _, out2, _ = run(capsys, "profile", "--model", MODEL13, "--profile", CUDNN, FPGA, "--seed", "4")
        strip = lambda text: "\n".join(
            line for line in text.splitlines() if "wall_clock" not in line
        )
        assert strip(out1) == strip(out2)

    def test_csv_output(self, capsys, tmp_path):
        csv_path = tmp_path / "report.csv"
        code, _, _ = run(
            capsys, "profile", "--model", MODEL8, "--profile", FPGA, "--csv", str(csv_path)
        )
        assert code == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "layer,device,flops,time_s,power_w,energy_j,gflops,gflops_per_w,gflop_per_j"
        assert len(lines) == 9

    def test_explicit_schedule(self, capsys, tmp_path):
        sched = tmp_path / "s.json"
        sched.write_text(json.dumps({"model": "alexnet8", "assignment": ["de5-fpga"] * 8}))
        code, out, _ = run(
            capsys, "profile", "--model", MODEL8, "--profile", CUDNN, FPGA, "--schedule", str(sched)
        )
        assert code == 0
        assert "de5-fpga" in out and "k40-cudnn" not in out

    def test_schedule_model_mismatch(self, capsys, tmp_path):
        sched = tmp_path / "s.json"
        sched.write_text(json.dumps({"model": "other", "assignment": ["de5-fpga"] * 8}))
        code, _, err = run(
            capsys, "profile", "--model", MODEL8, "--profile", FPGA, "--schedule", str(sched)
        )
        assert code != 0 and err.count("\n") == 1


class TestInfer:
    def test_seeded_inference(self, capsys, tmp_path):
        import cnnlab
        from cnnlab.weights_io import generate_weights, save_weights

        model = cnnlab.load_model(MODEL13)
        weights_path = tmp_path / "w.bin"
        with open(weights_path, "wb") as fh:
            save_weights(fh, model, generate_weights(model, seed=0))
        code, out1, _ = run(
            capsys, "infer", "--model", MODEL13, "--weights", str(weights_path), "--seed", "2"
        )
        assert code == 0
        assert "length 1000" in out1
        code, out2, _ = run(
            capsys, "infer", "--model", MODEL13, "--weights", str(weights_path), "--seed", "2"
        )
        assert out1 == out2

    def test_input_file(self, capsys, tmp_path):
        import numpy as np

        import cnnlab
        from cnnlab.compute_kernels import Tensor
        from cnnlab.weights_io import generate_weights, save_tensor, save_weights

        model = cnnlab.parse_model(
            '{"name": "m", "layers": [{"type": "fc", "input": 6, "out": 3, "mode": "softmax"}]}'
        )
        weights_path = tmp_path / "w.bin"
        with open(weights_path, "wb") as fh:
            save_weights(fh, model, generate_weights(model, seed=0))
        model_path = tmp_path / "m.model"
        model_path.write_text(cnnlab.render_model(model))
        input_path = tmp_path / "x.bin"
        with open(input_path, "wb") as fh:
            save_tensor(fh, Tensor.from_flat(np.arange(6, dtype=np.float32)))
        code, out, _ = run(
            capsys,
            "infer", "--model", str(model_path),
            "--weights", str(weights_path),
            "--input", str(input_path),
        )
        assert code == 0 and "length 3" in out


class TestPareto:
    def test_extremes_listed(self, capsys):
        code, out, _ = run(capsys, "pareto", "--model", MODEL8, "--profile", CUDNN, FPGA)
        assert code == 0
        body = out.splitlines()[1:]
        assert any(line.endswith(",".join(["k40-cudnn"] * 8)) for line in body)
        assert any(line.endswith(",".join(["de5-fpga"] * 8)) for line in body)

    def test_golden_stability(self, capsys):
        _, out1, _ = run(capsys, "pareto", "--model", MODEL8, "--profile", CUDNN, FPGA)
        _, out2, _ = run(capsys, "pareto", "--model", MODEL8, "--profile", CUDNN, FPGA)
        assert out1 == out2


class TestExitDiscipline:
    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, "flops", "--nope")
        assert code != 0
        assert err.count("\n") == 1 and err.startswith("error: ")

    def test_missing_file(self, capsys):
        code, _, err = run(capsys, "flops", "--model", "/does/not/exist.model")
        assert code != 0
        assert err.count("\n") == 1
