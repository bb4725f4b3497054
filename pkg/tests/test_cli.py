import json

import pytest

from texgrad.cli import main, parse_shapes


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_train_demo_converges(capsys):
    code, out, _ = run(capsys, "train-demo", "--epochs", "200", "--lr", "0.01", "--seed", "42", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["converged"]
    assert doc["final_loss"] < 1e-2 and 8.5 <= doc["prediction_at_5"] <= 9.5
    assert len(doc["history"]) == 200


def test_train_demo_zero_epochs(capsys):
    code, out, _ = run(capsys, "train-demo", "--epochs", "0", "--backend", "cpu")
    assert code == 1
    assert "initial loss" in out and "epoch" not in out and "predict(5)" not in out


def test_train_demo_save_then_predict(capsys, tmp_path):
    code, out, _ = run(capsys, "train-demo", "--epochs", "20", "--save", str(tmp_path), "--json",
                       "--backend", "cpu")
    trained = json.loads(out)["prediction_at_5"]
    code, out, _ = run(capsys, "predict", "--load", str(tmp_path), "--x", "5", "--json", "--backend", "cpu")
    assert code == 0 and json.loads(out)["outputs"] == [[trained]]


def test_json_output_is_deterministic(capsys):
    argv = ["train-demo", "--epochs", "5", "--json", "--backend", "cpu"]
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]
    argv = ["profile", "--workload", "matmul", "--size", "8", "--json"]
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]


def test_parity_smoke(capsys):
    code, out, _ = run(capsys, "parity", "--trials", "3", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["passed"]
    assert {k["kernel"] for k in doc["kernels"]} >= {"matmul", "conv2d", "add"}


def test_parity_zero_trials_warns(capsys):
    code, _, err = run(capsys, "parity", "--trials", "0")
    assert code == 0 and "warning" in err


def test_parity_f16_uses_loose_tolerance(capsys):
    code, out, _ = run(capsys, "parity", "--trials", "2", "--profile", "f16", "--kernels", "matmul", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["profile"] == "F16"
    assert doc["kernels"][0]["tolerance"] == 1e-2


def test_dump_kernel_matmul(capsys):
    code, out, _ = run(capsys, "dump-kernel", "--op", "matmul", "--shapes", "2x4,4x3")
    assert code == 0 and "result += dot(a, b);" in out and "i += 4" in out
    assert run(capsys, "dump-kernel", "--op", "matmul", "--shapes", "2x4,4x3")[1] == out


def test_dump_kernel_squeezed_add(capsys):
    code, out, _ = run(capsys, "dump-kernel", "--op", "add", "--shapes", "1x3x1x2,1x3x1x2")
    assert code == 0
    assert "float getA(int a, int b, int c, int d) {" in out
    assert "vec2(float(d), float(b))" in out


def test_dump_kernel_with_attrs(capsys):
    code, out, _ = run(capsys, "dump-kernel", "--op", "conv2d", "--shapes", "1x5x5x2,3x3x2x4",
                       "--attr", "padding=same", "--attr", "strides=[2,2]")
    assert code == 0 and "getB(" in out


def test_dump_kernel_errors(capsys):
    code, _, err = run(capsys, "dump-kernel", "--op", "fft", "--shapes", "2x2")
    assert code == 2 and "UNSUPPORTED_OP" in err
    code, _, err = run(capsys, "dump-kernel", "--op", "add", "--shapes", "2x3,4")
    assert code == 2 and "BROADCAST_INCOMPATIBLE" in err


def test_usage_errors(capsys):
    assert run(capsys, "train-demo", "--bogus")[0] == 2
    assert run(capsys, "profile", "--workload", "nope")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "--help")[0] == 0


def test_profile_matmul_one_row(capsys):
    code, out, _ = run(capsys, "profile", "--workload", "matmul", "--size", "64", "--json")
    doc = json.loads(out)
    assert code == 0 and [k["name"] for k in doc["kernels"]] == ["matmul"]
    assert doc["kernels"][0]["output_shape"] == [64, 64]
    assert "elapsed_ms" not in doc["kernels"][0]


def test_profile_train_phases(capsys):
    code, out, _ = run(capsys, "profile", "--workload", "train", "--size", "4", "--json", "--timing")
    doc = json.loads(out)
    phases = {k["phase"] for k in doc["kernels"]}
    assert code == 0 and {"forward", "gradient", "update"} <= phases
    assert doc["new_tensors"] == 0 and "elapsed_ms" in doc["kernels"][0]


def test_profile_table(capsys):
    code, out, _ = run(capsys, "profile", "--workload", "conv", "--size", "6")
    assert code == 0 and "conv2d" in out and "peak bytes" in out


def test_parse_shapes():
    assert parse_shapes("2x4,4x3") == [(2, 4), (4, 3)]
    assert parse_shapes("scalar,3") == [(), (3,)]
    with pytest.raises(ValueError):
        parse_shapes("2xq")
