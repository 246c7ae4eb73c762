import json
import subprocess
import sys

import numpy as np
import pytest

from vshift import cli


def run(argv):
    try:
        code = cli.main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    return code


@pytest.fixture
def sigmoid_files(tmp_path):
    tr, tg = tmp_path / "tr.csv", tmp_path / "tg.csv"
    assert run(["gen", "--kind", "sigmoid", "--n-train", 200, "--n-target", 1000, "--seed", 7,
                "--out-train", tr, "--out-target", tg]) == 0
    return tr, tg


def test_gen_sigmoid(sigmoid_files):
    tr, tg = sigmoid_files
    assert len(tr.read_text().splitlines()) == 201
    assert len(tg.read_text().splitlines()) == 1001


def test_train_vsvm_and_predict(sigmoid_files, tmp_path, capsys):
    tr, tg = sigmoid_files
    model = tmp_path / "m.json"
    assert run(["train", "vsvm", "--train", tr, "--target", tg, "--v", "empirical", "--gamma", 0.1,
                "--kernel", "sqrt_gaussian", "--width", 1, "--out", model]) == 0
    d = json.loads(model.read_text())
    assert d["model_type"] == "vsvm" and d["gamma"] == 0.1
    assert run(["predict", "--model", model, "--input", tg]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "probability,label" and len(lines) == 1001
    probs = np.array([float(l.split(",")[0]) for l in lines[1:]])
    assert probs.min() >= 0 and probs.max() <= 1


@pytest.mark.parametrize("method,extra", [
    ("unweighted", []),
    ("weighted", ["--scheme", "exponentiated", "--tau", 0.5]),
    ("vboost", ["--v", "additive", "--trees", 3, "--depth", 2]),
    ("vsvm", ["--v", "analytic"]),
])
def test_train_variants(sigmoid_files, tmp_path, method, extra):
    tr, tg = sigmoid_files
    out = tmp_path / f"{method}.json"
    assert run(["train", method, "--train", tr, "--target", tg, "--out", out, *extra]) == 0
    pred = tmp_path / "p.csv"
    assert run(["predict", "--model", out, "--input", tr, "--label-column", -1, "--out", pred]) == 0
    assert len(pred.read_text().splitlines()) == 201


def test_bias_and_vmatrix(tmp_path):
    src = tmp_path / "two.csv"
    assert run(["gen", "--kind", "twonorm", "--n", 800, "--seed", 1, "--out", src]) == 0
    tr, tg, lab = tmp_path / "btr.csv", tmp_path / "btg.csv", tmp_path / "lab.csv"
    for scheme, extra in (("sugiyama", ["--test-size", 200]), ("feature", ["--feature", 3]),
                          ("norm", ["--direction", "down"])):
        assert run(["bias", "--scheme", scheme, "--input", src, "--train-size", 50, "--seed", 2,
                    "--out-train", tr, "--out-target", tg, "--out-target-labels", lab,
                    *extra]) == 0
        assert len(tr.read_text().splitlines()) == 51
    vout = tmp_path / "v.csv"
    for kind in ("multiplicative", "additive", "identity"):
        assert run(["vmatrix", "--kind", kind, "--train", tr, "--target", tg, "--out", vout]) == 0
        V = np.loadtxt(vout, delimiter=",")
        assert V.shape == (50, 50)
        np.testing.assert_array_equal(V, V.T)


def test_verify_theorem_1d(capsys):
    assert run(["verify", "theorem-1d", "--n", 20, "--m", 100, "--trials", 1000, "--seed", 1]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["passed"] is True


def test_verify_mvue_mismatch_reports_failure(capsys):
    assert run(["verify", "mvue", "--n", 4, "--m", 100, "--repeats", 20, "--mismatch"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is False


def test_usage_errors(capsys, tmp_path):
    assert run(["frobnicate"]) == 1
    assert run(["gen", "--kind", "sigmoid", "--bogus"]) == 1
    assert run(["gen", "--kind", "sigmoid", "--n-train", 0]) == 1
    assert run(["train", "vsvm", "--train", "x.csv", "--gamma", -1]) == 1
    assert run(["gen", "--kind", "sigmoid"]) == 1
    assert "usage" in capsys.readouterr().err


def test_data_error_codes(tmp_path):
    assert run(["train", "unweighted", "--train", tmp_path / "missing.csv"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,0\n3,x,1\n")
    assert run(["train", "unweighted", "--train", bad]) == 2


def test_numerical_failure_code(tmp_path):
    tr, tg = tmp_path / "tr.csv", tmp_path / "tg.csv"
    tr.write_text("".join(f"{x},{i % 2}\n" for i, x in enumerate(np.linspace(0.5, 0.9, 20))))
    tg.write_text("0.1\n0.2\n")  # no target dominates any training point, so V = 0
    assert run(["train", "vboost", "--train", tr, "--target", tg, "--lambda", 0]) == 3


def test_every_subcommand_help_documents_flags(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    for name, p in sub.choices.items():
        assert run([name, "--help"]) == 0
        text = capsys.readouterr().out
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
    assert run(["--help"]) == 0


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path / "outdir"))
    assert run(["gen", "--kind", "ringnorm", "--n", 20, "--out", "r.csv"]) == 0
    assert (tmp_path / "outdir" / "r.csv").exists()


def test_repeated_runs_byte_identical(tmp_path, monkeypatch):
    def outputs(tag, jobs):
        d = tmp_path / tag
        monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(d))
        steps = [
            ["gen", "--kind", "sigmoid", "--n-train", 60, "--n-target", 200, "--seed", 3,
             "--out-train", "tr.csv", "--out-target", "tg.csv"],
            ["train", "vsvm", "--train", d / "tr.csv", "--target", d / "tg.csv", "--out", "m.json"],
            ["predict", "--model", d / "m.json", "--input", d / "tg.csv", "--out", "p.csv"],
            ["experiment", "synthetic", "--n-train", 30, "--n-target", 100, "--trials", 3,
             "--seed", 5, "--jobs", jobs, "--out-csv", "s.csv", "--out-json", "s.json",
             "--dump-predictions", "curves.csv"],
            ["experiment", "exp4", "--dataset", "twonorm", "--dataset-size", 500, "--trials", 3,
             "--jobs", jobs, "--out-csv", "e.csv", "--out-json", "e.json"],
            ["verify", "theorem-nd", "--n", 5, "--dim", 2, "--m", 300, "--trials", 20,
             "--out", "v.json"],
        ]
        for argv in steps:
            assert run(argv) == 0, argv
        return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

    first = outputs("a", 1)
    assert outputs("b", 1) == first
    assert outputs("c", 2) == first


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vshift.cli", "verify", "theorem-nd", "--n", "4",
                           "--m", "5", "--delta", "0.05"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["vacuous"] is True
