import json
import subprocess
import sys

import pytest

from drsolver.cli import main
from drsolver.harness import load_corpus

FAST = {
    "rf_train": {"learning_rate": 0.5, "epochs": 30, "batch_size": 4},
    "image_train": {"learning_rate": 0.5, "epochs": 3, "batch_size": 16},
    "augment_images": False,
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "fast.json").write_text(json.dumps(FAST))
    assert main(["generate", "--rt", "4", "--ct", "4", "--ss", "4", "--ot", "4", "--seed", "42", "--out", str(d / "c.json")]) == 0
    return d


def test_generate_writes_requested_counts(work):
    c = load_corpus(str(work / "c.json"))
    assert len(c) == 16
    assert c.category_counts() == {"RT": 4, "CT": 4, "SS": 4, "OT": 4}


def test_generate_inline(tmp_path):
    out = tmp_path / "i.json"
    assert main(["generate", "--ss", "2", "--inline", "--out", str(out)]) == 0
    assert not (tmp_path / "i_panels").exists()
    assert len(load_corpus(str(out))) == 2


def test_train_evaluate_solve(work, capsys):
    cfg = str(work / "fast.json")
    models = str(work / "models")
    assert main(["train", "--corpus", str(work / "c.json"), "--config", cfg, "--out", models]) == 0
    assert "checkpoints in" in capsys.readouterr().out
    assert main(["evaluate", "--corpus", str(work / "c.json"), "--models", models, "--config", cfg, "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "category,accuracy,count"
    assert [l.split(",")[0] for l in out.splitlines()[1:6]] == ["RT", "CT", "SS", "OT", "Average"]
    assert main(["solve", "--corpus", str(work / "c.json"), "--models", models, "--config", cfg, "--format", "json"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["predicted_answer"] in "ABCD" and rec["id"] == "p00000"


def test_solve_from_panel_files(work, capsys):
    cfg = str(work / "fast.json")
    models = str(work / "models_p")
    assert main(["train", "--corpus", str(work / "c.json"), "--config", cfg, "--out", models]) == 0
    capsys.readouterr()
    panels = [str(work / "c_panels" / f"p00004_{k}.pgm") for k in range(1, 8)]
    assert main(["solve", "--panels", *panels, "--models", models]) == 0
    assert "detected_category: CT" in capsys.readouterr().out


def test_gradcheck_exit_zero(capsys):
    assert main(["gradcheck", "--configs", "4"]) == 0
    assert "max relative gradient error" in capsys.readouterr().out


def test_usage_error_exit_two(capsys):
    assert main(["generate", "--bogus"]) == 2
    err = capsys.readouterr().err
    assert err.strip().splitlines()[-1].startswith("error[usage]:")


def test_missing_out_is_usage_error(capsys):
    assert main(["generate", "--rt", "1"]) == 2


def test_bad_config_exit_two(work, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": 2}')
    assert main(["xval", "--corpus", str(work / "c.json"), "--config", str(bad)]) == 2
    assert capsys.readouterr().err.startswith("error[config]:")


def test_missing_corpus_exit_three(tmp_path, capsys):
    assert main(["xval", "--corpus", str(tmp_path / "nope.json")]) == 3
    assert capsys.readouterr().err.startswith("error[data]:")


def test_xval_reports_are_byte_identical(work):
    outs = []
    for k in range(2):
        out = work / f"x{k}.json"
        args = ["xval", "--corpus", str(work / "c.json"), "--folds", "4", "--seed", "7", "--config", str(work / "fast.json")]
        assert main(args + ["--format", "json", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert json.loads(outs[0])["config"]["seed"] == 7


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "drsolver", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "gradcheck" in res.stdout
    res = subprocess.run([sys.executable, "-m", "drsolver"], capture_output=True, text=True)
    assert res.returncode == 2
