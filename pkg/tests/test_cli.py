import csv
import json

import pytest

from tsrefine.cli import EXIT_FORMAT, EXIT_OK, EXIT_USAGE, main
from tsrefine.evalreport import parse_report
from tsrefine.synthdata import load_dataset

CONFIG = """
[synth]
num_videos = 4
video_length = 300
num_classes = 3
instances_per_video = 3
feature_dim = 6
num_test_videos = 2
segment_length = 30, 60
gap_length = 5, 20
class_signal = 2.0
seed = 3

[train]
init_w = 20
base_epochs = 6
update_epochs = 40

[refine]
min_component = 5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(CONFIG)
    assert main(["generate", "--config", str(cfg), "--out", str(root / "gen")]) == EXIT_OK
    assert main(["train", "--data", str(root / "gen/dataset"), "--config", str(cfg),
                 "--timestamps", "ts", "--out", str(root / "ts")]) == EXIT_OK
    return root


def test_generate_loads(workspace):
    ds = load_dataset(workspace / "gen/dataset")
    assert ds.num_classes == 3 and len(ds.train) == 4 and len(ds.test) == 6


def test_generate_deterministic(workspace, tmp_path):
    assert main(["generate", "--config", str(workspace / "small.ini"), "--out", str(tmp_path)]) == EXIT_OK
    ref = workspace / "gen/dataset"
    files = sorted(p.relative_to(ref) for p in ref.rglob("*") if p.is_file())
    assert files
    for name in files:
        assert (tmp_path / "dataset" / name).read_bytes() == (ref / name).read_bytes()


def test_generate_missing_field(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(CONFIG.replace("num_classes = 3\n", ""))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "num_classes" in capsys.readouterr().err


def test_manifest_materializes_defaults(workspace):
    manifest = json.loads((workspace / "ts/manifest.json").read_text())
    assert manifest["mode"] == "ts" and manifest["command"] == "train"
    assert manifest["config"]["refine"]["z"] == 0.25
    assert manifest["config"]["train"]["init_s"] == 0.75
    assert set(manifest["seeds"]) == {"sampling", "model", "data"}
    assert (workspace / "ts/finished.json").exists()


def test_train_ts_outputs(workspace):
    out = workspace / "ts"
    for name in ("before_update.ckpt", "after_update.ckpt", "report.txt", "loss.csv",
                 "confidence.csv", "trace.csv", "alignment.csv"):
        assert (out / name).exists(), name
    rows = list(csv.DictReader((out / "confidence.csv").open()))
    assert len(rows) >= 1


def test_train_full_has_no_refine_files(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "gen/dataset"), "--config", str(workspace / "small.ini"),
                 "--timestamps", "full", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "model.ckpt").exists() and (tmp_path / "report.txt").exists()
    for name in ("confidence.csv", "trace.csv", "alignment.csv", "before_update.ckpt"):
        assert not (tmp_path / name).exists()


def test_unknown_mode_is_usage_error(workspace, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", str(workspace / "gen/dataset"), "--timestamps", "bogus"])
    assert exc.value.code == EXIT_USAGE
    err = capsys.readouterr().err
    assert "ts-in-gt" in err and "full" in err


def test_eval_before_and_after(workspace, tmp_path):
    data = str(workspace / "gen/dataset")
    reports = {}
    for tag in ("before_update", "after_update"):
        out = tmp_path / tag
        assert main(["eval", "--checkpoint", str(workspace / f"ts/{tag}.ckpt"), "--data", data,
                     "--out", str(out)]) == EXIT_OK
        reports[tag] = parse_report((out / "report.txt").read_text())
    assert reports["before_update"].keys() == reports["after_update"].keys()
    assert "before_update.top1_accuracy" in reports["after_update"]


def test_eval_rerun_identical(workspace, tmp_path):
    args = ["eval", "--checkpoint", str(workspace / "ts/after_update.ckpt"), "--data", str(workspace / "gen/dataset")]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a/report.txt").read_bytes() == (tmp_path / "b/report.txt").read_bytes()


def test_eval_bad_checkpoint(workspace, tmp_path, capsys):
    bad = tmp_path / "corrupt.ckpt"
    bad.write_bytes(b"not a checkpoint")
    code = main(["eval", "--checkpoint", str(bad), "--data", str(workspace / "gen/dataset"),
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_FORMAT
    assert str(bad) in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "none"), "--timestamps", "ts", "--out", str(tmp_path / "o")])
    assert code == EXIT_FORMAT
    assert "none" in capsys.readouterr().err


def test_out_root_env(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("TSREFINE_OUT", str(tmp_path))
    assert main(["generate", "--config", str(workspace / "small.ini")]) == EXIT_OK
    assert (tmp_path / "generate/dataset").is_dir()


def test_bad_threads(capsys):
    assert main(["bench", "--threads", "0"]) == EXIT_USAGE
