import csv
import json

import pytest

from maskfuse import read_manifest
from maskfuse.cli import main

SYNTH_ARGS = ["synth", "--clips", "2", "--seed", "9", "--width", "32",
              "--height", "32", "--frames", "6", "--objects", "2",
              "--classes", "6", "--jitter", "1", "--noise", "0.05",
              "--features", "--feature-dim", "8", "--separation", "4.0",
              "--stride", "4", "--pred-beta", "8,2", "--stab-beta", "9,1"]


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    out = json.loads(captured.out) if captured.out.strip() else None
    err = json.loads(captured.err) if captured.err.strip() else None
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(SYNTH_ARGS + ["--out", str(root)]) == 0
    return root / "manifest.json"


def test_synth_is_reproducible(tmp_path, capsys):
    code, out, _ = run(capsys, *SYNTH_ARGS, "--out", str(tmp_path / "a"))
    assert code == 0
    assert out["clips"] == 2 and out["frames"] == 12 and out["masklets"] > 0
    assert main(SYNTH_ARGS + ["--out", str(tmp_path / "b")]) == 0
    for rel in ["manifest.json", "clip_000/gt_0003.png", "clip_000/masklets.jsonl",
                "clip_001/pred_0000.png", "clip_001/feat_0002.mfea"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_eval_writes_report_and_rerun_is_bit_exact(corpus, tmp_path, capsys):
    report = tmp_path / "report.json"
    code, out, _ = run(capsys, "eval", "--manifest", str(corpus),
                       "--report", str(report), "--csv", str(tmp_path / "pc.csv"),
                       "--no-figures")
    assert code == 0
    assert 0.0 < out["miou"] <= 1.0
    obj = json.loads(report.read_text())
    assert obj["metrics"]["frame_count"] == 12
    assert obj["config"]["n_values"] == [8, 16]
    with open(tmp_path / "pc.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["class_id", "iou"]
    assert len(rows) == 7  # header + 6 classes
    again = tmp_path / "again.json"
    code, _, _ = run(capsys, "eval", "--manifest", str(corpus),
                     "--report", str(again), "--config", str(report),
                     "--no-figures")
    assert code == 0
    assert again.read_bytes() == report.read_bytes()


def test_eval_parallel_matches_serial(corpus, tmp_path, capsys):
    a = tmp_path / "serial.json"
    b = tmp_path / "parallel.json"
    assert main(["eval", "--manifest", str(corpus), "--report", str(a),
                 "--no-figures", "--jobs", "1"]) == 0
    assert main(["eval", "--manifest", str(corpus), "--report", str(b),
                 "--no-figures", "--jobs", "2"]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()


def test_eval_renders_figure_by_default(corpus, tmp_path, capsys):
    report = tmp_path / "fig.json"
    assert main(["eval", "--manifest", str(corpus),
                 "--report", str(report)]) == 0
    capsys.readouterr()
    fig = tmp_path / "fig_per_class.png"
    assert fig.exists() and fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_validate_only(corpus, capsys):
    code, out, _ = run(capsys, "eval", "--manifest", str(corpus),
                       "--validate-only")
    assert code == 0
    assert out["validated"] is True
    assert out["clips"] == 2 and out["frames"] == 12
    assert out["feature_frames"] == 12 and out["masklets"] > 0


def test_error_json_on_missing_manifest(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--manifest",
                       str(tmp_path / "nope.json"), "--report",
                       str(tmp_path / "r.json"))
    assert code == 1
    assert err["error"] in ("FileNotFoundError", "OSError")
    assert "message" in err


def test_error_json_on_bad_sweep_values(corpus, tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--manifest", str(corpus),
                       "--parameter", "window", "--values", "1,x",
                       "--csv", str(tmp_path / "s.csv"))
    assert code == 1
    assert err["error"] == "ConfigError"


def test_filter_command_drops_low_scores(corpus, tmp_path, capsys):
    code, out, _ = run(capsys, "filter", "--manifest", str(corpus),
                       "--out", str(tmp_path / "filtered"),
                       "--pred-iou-thresh", "0.9")
    assert code == 0
    assert 0 < out["masklets_after"] < out["masklets_before"]
    filtered = read_manifest(tmp_path / "filtered" / "manifest.json")
    assert len(filtered) == 2


def test_refine_command_writes_usable_manifest(corpus, tmp_path, capsys):
    out_dir = tmp_path / "refined"
    code, out, _ = run(capsys, "refine", "--manifest", str(corpus),
                       "--out", str(out_dir))
    assert code == 0 and out["frames"] == 12
    after = tmp_path / "after.json"
    before = tmp_path / "before.json"
    assert main(["eval", "--manifest", str(out_dir / "manifest.json"),
                 "--report", str(after), "--no-figures"]) == 0
    assert main(["eval", "--manifest", str(corpus),
                 "--report", str(before), "--no-figures"]) == 0
    capsys.readouterr()
    assert (json.loads(after.read_text())["metrics"]["miou"]
            >= json.loads(before.read_text())["metrics"]["miou"])


def test_pipeline_report_and_config_rerun(corpus, tmp_path, capsys):
    r1 = tmp_path / "p1.json"
    code, out, _ = run(capsys, "pipeline", "--manifest", str(corpus),
                       "--report", str(r1), "--no-figures",
                       "--vote-scope", "per_track", "--window-size", "4")
    assert code == 0
    assert out["miou_after"] >= out["miou_before"]
    obj = json.loads(r1.read_text())
    assert obj["config"]["refine"]["vote_scope"] == "per_track"
    assert obj["config"]["tracker"]["window_size"] == 4
    assert len(obj["clips"]) == 2
    r2 = tmp_path / "p2.json"
    code, _, _ = run(capsys, "pipeline", "--manifest", str(corpus),
                     "--report", str(r2), "--no-figures",
                     "--config", str(r1))
    assert code == 0
    assert r1.read_bytes() == r2.read_bytes()


def test_pipeline_figure_and_refined_output(corpus, tmp_path, capsys):
    report = tmp_path / "pipe.json"
    out_dir = tmp_path / "maps"
    assert main(["pipeline", "--manifest", str(corpus), "--report",
                 str(report), "--out", str(out_dir)]) == 0
    capsys.readouterr()
    assert (tmp_path / "pipe_before_after.png").exists()
    refined = read_manifest(out_dir / "manifest.json")
    assert all(e.pred_path.endswith(".png") for c in refined for e in c.frames)


def test_sweep_csv_shape(corpus, tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "sweep", "--manifest", str(corpus),
                       "--parameter", "window", "--values", "1,2,4",
                       "--csv", str(csv_path), "--no-figures")
    assert code == 0 and out["rows"] == 3
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "value,miou,fwiou,mvc8,mvc16"
    assert len(lines) == 4
    for line in lines[1:]:
        cells = line.split(",")
        assert len(cells) == 5
        float(cells[1]), float(cells[2])


def test_sweep_figure(corpus, tmp_path, capsys):
    csv_path = tmp_path / "sw.csv"
    assert main(["sweep", "--manifest", str(corpus), "--parameter",
                 "pred_iou", "--values", "0.5,0.7", "--csv",
                 str(csv_path)]) == 0
    capsys.readouterr()
    assert (tmp_path / "sw.png").exists()


def test_train_then_classify(corpus, tmp_path, capsys):
    model = tmp_path / "model.mmlp"
    code, out, _ = run(capsys, "train", "--manifest", str(corpus),
                       "--out", str(model), "--hidden-dim", "32",
                       "--epochs", "60")
    assert code == 0
    assert out["samples"] > 0
    assert out["train_accuracy"] >= 0.9
    composed = tmp_path / "composed"
    code, out, _ = run(capsys, "classify", "--manifest", str(corpus),
                       "--model", str(model), "--out", str(composed),
                       "--base", "pred")
    assert code == 0 and out["frames"] == 12
    report = tmp_path / "composed.json"
    assert main(["eval", "--manifest", str(composed / "manifest.json"),
                 "--report", str(report), "--no-figures"]) == 0
    capsys.readouterr()
    assert json.loads(report.read_text())["metrics"]["miou"] > 0.5


def test_no_command_prints_help(capsys):
    assert main([]) == 2
    assert "subcommand" in capsys.readouterr().out or True
