"""Command-line pipeline: every subcommand end to end at miniature scale."""

import shutil

import numpy as np
import pytest
from PIL import Image

from ctiunet.cascade import read_png_text, save_png
from ctiunet.cli import main

TINY = """
synthetic_count = 6
synthetic_size = 16
model1_channels = 4, 8
model2_channels = 4, 8
epochs = 2
train_fraction = 0.8
augment = false
window = 16
master_seed = 0
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.cfg"
    cfg.write_text(TINY, encoding="utf-8")
    data = base / "data"
    run = base / "run"
    pred = base / "pred"
    ev = base / "eval"
    steps = [
        ["gen-synthetic", "--config", str(cfg), "--out", str(data)],
        ["train-stage1", "--config", str(cfg), "--out", str(run)],
        ["train-stage2", "--config", str(cfg), "--out", str(run)],
    ]
    for argv in steps:
        rc = main(argv)
        assert rc == 0, f"{argv} -> {rc}"
    images = sorted((data / "synthetic" / "img").glob("*.png"))[:3]
    rc = main(["infer", "--config", str(cfg), "--out", str(pred),
               "--model1", str(run / "model1.ckpt"),
               "--model2", str(run / "model2.ckpt"),
               "--intermediates"] + [str(p) for p in images])
    assert rc == 0
    rc = main(["eval", "--config", str(cfg), "--out", str(ev),
               "--pred", str(pred), "--gt", str(data)])
    assert rc == 0
    return {"base": base, "cfg": cfg, "data": data, "run": run,
            "pred": pred, "eval": ev}


def test_training_artifacts(pipeline):
    run = pipeline["run"]
    assert (run / "model1.ckpt").is_file()
    assert (run / "model2.ckpt").is_file()
    s1 = (run / "train_stage1.tsv").read_text()
    assert s1.startswith("epoch\ttrain_loss\tval_loss\tval_dsc")
    assert "# wall_time_s=" in s1
    assert (run / "train_stage2.tsv").is_file()
    cfg_txt = (run / "config.txt").read_text()
    assert "# config_hash = " in cfg_txt
    assert "master_seed = 0" in cfg_txt


def test_gen_writes_manifest_and_sidecar(pipeline):
    data = pipeline["data"]
    assert (data / "manifest.tsv").is_file()
    gen = (data / "generation.txt").read_text()
    assert "manifest_hash" in gen and "config_hash" in gen
    assert len(list((data / "synthetic" / "img").glob("*.png"))) == 6
    assert len(list((data / "synthetic" / "mask").glob("*.png"))) == 6


def test_infer_outputs_and_stamps(pipeline):
    pred = pipeline["pred"]
    masks = sorted(pred.glob("*_mask.png"))
    assert len(masks) == 3
    # heatmap + one stack plane per threshold + overlay ride along
    assert len(list(pred.glob("*_heatmap.png"))) == 3
    assert len(list(pred.glob("*_stack_t*.png"))) == 9
    assert len(list(pred.glob("*_overlay.png"))) == 3
    cfg_line = next(l for l in (pred / "config.txt").read_text().splitlines()
                    if l.startswith("# config_hash = "))
    run_hash = cfg_line.split("=", 1)[1].strip()
    for p in masks:
        text = read_png_text(p)
        assert text["config_hash"] == run_hash
        arr = np.asarray(Image.open(p))
        assert set(np.unique(arr)) <= {0, 255}


def test_eval_reports(pipeline):
    ev = pipeline["eval"]
    table = (ev / "report.txt").read_text()
    assert "Metric" in table and "All" in table
    assert "# n_matched = 3" in table
    assert "# n_unmatched_gt = 3" in table  # scored a 3-image subset of 6
    tsv = (ev / "report.tsv").read_text()
    assert tsv.splitlines()[0] == "condition\tn\tdsc_mean\tiou_mean"
    assert any(line.startswith("synthetic\t3\t") for line in tsv.splitlines())


def test_self_eval_scores_hundred(pipeline, capsys):
    data, base = pipeline["data"], pipeline["base"]
    rc = main(["eval", "--out", str(base / "selfeval"),
               "--pred", str(data / "synthetic" / "mask"), "--gt", str(data)])
    assert rc == 0
    out = capsys.readouterr().out
    row = next(l for l in out.splitlines() if l.startswith("DSC"))
    assert "100.00" in row and "-" in row  # synthetic scores, named columns empty


def test_gen_hash_deterministic(pipeline, capsys, tmp_path):
    cfg = pipeline["cfg"]
    hashes = []
    for d in ("g1", "g2"):
        rc = main(["gen-synthetic", "--config", str(cfg), "--out", str(tmp_path / d)])
        assert rc == 0
        line = next(l for l in capsys.readouterr().out.splitlines()
                    if l.startswith("manifest_hash"))
        hashes.append(line.split("\t")[1])
    assert hashes[0] == hashes[1]


def test_train_stdout_reports_checkpoint(pipeline, capsys, tmp_path):
    rc = main(["train-stage1", "--config", str(pipeline["cfg"]),
               "--epochs", "1", "--out", str(tmp_path / "r")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "checkpoint" in out and "best_val_dsc" in out


def test_eval_unmatched_prediction_fails(pipeline, tmp_path):
    pred2 = tmp_path / "pred2"
    pred2.mkdir()
    for p in pipeline["pred"].glob("*_mask.png"):
        shutil.copy(p, pred2 / p.name)
    stray = np.zeros((16, 16), dtype=np.uint8)
    save_png(pred2 / "zz-stray_mask.png", stray)
    rc = main(["eval", "--out", str(tmp_path / "e"),
               "--pred", str(pred2), "--gt", str(pipeline["data"])])
    assert rc == 1


def test_eval_hash_guard(pipeline, tmp_path):
    pred3 = tmp_path / "pred3"
    pred3.mkdir()
    masks = sorted(pipeline["pred"].glob("*_mask.png"))
    shutil.copy(masks[0], pred3 / masks[0].name)
    arr = np.asarray(Image.open(masks[1]))
    save_png(pred3 / masks[1].name, arr, {"config_hash": "deadbeef"})
    rc = main(["eval", "--out", str(tmp_path / "e1"),
               "--pred", str(pred3), "--gt", str(pipeline["data"])])
    assert rc == 2
    rc = main(["eval", "--force", "--out", str(tmp_path / "e2"),
               "--pred", str(pred3), "--gt", str(pipeline["data"])])
    assert rc == 0


def test_bad_inputs_exit_two(tmp_path, capsys):
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("epochz = 3\n", encoding="utf-8")
    assert main(["train-stage1", "--config", str(bad_cfg),
                 "--out", str(tmp_path / "r")]) == 2
    assert main(["infer", "--out", str(tmp_path / "i"),
                 "--model1", str(tmp_path / "missing1.ckpt"),
                 "--model2", str(tmp_path / "missing2.ckpt"),
                 str(tmp_path / "img.png")]) == 2
    assert main(["eval", "--out", str(tmp_path / "e"),
                 "--pred", str(tmp_path / "nope"), "--gt", str(tmp_path / "nope")]) == 2
    with pytest.raises(SystemExit):
        main([])
