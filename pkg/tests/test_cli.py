import json

import pytest

from underwater_nerf.cli import main
from underwater_nerf.data_io import load_scene
from underwater_nerf.trainer import load_checkpoint

TINY = (
    "--encoder-depth tiny --feature-width 4 --tiny-width 4 --dim 8 --depth 1 --ray-heads 1 --ff-hidden 8 "
    "--samples-per-ray 4 --patch-size 2 --decoder-width 4 --latent-dim 4 --rays-per-batch 16 "
    "--n-min 2 --n-max 2 --k-max 2"
).split()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-toy", "--views", "4", "--size", "16", "--out", str(root / "scene")]) == 0
    assert main(["train", "--scene", str(root / "scene"), "--out", str(root / "run"), "--steps", "3", *TINY]) == 0
    return root


def test_make_toy_writes_scene(workdir):
    dataset = load_scene(workdir / "scene")
    assert len(dataset) == 4 and dataset.image_shape == (16, 16)


def test_train_outputs(workdir):
    ckpt = load_checkpoint(workdir / "run" / "checkpoint.uwn")
    assert ckpt.step == 3 and ckpt.config["dim"] == 8
    lines = (workdir / "run" / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(line)["step"] for line in lines] == [0, 1, 2]


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("steps = 2\nseed = 4\n")
    argv = ["train", "--scene", str(workdir / "scene"), "--out", str(tmp_path / "run"), "--config", str(cfg)]
    assert main(argv + TINY + ["--seed", "9"]) == 0
    ckpt = load_checkpoint(tmp_path / "run" / "checkpoint.uwn")
    assert ckpt.step == 2 and ckpt.config["seed"] == 9


def test_resume_continues(workdir, tmp_path):
    argv = ["train", "--scene", str(workdir / "scene"), "--out", str(tmp_path), "--resume", str(workdir / "run" / "checkpoint.uwn")]
    assert main(argv + ["--steps", "5"]) == 0
    assert load_checkpoint(tmp_path / "checkpoint.uwn").step == 5


def test_render_eval_sequence(workdir, tmp_path):
    ckpt, scene = str(workdir / "run" / "checkpoint.uwn"), str(workdir / "scene")
    assert main(["render", "--ckpt", ckpt, "--scene", scene, "--pose-id", "1", "--out", str(tmp_path / "r"), "--bits", "16"]) == 0
    assert (tmp_path / "r" / "view_001_T_B.png").exists()
    assert main(["render", "--ckpt", ckpt, "--scene", scene, "--pose-id", "view_002.png", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "view_002_J.png").exists()
    report = tmp_path / "m.jsonl"
    assert main(["eval", "--ckpt", ckpt, "--scene", scene, "--out", str(report), "--views", "0,3"]) == 0
    assert len(report.read_text().splitlines()) == 3
    assert main(["sequence", "--ckpt", ckpt, "--scene", scene, "--frames", "2", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "frame_0000_I.png").exists()


def test_finetune(workdir, tmp_path):
    argv = ["finetune", "--ckpt", str(workdir / "run" / "checkpoint.uwn"), "--scene", str(workdir / "scene")]
    assert main(argv + ["--out", str(tmp_path), "--steps", "2"]) == 0
    assert load_checkpoint(tmp_path / "checkpoint.uwn").config["lr_model"] == 2e-4


def test_errors(workdir, tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["train", "--scene", str(workdir / "scene"), "--out", str(tmp_path), "--no-such-key", "1"])
    with pytest.raises(SystemExit):
        main(["render", "--ckpt", "x", "--scene", "y", "--pose-id", "0", "--out", "z", "--steps", "1"])
    bad = tmp_path / "bad.uwn"
    bad.write_bytes(b"garbage" * 10)
    assert main(["eval", "--ckpt", str(bad), "--scene", str(workdir / "scene"), "--out", str(tmp_path / "m")]) == 1
    assert "checksum" in capsys.readouterr().err
