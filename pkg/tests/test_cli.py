import json
import subprocess
import sys

import numpy as np
import pytest

from gentron.checkpoint import load_checkpoint, model_from_checkpoint
from gentron.cli import main
from gentron.guidance import DEFAULT_FRAMES, GuidanceConfig, sample_conditional
from gentron.numerics.rng import Rng
from gentron.schedule import schedule_from_dict

SMALL = ["--width", "32", "--mlp-width", "128", "--T", "10", "--batch", "4"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--kind", "shapes", "--n", "16", "--out", str(root / "shapes")]) == 0
    assert main(["gen-data", "--kind", "moving-shapes", "--n", "4", "--frames", "4",
                 "--out", str(root / "videos")]) == 0
    assert main(["train-t2i", "--data", str(root / "shapes"), "--out", str(root / "t2i"),
                 "--steps", "3", *SMALL]) == 0
    return root


def test_train_writes_checkpoint_and_log(workdir):
    run = workdir / "t2i"
    assert (run / "model.ckpt").exists()
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 4
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train-t2i" and manifest["train"]["steps"] == 3


def test_fixed_seed_identical_csv(workdir, tmp_path):
    args = ["train-t2i", "--data", str(workdir / "shapes"), "--steps", "3", "--seed", "0", *SMALL]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (workdir / "t2i" / "loss.csv").read_bytes()


def test_env_seed_is_last_resort(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv("GENTRON_SEED", "5")
    base = ["train-t2i", "--data", str(workdir / "shapes"), "--steps", "2", *SMALL]
    assert main(base + ["--out", str(tmp_path / "env")]) == 0
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["train"]["seed"] == 5
    assert main(base + ["--seed", "1", "--out", str(tmp_path / "flag")]) == 0
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["train"]["seed"] == 1


def test_config_file_and_overrides(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"steps": 2, "lr": 5e-4, "width": 32, "mlp_width": 128, "T": 10}))
    out = tmp_path / "run"
    assert main(["train-t2i", "--config", str(cfg), "--data", str(workdir / "shapes"),
                 "--out", str(out), "--lr", "2e-4"]) == 0
    train = json.loads((out / "manifest.json").read_text())["train"]
    assert train["steps"] == 2 and train["lr"] == 2e-4


def test_unknown_config_key(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"p_motion_fre": 0.2}))
    assert main(["finetune-t2v", "--config", str(cfg), "--checkpoint", "x", "--video-data", "y",
                 "--out", str(tmp_path)]) == 2


def test_usage_errors(workdir, tmp_path):
    assert main(["train-t2i", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert main(["train-t2i", "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["train-t2i", "--steps", "many"])
    assert info.value.code == 2


def test_finetune_and_sample(workdir, capsys):
    out = workdir / "t2v"
    rc = main(["finetune-t2v", "--checkpoint", str(workdir / "t2i" / "model.ckpt"),
               "--video-data", str(workdir / "videos"), "--image-data", str(workdir / "shapes"),
               "--out", str(out), "--steps", "2", "--batch", "2", "--t-frames", "4",
               "--p-motion-free", "0.3"])
    assert rc == 0
    assert "inflation check" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["p_motion_free"] == 0.3 and manifest["train"]["p_motion_free"] == 0.3
    assert load_checkpoint(out / "model.ckpt").inflated

    samples = workdir / "video_samples"
    rc = main(["sample", "--checkpoint", str(out / "model.ckpt"), "--prompt", "red square moving up",
               "--motion", "--frames", "4", "--out", str(samples), "--lambda-m", "1.1"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "lambda_T=7.5" in text and "lambda_M=1.1" in text
    clip = json.loads((samples / "clip_000" / "manifest.json").read_text())
    assert clip["t"] == 4 and len(clip["frames"]) == 4


def test_finetune_rejects_t2v_checkpoint(workdir, tmp_path):
    if not (workdir / "t2v" / "model.ckpt").exists():
        pytest.skip("needs the fine-tuned checkpoint")
    rc = main(["finetune-t2v", "--checkpoint", str(workdir / "t2v" / "model.ckpt"),
               "--video-data", str(workdir / "videos"), "--out", str(tmp_path / "x"), "--steps", "1"])
    assert rc == 3


def test_sample_mode_mismatch(workdir, tmp_path):
    assert main(["sample", "--checkpoint", str(workdir / "t2i" / "model.ckpt"), "--prompt", "a",
                 "--motion", "--out", str(tmp_path)]) == 2


def test_sample_corrupt_checkpoint(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"GTRNCKPT\x01\x00")
    assert main(["sample", "--checkpoint", str(bad), "--prompt", "a", "--out", str(tmp_path)]) == 3


def test_sample_defaults_and_telescoping(workdir, tmp_path, capsys):
    ckpt = workdir / "t2i" / "model.ckpt"
    out = tmp_path / "s"
    assert main(["sample", "--checkpoint", str(ckpt), "--prompt", "blue cross top-right",
                 "--lambda-t", "1.0", "--seed", "3", "--n", "2", "--save-latents", "--out", str(out)]) == 0
    assert "lambda_T=1.0" in capsys.readouterr().out
    assert sorted(p.name for p in out.iterdir()) == ["image_000.ppm", "image_001.ppm", "manifest.json", "samples.npy"]
    loaded = load_checkpoint(ckpt)
    model = model_from_checkpoint(loaded)
    direct = sample_conditional(model, schedule_from_dict(loaded.config["schedule"]),
                                model.encode("blue cross top-right"), Rng(3).fork("sample"), batch=2)
    assert np.load(out / "samples.npy").tobytes() == direct.tobytes()
    assert GuidanceConfig().lambda_T == 7.5 and DEFAULT_FRAMES == 8


def test_check_verb(capsys):
    assert main(["check", "guidance", "schedule"]) == 0
    assert "[PASS]" in capsys.readouterr().out
    assert main(["check", "bogus"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gentron", "check", "guidance"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "all checks passed" in proc.stdout
