import math
import subprocess
import sys

import numpy as np
import pytest

from pamwcnn import checkpoint, cli
from pamwcnn.imageio import Image, read_image, read_volume, write_image
from pamwcnn.mwcnn import ModelConfig, build_model

TINY_RUN = "levels = 1\nconvs_per_block = 1\nchannel_schedule = 4\nepochs = 2\nbatch_size = 4\n"


@pytest.fixture
def generated(tmp_path):
    assert cli.main(["gen", "--count", "4", "--height", "16", "--width", "16", "--out-dir", str(tmp_path), "--seed", "1"]) == 0
    return tmp_path


def _zero_checkpoint(path):
    params = build_model(ModelConfig(levels=1, convs_per_block=1, channel_schedule=(4,)), 0)
    for layer in params.layers:
        layer.weights[:] = 0
    checkpoint.save_checkpoint(path, params)


def test_gen_writes_pairs_and_manifest(generated):
    manifest = (generated / "manifest.txt").read_text().splitlines()
    assert len(manifest) == 1 + 4
    assert read_image(generated / "images" / "00000_noisy.paif").shape == (16, 16)


def test_gen_unknown_preset(tmp_path, capsys):
    assert cli.main(["gen", "--presets", "9mJ", "--out-dir", str(tmp_path)]) == cli.EXIT_USAGE
    assert capsys.readouterr().err.startswith("error: usage:")


def test_train_writes_artifacts(generated):
    (generated / "run.cfg").write_text(TINY_RUN + "checkpoint_every = 1\n")
    assert cli.main(["train", "--config", str(generated / "run.cfg")]) == 0
    params = checkpoint.load_checkpoint(generated / "model.mwck")
    assert params.config.channel_schedule == (4,)
    loss = (generated / "loss.csv").read_text().splitlines()
    assert loss[0] == "epoch,mean_train_loss,mean_test_loss" and len(loss) == 3
    assert sorted(p.name for p in (generated / "checkpoints").iterdir()) == ["epoch_0001.mwck", "epoch_0002.mwck"]
    split = (generated / "split.csv").read_text().splitlines()
    assert split[0] == "role,index" and len(split) == 5


def test_train_rejects_unknown_key(generated, capsys):
    (generated / "run.cfg").write_text("levels = 1\nwibble = 3\n")
    assert cli.main(["train", "--config", str(generated / "run.cfg")]) == cli.EXIT_USAGE
    assert "wibble" in capsys.readouterr().err


def test_train_reports_divergence(generated, capsys):
    (generated / "run.cfg").write_text(TINY_RUN.replace("epochs = 2", "epochs = 50") + "learning_rate = 1e30\n")
    with np.errstate(all="ignore"):
        assert cli.main(["train", "--config", str(generated / "run.cfg")]) == cli.EXIT_NUMERIC
    assert capsys.readouterr().err.startswith("error: numeric:")


def test_denoise_zero_model_outputs_zeros(tmp_path):
    _zero_checkpoint(tmp_path / "zero.mwck")
    write_image(tmp_path / "in.paif", Image(np.random.default_rng(0).uniform(size=(8, 8)).astype(np.float32)))
    args = ["denoise", "--checkpoint", str(tmp_path / "zero.mwck"), "--out-dir", str(tmp_path / "out"),
            "--pgm", "--latency-csv", str(tmp_path / "lat.csv"), str(tmp_path / "in.paif")]
    assert cli.main(args) == 0
    out = read_image(tmp_path / "out" / "in_denoised.paif")
    assert not out.data.any()
    assert (tmp_path / "out" / "in_denoised.pgm").exists()
    assert (tmp_path / "lat.csv").read_text().startswith("input,output,latency_s")


def test_denoise_missing_file(tmp_path, capsys):
    _zero_checkpoint(tmp_path / "zero.mwck")
    assert cli.main(["denoise", "--checkpoint", str(tmp_path / "zero.mwck"), str(tmp_path / "nope.paif")]) == cli.EXIT_DATA
    assert capsys.readouterr().err.startswith("error: data:")


def test_denoise_bad_dims(tmp_path):
    _zero_checkpoint(tmp_path / "zero.mwck")
    write_image(tmp_path / "odd.paif", Image(np.zeros((7, 8), np.float32)))
    assert cli.main(["denoise", "--checkpoint", str(tmp_path / "zero.mwck"), "--out-dir", str(tmp_path), str(tmp_path / "odd.paif")]) == cli.EXIT_DATA


def test_eval_identical_images(generated, capsys):
    clean = str(generated / "images" / "00000_clean.paif")
    assert cli.main(["eval", clean, "--truths", clean, "--normalize-outputs", "--out-dir", str(generated)]) == 0
    row = (generated / "metrics.csv").read_text().splitlines()[1].split(",")
    assert row[1] == "inf" and float(row[2]) == 1.0
    assert "inf" in capsys.readouterr().out


def test_eval_cnr_mode(tmp_path):
    pix = np.zeros((100, 100), np.float32)
    pix[45:55, 45:55] = 1.0
    pix[40:70, 5:35] = np.tile([0.0, 0.2], (30, 15))
    write_image(tmp_path / "img.paif", Image(pix, 0.1))
    (tmp_path / "rois.txt").write_text("object, 5, 5, 1, 1\nbackground, 5.5, 2, 3, 3\n")
    assert cli.main(["eval", str(tmp_path / "img.paif"), "--rois", str(tmp_path / "rois.txt"), "--out-dir", str(tmp_path)]) == 0
    row = (tmp_path / "metrics.csv").read_text().splitlines()[1].split(",")
    assert float(row[3]) == pytest.approx(20 * math.log10(0.9 / 0.1))


def test_eval_usage_errors(tmp_path):
    assert cli.main(["eval", "a.paif", "--out-dir", str(tmp_path)]) == cli.EXIT_USAGE
    assert cli.main(["eval", "a.paif", "--truths", "b.paif", "--rois", "r.txt", "--out-dir", str(tmp_path)]) == cli.EXIT_USAGE


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--seeds", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 7 and all(ln.startswith("PASS") for ln in lines)


def test_stack_command(generated):
    frames = [str(p) for p in sorted((generated / "images").glob("*_clean.paif"))]
    assert cli.main(["stack", *frames, "--output", str(generated / "v.pavf")]) == 0
    data, _ = read_volume(generated / "v.pavf")
    assert data.shape == (4, 16, 16)


def test_usage_errors():
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    assert cli.main(["train"]) == cli.EXIT_USAGE


def test_global_flags_before_subcommand(tmp_path):
    assert cli.main(["--out-dir", str(tmp_path), "--seed", "3", "gen", "--count", "1", "--height", "8", "--width", "8"]) == 0
    assert "seed=3" in (tmp_path / "manifest.txt").read_text()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pamwcnn", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("pamwcnn")
