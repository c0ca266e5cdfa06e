import hashlib
import io
import json

import numpy as np
import pytest
from PIL import Image

from sakf.cli import main

FAST_FLAGS = ["--k-fg", "24", "--k-bg", "24", "--kmeans-max-iters", "30", "--threads", "1"]


def run(argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        h.update(str(p.relative_to(root)).encode())
        if p.is_file():
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def model_path(small_dataset_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "m.sakf"
    code, out = run(["train", "--data", small_dataset_dir, "--out", path, *FAST_FLAGS])
    assert code == 0, out
    return path


def test_train_output(model_path, small_dataset_dir, tmp_path):
    code, out = run(["train", "--data", small_dataset_dir, "--out", tmp_path / "again.sakf", *FAST_FLAGS])
    assert code == 0
    assert out.startswith("# step=7 patch_size=7 k_fg=24 k_bg=24 sigma=12.0")
    assert "trained on 18 images, 3 classes" in out
    assert (tmp_path / "again.sakf").read_bytes() == model_path.read_bytes()


def test_eval_single_run(small_dataset_dir):
    code, out = run(["eval", "--data", small_dataset_dir, "--runs", "1", "--seed", "7", *FAST_FLAGS])
    assert code == 0
    assert "seed=7" in out.splitlines()[0]
    assert sum(line.startswith("run ") for line in out.splitlines()) == 1
    assert "run 1 (seed 8)" in out
    assert "confusion" in out and "mean accuracy" in out


def test_eval_baseline_report(small_dataset_dir, tmp_path):
    csv = tmp_path / "r.csv"
    feats = tmp_path / "f.csv"
    code, out = run(["eval-baseline", "--data", small_dataset_dir, "--runs", "2", "--report", csv,
                     "--dump-features", feats, *FAST_FLAGS])
    assert code == 0 and "method: baseline" in out
    lines = csv.read_text().splitlines()
    assert lines[0] == "run,accuracy" and lines[1].startswith("1,") and lines[2].startswith("2,")
    assert lines[4] == "true\\predicted,circle,square,triangle"
    assert len(feats.read_text().splitlines()) == 18


def test_predict_text(model_path, small_dataset_dir):
    img = sorted((small_dataset_dir / "square").iterdir())[0]
    code, out = run(["predict", "--model", model_path, "--image", img])
    assert code == 0
    assert out.startswith("# ") and "label: " in out and "fallback: " in out


def test_predict_json(model_path, small_dataset_dir, capsys):
    img = sorted((small_dataset_dir / "circle").iterdir())[0]
    code, out = run(["predict", "--model", model_path, "--image", img, "--json"])
    assert code == 0
    assert out.count("\n") == 1
    obj = json.loads(out)
    assert set(obj) == {"label", "scores", "keypoints_total", "keypoints_fg", "keypoints_kept", "fallback"}
    assert obj["keypoints_kept"] <= obj["keypoints_fg"] <= obj["keypoints_total"]
    assert capsys.readouterr().err.startswith("# step=7")


def test_predict_missing_image(model_path, tmp_path, capsys):
    missing = tmp_path / "missing.png"
    code, _ = run(["predict", "--model", model_path, "--image", missing])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_predict_bad_model(tmp_path, small_dataset_dir, capsys):
    bogus = tmp_path / "bogus.sakf"
    bogus.write_bytes(b"XXXXjunk")
    img = next((small_dataset_dir / "circle").iterdir())
    assert run(["predict", "--model", bogus, "--image", img])[0] == 2
    assert "not a SAKF model" in capsys.readouterr().err


def test_sigma_zero_rejected_before_work(tmp_path, capsys):
    # the data directory does not exist: validation must fail first
    code, out = run(["train", "--data", tmp_path / "nothing", "--out", tmp_path / "m.sakf", "--sigma", "0"])
    assert code == 1 and out == ""
    assert "sigma" in capsys.readouterr().err
    assert not (tmp_path / "m.sakf").exists()


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train", "--data", "x"], ["eval", "--data", "x", "--runs", "two"]])
def test_usage_errors(argv, capsys):
    assert run(argv)[0] == 1
    assert capsys.readouterr().err


def test_bad_dataset_exit_2(tmp_path, capsys):
    assert run(["eval", "--data", tmp_path, "--runs", "1"])[0] == 2
    assert str(tmp_path) in capsys.readouterr().err


def test_inspect(model_path, small_dataset_dir, tmp_path):
    img = sorted((small_dataset_dir / "triangle").iterdir())[1]
    out_dir = tmp_path / "viz"
    code, out = run(["inspect", "--model", model_path, "--image", img, "--out-dir", out_dir])
    assert code == 0
    names = sorted(p.name for p in out_dir.iterdir())
    assert names == sorted(f"{img.stem}_{k}.png" for k in ("saliency", "mask", "keypoints"))
    mask = np.asarray(Image.open(out_dir / f"{img.stem}_mask.png"))
    assert set(np.unique(mask)) <= {0, 255}
    overlay = np.asarray(Image.open(out_dir / f"{img.stem}_keypoints.png"))
    assert overlay.shape == (64, 64, 3)
    red = np.all(overlay == [255, 0, 0], axis=2)
    assert red.any() == ("kept 0" not in out)


def test_dataset_not_mutated(small_dataset_dir, model_path, tmp_path):
    before = tree_digest(small_dataset_dir)
    img = next((small_dataset_dir / "circle").iterdir())
    run(["eval", "--data", small_dataset_dir, "--runs", "1", *FAST_FLAGS])
    run(["predict", "--model", model_path, "--image", img])
    run(["inspect", "--model", model_path, "--image", img, "--out-dir", tmp_path])
    assert tree_digest(small_dataset_dir) == before
