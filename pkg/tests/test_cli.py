import csv
import json
import shutil

import numpy as np
import pytest
import yaml
from PIL import Image

from mistnet import ctgeom
from mistnet.cli import main, uint8_to_window, window_to_uint8
from mistnet.runconfig import ConfigError, load_config, parse_config

MICRO = {"n_detectors": 24, "n_views_full": 24, "image_size": 16}


def write_config(path, out="run", **blocks):
    raw = {"geometry": dict(MICRO), "model": {"sparse_count": 4},
           "train": {"epochs": 1, "precision": "double"},
           "data": {"n_train": 2, "n_test": 8, "seed": 1}, "output": {"dir": out}}
    for key, values in blocks.items():
        raw.setdefault(key, {}).update(values)
    path.write_text(yaml.safe_dump(raw))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.yaml")
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg)]) == 0
    return root, cfg


class TestSimulate:
    def test_manifest_deterministic_and_complete(self, tmp_path):
        manifests = []
        for run in ("a", "b"):
            cfg = write_config(tmp_path / f"{run}.yaml", out=run, data={"n_train": 8, "n_test": 2})
            assert main(["simulate", "--config", str(cfg)]) == 0
            manifests.append((tmp_path / run / "data" / "manifest.json").read_text())
        assert manifests[0] == manifests[1]
        entries = json.loads(manifests[0])["entries"]
        assert len(entries) == 10
        assert all(set(e["files"]) == {"phantom", "full", "label", "sparse"} for e in entries)
        assert sum(1 for _ in (tmp_path / "a" / "data").rglob("*.bin")) == 40

    def test_sparse_rows_are_dense_rows(self, trained):
        root, cfg_path = trained
        cfg = load_config(cfg_path)
        data = root / "run" / "data"
        entry = json.loads((data / "manifest.json").read_text())["entries"][0]
        _, full, full_angles = ctgeom.read_array(data / entry["files"]["full"]["path"])
        _, sparse, sparse_angles = ctgeom.read_array(data / entry["files"]["sparse"]["path"])
        idx = ctgeom.sparse_indices(cfg.geometry.n_views_full, 6, 4)
        assert np.array_equal(sparse, full[idx])
        assert np.array_equal(sparse_angles, full_angles[idx])

    def test_existing_dir_needs_force(self, trained):
        _, cfg = trained
        assert main(["simulate", "--config", str(cfg)]) == 3


class TestEval:
    def test_truth_scores_zero(self, trained, tmp_path):
        root, _ = trained
        cfg = write_config(tmp_path / "cfg.yaml", out=str(root / "run"))
        assert main(["eval", "--config", str(cfg), "--source", "truth", "--force"]) == 0
        rows = read_csv(root / "run" / "eval" / "metrics.csv")
        assert len(rows) == 8
        assert all(float(r["rmse"]) == 0.0 and float(r["ssim"]) == 1.0 for r in rows)
        assert list(rows[0]) == ["id", "views", "variant", "rmse", "psnr", "ssim"]

    def test_png_round_trip(self, trained):
        root, cfg_path = trained
        assert main(["eval", "--config", str(cfg_path), "--force",
                     "--checkpoint", str(root / "run" / "train" / "model.ckpt")]) == 0
        renders = root / "run" / "eval" / "renders"
        assert len(list(renders.glob("*.png"))) == 24
        data = root / "run" / "data"
        entry = [e for e in json.loads((data / "manifest.json").read_text())["entries"]
                 if e["split"] == "test"][0]
        _, truth, _ = ctgeom.read_array(data / entry["files"]["phantom"]["path"])
        pix = np.asarray(Image.open(renders / f"{entry['id']}_truth.png"))
        assert pix.dtype == np.uint8
        back = uint8_to_window(pix, 0.5, 1.0)
        assert np.abs(back - np.clip(truth, 0.0, 1.0)).max() <= 1.0 / 255.0

    def test_window_mapping(self):
        img = np.array([-1.0, 0.0, 0.25, 1.0, 2.0])
        assert window_to_uint8(img, 0.5, 1.0).tolist() == [0, 0, 64, 255, 255]
        assert window_to_uint8(np.array([0.0]), 0.0, 1.0).tolist() == [128]

    def test_force_rerun_identical(self, trained):
        root, cfg = trained
        ckpt = str(root / "run" / "train" / "model.ckpt")
        assert main(["eval", "--config", str(cfg), "--force", "--checkpoint", ckpt]) == 0
        first = (root / "run" / "eval" / "metrics.csv").read_bytes()
        assert main(["eval", "--config", str(cfg), "--force", "--checkpoint", ckpt]) == 0
        assert (root / "run" / "eval" / "metrics.csv").read_bytes() == first

    def test_variant_mismatch_is_data_error(self, trained, tmp_path):
        root, _ = trained
        cfg = write_config(tmp_path / "cfg.yaml", out=str(root / "run"), model={"variant": "DU_RecNet"})
        rc = main(["eval", "--config", str(cfg), "--force",
                   "--checkpoint", str(root / "run" / "train" / "model.ckpt")])
        assert rc == 3

    def test_missing_dataset(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml")
        assert main(["eval", "--config", str(cfg), "--source", "truth"]) == 3


class TestNoise:
    def test_variance_zero_matches_eval(self, trained, tmp_path):
        root, cfg_path = trained
        ckpt = str(root / "run" / "train" / "model.ckpt")
        assert main(["eval", "--config", str(cfg_path), "--force", "--checkpoint", ckpt]) == 0
        clean = read_csv(root / "run" / "eval" / "metrics.csv")
        cfg = write_config(tmp_path / "cfg.yaml", out=str(root / "run"), data={"noise_variance": 0.0})
        assert main(["noise-eval", "--config", str(cfg), "--force", "--checkpoint", ckpt]) == 0
        rows = read_csv(root / "run" / "noise" / "noise_metrics.csv")
        assert len(rows) == len(clean) == 8
        for a, b in zip(rows, clean):
            assert a["id"] == b["id"]
            for key in ("rmse", "psnr", "ssim"):
                assert a[key] == b[key] == a[f"noisy_{key}"]

    def test_noise_degrades_and_is_reproducible(self, trained):
        root, cfg = trained
        ckpt = str(root / "run" / "train" / "model.ckpt")
        assert main(["noise-eval", "--config", str(cfg), "--force", "--checkpoint", ckpt]) == 0
        path = root / "run" / "noise" / "noise_metrics.csv"
        first = path.read_bytes()
        rows = read_csv(path)
        exceptions = sum(float(r["noisy_psnr"]) > float(r["psnr"]) for r in rows)
        assert len(rows) >= 8 and exceptions <= 1
        assert all(float(r["noise_variance"]) == 0.01 for r in rows)
        assert main(["noise-eval", "--config", str(cfg), "--force", "--checkpoint", ckpt]) == 0
        assert path.read_bytes() == first


class TestTrainAndAblate:
    def test_training_outputs(self, trained):
        root, _ = trained
        out = root / "run" / "train"
        assert (out / "model.ckpt").exists() and (out / "checkpoints" / "epoch_000.ckpt").exists()
        rows = read_csv(out / "loss.csv")
        assert len(rows) == 2 and list(rows[0]) == ["step", "loss", "smoothed"]
        assert load_config(out / "config.yaml").train.epochs == 1

    def test_training_is_bitwise_reproducible(self, trained, tmp_path):
        root, cfg = trained
        copy = tmp_path / "copy"
        shutil.copytree(root / "run" / "data", copy / "data")
        cfg2 = write_config(tmp_path / "cfg.yaml", out=str(copy))
        assert main(["train", "--config", str(cfg2), "--threads", "1"]) == 0
        for name in ("model.ckpt", "loss.csv", "epochs.csv"):
            assert (copy / "train" / name).read_bytes() == (root / "run" / "train" / name).read_bytes()

    def test_ablate_rows(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml", data={"n_train": 1, "n_test": 2})
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert main(["ablate", "--config", str(cfg)]) == 0
        rows = read_csv(tmp_path / "run" / "ablate" / "ablation.csv")
        assert len(rows) == 8
        by_id = {}
        for r in rows:
            by_id.setdefault(r["id"], []).append(r["variant"])
        assert all(sorted(v) == ["DU_RecNet", "EE_RecNet", "MIST", "MU_RecNet"] for v in by_id.values())
        summary = json.loads((tmp_path / "run" / "ablate" / "summary.json").read_text())
        assert set(summary["mean_psnr"]) == {"MIST", "DU_RecNet", "MU_RecNet", "EE_RecNet", "interp_fbp"}

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, trained, tmp_path):
        root, _ = trained
        shutil.copytree(root / "run" / "data", tmp_path / "run" / "data")
        cfg = write_config(tmp_path / "cfg.yaml", train={"lr": 1e30, "precision": "single", "epochs": 3})
        assert main(["train", "--config", str(cfg)]) == 4


class TestConfig:
    def test_missing_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_unknown_key(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml", train={"learning_rate": 0.1})
        assert main(["simulate", "--config", str(cfg)]) == 2
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config(cfg)

    def test_bad_type(self):
        with pytest.raises(ConfigError, match="integer"):
            parse_config({"data": {"n_train": 2.5}})
        with pytest.raises(ConfigError):
            parse_config({"model": {"variant": "UNet"}})
        with pytest.raises(ConfigError):
            parse_config({"extra": {}})

    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.train.lr == 2.5e-4 and cfg.train.gamma == 0.1
        assert cfg.data.noise_mean == 0.0 and cfg.data.noise_variance == 0.01
        assert cfg.geometry.image_size == 64 and cfg.model.scale == "desk"

    def test_bad_flags(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml")
        assert main(["simulate"]) == 2
        assert main(["simulate", "--config", str(cfg), "--threads", "0"]) == 2
        assert main(["eval", "--config", str(cfg), "--source", "wrong"]) == 2

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml", data={"n_train": 1, "n_test": 1})
        assert main(["simulate", "--config", str(cfg)]) == 0
        first = (tmp_path / "run" / "data" / "manifest.json").read_text()
        assert main(["simulate", "--config", str(cfg), "--force", "--seed", "9"]) == 0
        assert (tmp_path / "run" / "data" / "manifest.json").read_text() != first
