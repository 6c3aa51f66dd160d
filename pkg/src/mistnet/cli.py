"""Command-line entry points: simulate, train, eval, ablate, noise-eval.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from . import ctgeom
from .ctgeom import FormatError, ImageGrid, Sinogram
from .diffcore import NonFiniteError
from .pipeline import (VARIANTS, CheckpointError, MistModel, Sample, compute_metrics, load_checkpoint,
                       save_checkpoint, smoothed, train)
from .pipeline.data import build_corpus
from .pipeline.train import TrainingDiverged, baseline, reconstruct
from .runconfig import ConfigError, RunConfig, dump_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
KINDS = ("phantom", "full", "label", "sparse")
METRIC_COLUMNS = ["id", "views", "variant", "rmse", "psnr", "ssim"]

log = logging.getLogger("mistnet")


class DataError(RuntimeError):
    pass


# -- dataset -----------------------------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare_dir(path: Path, force: bool) -> None:
    """Create an empty output directory; --force clears a previous run's output first."""
    if path.exists() and any(path.iterdir()):
        if not force:
            raise DataError(f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def cmd_simulate(cfg: RunConfig, force: bool = False) -> Path:
    data_dir = cfg.out_dir / "data"
    _prepare_dir(data_dir, force)
    mcfg = cfg.model_config()
    entries = []
    for split, start, count in (("train", 0, cfg.data.n_train), ("test", cfg.data.n_train, cfg.data.n_test)):
        (data_dir / split).mkdir(exist_ok=True)
        for sample in build_corpus(mcfg, count, cfg.data.seed, start):
            files = {}
            for kind in KINDS:
                rel = f"{split}/{sample.id}_{kind}.bin"
                obj = getattr(sample, kind)
                if kind == "phantom":
                    ctgeom.save_image(obj, data_dir / rel)
                else:
                    ctgeom.save_sinogram(obj, data_dir / rel)
                files[kind] = {"path": rel, "sha256": _digest(data_dir / rel)}
            entries.append({"id": sample.id, "split": split, "files": files})
    manifest = {"geometry": cfg.geometry.to_dict(), "model": cfg.to_dict()["model"],
                "data": cfg.to_dict()["data"], "entries": entries}
    (data_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    log.info("wrote %d samples to %s", len(entries), data_dir)
    return data_dir


def load_split(cfg: RunConfig, split: str) -> list[Sample]:
    data_dir = cfg.out_dir / "data"
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no dataset at {data_dir} (run 'simulate' first)")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("geometry") != cfg.geometry.to_dict():
        raise DataError("dataset geometry differs from the config geometry")
    geom = cfg.geometry
    mcfg = cfg.model_config()
    full = geom.full_angles()
    angle_sets = {"full": full, "label": full[::mcfg.label_stride],
                  "sparse": full[ctgeom.sparse_indices(geom.n_views_full, mcfg.sparse_stride, mcfg.sparse_count)]}
    samples = []
    for entry in manifest["entries"]:
        if entry["split"] != split:
            continue
        parts = {}
        for kind in KINDS:
            path = data_dir / entry["files"][kind]["path"]
            try:
                if _digest(path) != entry["files"][kind]["sha256"]:
                    raise DataError(f"{path}: content digest does not match the manifest")
                if kind == "phantom":
                    parts[kind] = ctgeom.load_image(path, geom)
                else:
                    parts[kind] = ctgeom.load_sinogram(path, geom, angles=angle_sets[kind])
            except (OSError, FormatError, ValueError) as err:
                raise DataError(str(err)) from None
        samples.append(Sample(entry["id"], **parts))
    if not samples:
        raise DataError(f"dataset has no '{split}' samples")
    return samples


# -- outputs -----------------------------------------------------------------------------------

def window_to_uint8(img: np.ndarray, center: float, width: float) -> np.ndarray:
    lo = center - width / 2.0
    scaled = np.clip((img - lo) / width, 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def uint8_to_window(pix: np.ndarray, center: float, width: float) -> np.ndarray:
    return pix.astype(np.float64) / 255.0 * width + (center - width / 2.0)


def save_png(img: np.ndarray, path: Path, center: float, width: float) -> None:
    Image.fromarray(window_to_uint8(img, center, width)).save(path)


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _metric_row(sample_id: str, views: int, variant: str, rec) -> dict:
    return {"id": sample_id, "views": views, "variant": variant, **rec.as_dict()}


def _dtype(cfg: RunConfig):
    return np.float32 if cfg.train.precision == "single" else np.float64


def _train_one(cfg: RunConfig, variant: str, out: Path, force: bool) -> MistModel:
    _prepare_dir(out, force)
    samples = load_split(cfg, "train")
    model = MistModel(cfg.model_config(variant), seed=cfg.model.seed)
    result = train(model, cfg.train_config(), samples, out_dir=out / "checkpoints")
    save_checkpoint(model, out / "model.ckpt")
    sm = smoothed(result.losses)
    write_csv(out / "loss.csv", [{"step": i, "loss": v, "smoothed": s}
                                  for i, (v, s) in enumerate(zip(result.losses, sm))],
              ["step", "loss", "smoothed"])
    write_csv(out / "epochs.csv", result.epoch_metrics, ["epoch", "steps", "mean_loss", "mean_train_psnr"])
    return model


def cmd_train(cfg: RunConfig, force: bool = False) -> Path:
    out = cfg.out_dir / "train"
    _train_one(cfg, cfg.model.variant, out, force)
    (out / "config.yaml").write_text(dump_config(cfg))
    return out / "model.ckpt"


def _load_model(cfg: RunConfig, checkpoint) -> MistModel:
    try:
        model = load_checkpoint(checkpoint)
    except OSError as err:
        raise DataError(f"cannot read checkpoint: {err}") from None
    except CheckpointError as err:
        raise DataError(str(err)) from None
    expected = cfg.model_config()
    if model.cfg.variant != expected.variant:
        raise DataError(f"checkpoint holds variant {model.cfg.variant}, config asks for {expected.variant}")
    if model.cfg != expected:
        raise DataError("checkpoint model configuration differs from the config file")
    return model.astype(_dtype(cfg))


def _reconstructions(cfg: RunConfig, model: MistModel | None, samples, source: str):
    for s in samples:
        if source == "truth":
            yield s, s.phantom.array
        elif source == "baseline":
            yield s, baseline(model, s)
        else:
            yield s, reconstruct(model, s, _dtype(cfg))


def cmd_eval(cfg: RunConfig, checkpoint=None, force: bool = False, source: str = "model") -> Path:
    """Metrics CSV plus reconstruction/truth/difference renders for the test split.

    ``source`` selects what is scored: the trained model, the interpolation
    + FBP baseline, or the ground truth itself (a pipeline sanity check).
    """
    out = cfg.out_dir / "eval"
    _prepare_dir(out, force)
    samples = load_split(cfg, "test")
    if source == "model":
        if checkpoint is None:
            raise ConfigError("eval needs --checkpoint unless --source is truth or baseline")
        model = _load_model(cfg, checkpoint)
        variant = model.cfg.variant
    else:
        model = MistModel(cfg.model_config(), seed=cfg.model.seed) if source == "baseline" else None
        variant = source
    renders = out / "renders"
    renders.mkdir()
    d = cfg.display
    rows = []
    for s, rec in _reconstructions(cfg, model, samples, source):
        metrics = compute_metrics(rec, s.phantom)
        rows.append(_metric_row(s.id, s.sparse.views, variant, metrics))
        save_png(rec, renders / f"{s.id}_recon.png", d.center, d.width)
        save_png(s.phantom.array, renders / f"{s.id}_truth.png", d.center, d.width)
        # symmetric window around zero for the difference image
        save_png(rec - s.phantom.array, renders / f"{s.id}_diff.png", 0.0, d.width)
    write_csv(out / "metrics.csv", rows, METRIC_COLUMNS)
    (out / "display.json").write_text(json.dumps(
        {"recon": [d.center, d.width], "truth": [d.center, d.width], "diff": [0.0, d.width]}))
    return out / "metrics.csv"


def cmd_ablate(cfg: RunConfig, force: bool = False) -> Path:
    """Train and score all four variants with a shared seed; one CSV row per (image, variant)."""
    out = cfg.out_dir / "ablate"
    _prepare_dir(out, force)
    samples = load_split(cfg, "test")
    rows, base_rows = [], []
    means = {}
    for variant in VARIANTS:
        model = _train_one(cfg, variant, out / variant, force)
        scores = []
        for s, rec in _reconstructions(cfg, model, samples, "model"):
            m = compute_metrics(rec, s.phantom)
            rows.append(_metric_row(s.id, s.sparse.views, variant, m))
            scores.append(m.psnr)
        means[variant] = float(np.mean(scores))
    ref = MistModel(cfg.model_config(), seed=cfg.model.seed)
    for s in samples:
        base_rows.append(_metric_row(s.id, s.sparse.views, "interp_fbp", compute_metrics(baseline(ref, s), s.phantom)))
    means["interp_fbp"] = float(np.mean([r["psnr"] for r in base_rows]))
    write_csv(out / "ablation.csv", rows, METRIC_COLUMNS)
    write_csv(out / "baseline.csv", base_rows, METRIC_COLUMNS)
    checks = {"MIST>=EE_RecNet": means["MIST"] >= means["EE_RecNet"],
              "DU_RecNet>=MU_RecNet": means["DU_RecNet"] >= means["MU_RecNet"],
              "MIST>=interp_fbp+2dB": means["MIST"] >= means["interp_fbp"] + 2.0}
    (out / "summary.json").write_text(json.dumps({"mean_psnr": means, "ordering": checks}, indent=1, sort_keys=True))
    warn = out / "ordering_warning.txt"
    failed = [k for k in ("MIST>=EE_RecNet", "DU_RecNet>=MU_RecNet") if not checks[k]]
    if failed:
        warn.write_text("ablation ordering not reproduced: " + ", ".join(failed) + "\n"
                        + json.dumps(means, indent=1, sort_keys=True) + "\n")
        log.warning("ablation ordering not reproduced: %s", ", ".join(failed))
    elif warn.exists():
        warn.unlink()
    return out / "ablation.csv"


def cmd_noise_eval(cfg: RunConfig, checkpoint, force: bool = False) -> Path:
    """Clean and noise-perturbed metrics per test image.

    The noisy sparse sinogram is the stored one plus the sparse projection of
    the added noise image, so variance 0 reproduces the clean input exactly.
    """
    out = cfg.out_dir / "noise"
    _prepare_dir(out, force)
    samples = load_split(cfg, "test")
    model = _load_model(cfg, checkpoint)
    geom = cfg.geometry
    d = cfg.data
    rows = []
    for k, s in enumerate(samples):
        noisy_img = ctgeom.add_gaussian_noise(s.phantom, d.noise_mean, d.noise_variance, seed=d.noise_seed + k)
        noise = noisy_img.array - s.phantom.array
        delta = ctgeom.forward_project(ImageGrid(noise, geom), geom, s.sparse.view_angles).array
        noisy = Sample(s.id, s.phantom, s.full, s.label,
                       Sinogram(s.sparse.array + delta, s.sparse.view_angles, geom))
        clean_m = compute_metrics(reconstruct(model, s, _dtype(cfg)), s.phantom)
        noisy_m = compute_metrics(reconstruct(model, noisy, _dtype(cfg)), s.phantom)
        rows.append({"id": s.id, "views": s.sparse.views, "variant": model.cfg.variant,
                     "noise_mean": d.noise_mean, "noise_variance": d.noise_variance,
                     "rmse": clean_m.rmse, "psnr": clean_m.psnr, "ssim": clean_m.ssim,
                     "noisy_rmse": noisy_m.rmse, "noisy_psnr": noisy_m.psnr, "noisy_ssim": noisy_m.ssim,
                     "delta_psnr": noisy_m.psnr - clean_m.psnr})
    cols = ["id", "views", "variant", "noise_mean", "noise_variance", "rmse", "psnr", "ssim",
            "noisy_rmse", "noisy_psnr", "noisy_ssim", "delta_psnr"]
    write_csv(out / "noise_metrics.csv", rows, cols)
    return out / "noise_metrics.csv"


# -- entry point ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mistnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--threads", type=int, default=1, help="BLAS thread count (default 1)")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("simulate", help="synthesise phantoms and sinograms"))
    common(sub.add_parser("train", help="train the configured variant"))
    p = common(sub.add_parser("eval", help="score the test split and render PNGs"))
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--source", choices=("model", "baseline", "truth"), default="model")
    common(sub.add_parser("ablate", help="train and score all four variants"))
    p = common(sub.add_parser("noise-eval", help="clean vs noise-perturbed metrics"))
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    with threadpool_limits(limits=args.threads):
        if args.command == "simulate":
            cmd_simulate(cfg, args.force)
        elif args.command == "train":
            cmd_train(cfg, args.force)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.force, args.source)
        elif args.command == "ablate":
            cmd_ablate(cfg, args.force)
        else:
            cmd_noise_eval(cfg, args.checkpoint, args.force)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
