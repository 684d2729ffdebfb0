"""End-to-end orchestration over a run directory.

Each step reads its inputs from the run directory written by earlier
steps, so the CLI subcommands and the test harness share one code path:
prepare data -> masks -> train GAN -> train enhancer -> inpaint ->
evaluate -> plot.
"""

import json
import io
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as data_mod
from .checkpoint import CheckpointError
from .config import (ConfigError, config_hash, degradation_spec, enhance_config, gan_config,
                     inpaint_config, mask_spec, ssim_params, validate_config)
from .data import (DataError, DatasetSplit, MaskSpec, apply_mask, denormalize, generate_mask,
                   load_image, load_mask_png, save_mask_png)
from .enhance import load_enhancer, train_enhancer
from .inpaint import TRACE_HEADER, inpaint_image
from .metrics import MetricsReport, evaluate_set
from .plots import emit_plot
from .rundir import RunDir, atomic_save_image, atomic_write_bytes, atomic_write_csv, atomic_write_json
from .seeding import derive_seed
from .wgan import load_critic, load_generator, train_gan


def ensure_run_config(run: RunDir, normalized: dict) -> str:
    """Persist config.json on first use; later calls must hash-match it."""
    run.ensure()
    digest = config_hash(normalized)
    if run.config_path.exists():
        existing = json.loads(run.config_path.read_text(encoding="utf-8"))
        existing_digest = config_hash(validate_config(existing))
        if existing_digest != digest:
            raise ConfigError([
                ("", f"run directory already holds a different config "
                     f"(existing {existing_digest[:12]}, given {digest[:12]}); "
                     "use a fresh run directory or the stored config")
            ])
        return digest
    atomic_write_json(run.config_path, normalized)
    return digest


def load_run_config(run: RunDir) -> dict:
    if not run.config_path.exists():
        raise ConfigError([("", f"no config.json in run directory {run.root}")])
    return validate_config(json.loads(run.config_path.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# data + masks


def prepare_data(cfg: dict, run: RunDir) -> DatasetSplit:
    """Build or load the dataset and persist it as data/dataset.npz."""
    d = cfg["data"]
    size = (d["image_size"], d["image_size"])
    if d["source"] == "synthetic":
        split = data_mod.generate_synthetic_dataset(d["count"], size, d["seed"], d["split_fraction"])
    else:
        split = data_mod.load_dataset(d["path"], size, d["split_fraction"], d["seed"])
    buf = io.BytesIO()
    np.savez_compressed(buf, train=split.train, test=split.test)
    atomic_write_bytes(run.data / "dataset.npz", buf.getvalue())
    report = split.load_report.to_dict() if split.load_report else None
    atomic_write_json(run.data / "load_report.json", {
        "source": d["source"], "seed": d["seed"], "train": int(len(split.train)),
        "test": int(len(split.test)), "load_report": report,
    })
    return split


def load_prepared_data(run: RunDir) -> DatasetSplit:
    path = run.data / "dataset.npz"
    if not path.exists():
        raise DataError(f"no prepared dataset at {path}; run prepare-data first")
    with np.load(path, allow_pickle=False) as z:
        split = DatasetSplit(train=z["train"], test=z["test"], seed=-1)
    return split


def mask_for_index(cfg: dict, index: int, size) -> np.ndarray:
    """Per-image mask with its own seed fanned out from the mask seed."""
    m = cfg["mask"]
    spec = MaskSpec(kind=m["kind"], fraction=m["fraction"],
                    seed=derive_seed(m["seed"], f"mask/{index}"))
    return generate_mask(spec, size)


def make_masks(cfg: dict, run: RunDir) -> list:
    size = (cfg["data"]["image_size"], cfg["data"]["image_size"])
    paths = []
    for i in range(cfg["inpaint"]["num_images"]):
        path = run.masks / f"mask_{i:04d}.png"
        save_mask_png(path, mask_for_index(cfg, i, size))
        paths.append(path)
    return paths


def _mask_for_image(cfg: dict, run: RunDir, index: int, size) -> np.ndarray:
    stored = run.masks / f"mask_{index:04d}.png"
    if stored.exists():
        mask = load_mask_png(stored)
        if mask.shape != size:
            raise DataError(f"stored mask {stored} has shape {mask.shape}, expected {size}")
        return mask
    return mask_for_index(cfg, index, size)


# ---------------------------------------------------------------------------
# training


def run_train_gan(cfg: dict, run: RunDir, resume_step=None):
    split = load_prepared_data(run)
    return train_gan(split, gan_config(cfg), run.root, resume_step=resume_step,
                     config_sha256=config_hash(cfg))


def run_train_enhance(cfg: dict, run: RunDir):
    e = cfg["enhance"]
    if e["pair_source"] == "synthetic":
        split = load_prepared_data(run)
        pairs = data_mod.build_degraded_pairs(split.train, degradation_spec(cfg),
                                              e["num_pairs"], e["degradation"]["seed"])
    else:
        size = (cfg["data"]["image_size"], cfg["data"]["image_size"])
        pairs = data_mod.load_pair_directory(e["pair_dir"], size)
    return train_enhancer(pairs, enhance_config(cfg), run.root, config_sha256=config_hash(cfg))


# ---------------------------------------------------------------------------
# inpainting


def _write_inpaint_outputs(run: RunDir, image_id: str, original, mask, masked, result, final) -> Path:
    out = run.results / image_id
    atomic_save_image(out / "original.png", original)
    save_mask_png(out / "mask.png", mask)
    atomic_save_image(out / "masked.png", masked)
    atomic_save_image(out / "raw.png", result.reconstructed)
    atomic_save_image(out / "final.png", final)
    atomic_write_csv(out / "trace.csv", TRACE_HEADER, result.trace)
    atomic_write_json(out / "z_star.json", {
        "z_star": [float(v) for v in result.z_star],
        "final_total": result.trace[-1][3],
    })
    return out


def _load_models(cfg: dict, run: RunDir, use_enhancer=True):
    gen_path = run.checkpoints / "generator_final.pt"
    critic_path = run.checkpoints / "critic_final.pt"
    for p in (gen_path, critic_path):
        if not p.exists():
            raise CheckpointError(f"missing {p}; run train-gan first")
    enhancer = None
    enhancer_path = run.checkpoints / "enhancer_final.pt"
    if use_enhancer and enhancer_path.exists():
        enhancer = load_enhancer(enhancer_path)
    return load_generator(gen_path), load_critic(critic_path), enhancer


def run_inpaint(cfg: dict, run: RunDir, use_enhancer=True) -> list:
    """Mask and complete the first inpaint.num_images test images."""
    generator, critic, enhancer = _load_models(cfg, run, use_enhancer)
    split = load_prepared_data(run)
    n = min(cfg["inpaint"]["num_images"], len(split.test))
    if n == 0:
        raise DataError("prepared dataset has no test images to inpaint")
    out_dirs = []
    for i in range(n):
        original = split.test[i]
        mask = _mask_for_image(cfg, run, i, original.shape[:2])
        masked = apply_mask(original, mask)
        per_image = inpaint_config(cfg, seed=derive_seed(cfg["inpaint"]["seed"], f"image/{i}"))
        result, final = inpaint_image(generator, critic, enhancer, masked, mask, per_image)
        out_dirs.append(_write_inpaint_outputs(run, f"{i:04d}", original, mask, masked, result, final))
    return out_dirs


def run_inpaint_manifest(cfg: dict, run: RunDir, manifest_path, use_enhancer=True) -> list:
    """Batch mode: entries of {image, mask_png | mask: {kind, fraction, seed}}."""
    manifest_path = Path(manifest_path)
    try:
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([("", f"cannot read manifest {manifest_path}: {exc}")]) from exc
    if not isinstance(entries, list) or not entries:
        raise ConfigError([("", "manifest must be a nonempty JSON array")])
    errors = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "image" not in entry:
            errors.append((f"[{i}]", "each entry must be an object with an 'image' path"))
        elif ("mask_png" in entry) == ("mask" in entry):
            errors.append((f"[{i}]", "exactly one of 'mask_png' or 'mask' is required"))
    if errors:
        raise ConfigError(errors)

    generator, critic, enhancer = _load_models(cfg, run, use_enhancer)
    size = generator.image_size
    out_dirs = []
    for i, entry in enumerate(entries):
        original = load_image(Path(manifest_path.parent, entry["image"]), (size, size))
        if "mask_png" in entry:
            mask = load_mask_png(Path(manifest_path.parent, entry["mask_png"]))
            if mask.shape != original.shape[:2]:
                raise DataError(f"manifest entry {i}: mask shape {mask.shape} "
                                f"does not match image {original.shape[:2]}")
        else:
            m = entry["mask"]
            spec = MaskSpec(kind=m.get("kind", cfg["mask"]["kind"]),
                            fraction=m.get("fraction", cfg["mask"]["fraction"]),
                            seed=m.get("seed", derive_seed(cfg["mask"]["seed"], f"manifest/{i}")))
            mask = generate_mask(spec, original.shape[:2])
        masked = apply_mask(original, mask)
        per_image = inpaint_config(cfg, seed=derive_seed(cfg["inpaint"]["seed"], f"manifest/{i}"))
        result, final = inpaint_image(generator, critic, enhancer, masked, mask, per_image)
        out_dirs.append(_write_inpaint_outputs(run, f"m{i:04d}", original, mask, masked, result, final))
    return out_dirs


# ---------------------------------------------------------------------------
# evaluation + plots


def _load_u8(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def run_evaluate(cfg: dict, run: RunDir) -> MetricsReport:
    """Score every results/<id>/final.png against its original.png."""
    result_dirs = sorted(p for p in run.results.glob("*") if p.is_dir()) if run.results.exists() else []
    ids, originals, completed = [], [], []
    for d in result_dirs:
        original, final = d / "original.png", d / "final.png"
        if original.exists() and final.exists():
            ids.append(d.name)
            originals.append(_load_u8(original))
            completed.append(_load_u8(final))
    if not ids:
        raise DataError(f"no completed results under {run.results}; run inpaint first")
    report = evaluate_set(originals, completed, ssim_params(cfg), ids=ids,
                          provenance={"run_dir": str(run.root), "config_sha256": config_hash(cfg),
                                      "images": len(ids)})
    report.write(run.report / "metrics.csv", run.report / "metrics.json")
    return report


def run_plots(cfg: dict, run: RunDir) -> list:
    emitted = []
    gan_csv = run.history / "gan.csv"
    if gan_csv.exists():
        emitted.append(emit_plot(gan_csv, run.plots / "gan_loss.png", "gan-loss"))
    enhance_csv = run.history / "enhance.csv"
    if enhance_csv.exists():
        emitted.append(emit_plot(enhance_csv, run.plots / "enhance_loss.png", "enhance-loss"))
    if run.results.exists():
        for trace in sorted(run.results.glob("*/trace.csv")):
            emitted.append(emit_plot(trace, run.plots / f"trace_{trace.parent.name}.png", "inpaint-trace"))
    if not emitted:
        raise DataError(f"nothing to plot in {run.root}: no history CSVs or traces found")
    return emitted


def masked_baseline_u8(original: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """8-bit view of the zero-filled masked input, for before/after comparisons."""
    return denormalize(apply_mask(original, mask))
