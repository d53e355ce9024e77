"""Command-line entry points.

Commands: gen-synthetic, train-stage1, train-stage2, infer, eval. Each takes
--config FILE (key = value text, schema in config.py) plus the overrides
--seed, --epochs, --out. Exit codes: 0 success, 1 partial per-file failures,
2 configuration or load errors. Logs go to stderr; reports go to stdout and
files under the output directory. Every artifact a run emits (checkpoints,
mask PNGs, reports) is stamped with the run's config hash.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import cascade as casc
from .config import (RunConfig, apply_overrides, config_hash, desk_profile,
                     load_config, to_text)
from .data import (DataLoadError, Dataset, generate_synthetic, load_dataset,
                   load_image_png, write_dataset)
from .errors import ConfigurationError, HarnessError
from .metrics import MetricsReport, render_table, score_samples, to_tsv
from .training import sub_seed, train_stage1, train_stage2
from .unet import ModelIOError, load_model

log = logging.getLogger("ctiunet")


def _base_config(args) -> RunConfig:
    base = desk_profile() if args.profile == "desk" else RunConfig()
    if args.config:
        base = load_config(args.config, base=base)
    return apply_overrides(base, seed=args.seed, epochs=args.epochs, out=args.out)


def _dataset_for(config: RunConfig) -> Dataset:
    if config.data_root:
        return load_dataset(config.data_root)
    return generate_synthetic(config.synthetic_count, config.synthetic_size,
                              seed=sub_seed(config.master_seed, "data"),
                              difficulty=config.synthetic_difficulty)


def _write_run_files(config: RunConfig, out_dir: Path) -> str:
    out_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(config)
    (out_dir / "config.txt").write_text(to_text(config) + f"# config_hash = {h}\n",
                                        encoding="utf-8")
    return h


# -- commands ----------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    config = _base_config(args)
    out_dir = Path(config.out_dir)
    dataset = generate_synthetic(config.synthetic_count, config.synthetic_size,
                                 seed=sub_seed(config.master_seed, "data"),
                                 difficulty=config.synthetic_difficulty)
    h = config_hash(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_hash = write_dataset(dataset, out_dir)
    (out_dir / "generation.txt").write_text(
        f"config_hash = {h}\nmaster_seed = {config.master_seed}\n"
        f"count = {len(dataset)}\nmanifest_hash = {manifest_hash}\n", encoding="utf-8")
    log.info("wrote %d samples to %s", len(dataset), out_dir)
    print(f"manifest_hash\t{manifest_hash}")
    return 0


def cmd_train_stage1(args) -> int:
    config = _base_config(args)
    out_dir = Path(config.out_dir)
    dataset = _dataset_for(config)
    _write_run_files(config, out_dir)
    ckpt = out_dir / "model1.ckpt"
    t0 = time.time()
    _, train_log = train_stage1(config, dataset, str(ckpt), log=log.info)
    (out_dir / "train_stage1.tsv").write_text(train_log.to_text(include_timing=True),
                                              encoding="utf-8")
    log.info("stage 1 done in %.1fs", time.time() - t0)
    print(f"checkpoint\t{ckpt}")
    print(f"best_epoch\t{train_log.best_epoch}")
    print(f"best_val_dsc\t{train_log.best_val_dsc:.6f}")
    return 0


def cmd_train_stage2(args) -> int:
    config = _base_config(args)
    out_dir = Path(config.out_dir)
    model1_path = args.model1 or str(out_dir / "model1.ckpt")
    model1 = load_model(model1_path)
    dataset = _dataset_for(config)
    _write_run_files(config, out_dir)
    ckpt = out_dir / "model2.ckpt"
    t0 = time.time()
    _, train_log = train_stage2(config, dataset, model1, str(ckpt), log=log.info)
    (out_dir / "train_stage2.tsv").write_text(train_log.to_text(include_timing=True),
                                              encoding="utf-8")
    log.info("stage 2 done in %.1fs", time.time() - t0)
    print(f"checkpoint\t{ckpt}")
    print(f"best_epoch\t{train_log.best_epoch}")
    print(f"best_val_dsc\t{train_log.best_val_dsc:.6f}")
    return 0


def cmd_infer(args) -> int:
    config = _base_config(args)
    out_dir = Path(config.out_dir)
    model1 = load_model(args.model1)
    model2 = load_model(args.model2)
    thresholds = casc.ThresholdSet(config.thresholds)
    spec = casc.WindowSpec(window=config.window, overlap=config.overlap, blend=config.blend)
    casc.check_cascade_channels(model1, model2, thresholds)
    h = _write_run_files(config, out_dir)
    stamp = {"config_hash": h}
    failures = []
    for path in args.images:
        ident = Path(path).stem
        try:
            image = load_image_png(path)
            result = casc.run_cascade(model1, model2, image, thresholds, spec)
        except Exception as e:  # per-file: report and continue
            failures.append(f"{path}: {e}")
            log.error("%s: %s", path, e)
            continue
        casc.save_png(out_dir / f"{ident}_mask.png", casc.mask_u8(result.final_mask), stamp)
        if args.intermediates:
            casc.save_png(out_dir / f"{ident}_heatmap.png", casc.heatmap_u8(result.probs1), stamp)
            for t, chan in zip(thresholds.values, result.stack):
                casc.save_png(out_dir / f"{ident}_stack_t{t:g}.png",
                              np.where(chan >= 0.5, 255, 0).astype(np.uint8), stamp)
            casc.save_png(out_dir / f"{ident}_overlay.png",
                          casc.overlay_u8(image, result.final_mask), stamp)
        log.info("%s -> %s_mask.png", path, ident)
    print(f"processed\t{len(args.images) - len(failures)}")
    print(f"failed\t{len(failures)}")
    return 1 if failures else 0


def _collect_gt_masks(gt_root: Path) -> dict[str, tuple[str, Path]]:
    """identifier -> (condition, mask path) from a dataset-layout tree, or
    from a flat directory of PNGs (condition 'unknown')."""
    from .data import dir_condition
    out: dict[str, tuple[str, Path]] = {}
    subdirs = [p for p in sorted(gt_root.iterdir()) if (p / "mask").is_dir()] \
        if gt_root.is_dir() else []
    if subdirs:
        for cdir in subdirs:
            for p in sorted((cdir / "mask").glob("*.png")):
                out[p.stem] = (dir_condition(cdir.name), p)
    elif gt_root.is_dir():
        for p in sorted(gt_root.glob("*.png")):
            out[p.stem] = ("unknown", p)
    return out


def _load_binary_png(path: Path) -> np.ndarray:
    from PIL import Image
    arr = np.asarray(Image.open(path).convert("L"))
    if not np.isin(arr, (0, 255)).all():
        raise ConfigurationError(f"{path}: mask values must be 0 or 255")
    return (arr == 255).astype(np.uint8)


def cmd_eval(args) -> int:
    config = _base_config(args)
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    gt = _collect_gt_masks(gt_root)
    # prefer *_mask.png (inference output alongside intermediates); fall
    # back to every PNG for plain mask directories
    mask_files = sorted(pred_root.glob("*_mask.png"))
    preds: dict[str, Path] = {}
    if mask_files:
        preds = {p.stem[:-len("_mask")]: p for p in mask_files}
    else:
        preds = {p.stem: p for p in sorted(pred_root.glob("*.png"))}
    if not gt or not preds:
        raise ConfigurationError(
            f"eval: no masks found ({len(preds)} predictions, {len(gt)} ground truth)")
    matched = sorted(set(preds) & set(gt))
    # a prediction without ground truth is an inconsistency; ground truth
    # without a prediction just means a subset is being scored
    unmatched_pred = sorted(set(preds) - set(gt))
    unmatched_gt = sorted(set(gt) - set(preds))
    for ident in unmatched_pred:
        log.warning("unmatched prediction: %s", ident)
    for ident in unmatched_gt:
        log.warning("unmatched ground truth: %s", ident)

    # refuse to mix artifacts from different configurations
    hashes = set()
    for p in list(preds.values()) + [path for _, path in gt.values()]:
        try:
            h = casc.read_png_text(p).get("config_hash")
        except Exception:
            h = None
        if h:
            hashes.add(h)
    if len(hashes) > 1 and not args.force:
        raise ConfigurationError(
            f"eval: artifacts carry {len(hashes)} different config hashes; "
            "pass --force to compare anyway")

    entries = []
    for ident in matched:
        condition, gt_path = gt[ident]
        entries.append((ident, condition,
                        _load_binary_png(preds[ident]), _load_binary_png(gt_path)))
    metadata = {"n_matched": len(matched),
                "n_unmatched_pred": len(unmatched_pred),
                "n_unmatched_gt": len(unmatched_gt)}
    if len(hashes) == 1:
        metadata["config_hash"] = next(iter(hashes))
    report = score_samples(entries, metadata=metadata)
    table, tsv = render_table(report), to_tsv(report)
    print(table)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = "".join(f"# {k} = {v}\n" for k, v in sorted(report.metadata.items()))
    (out_dir / "report.txt").write_text(header + table + "\n", encoding="utf-8")
    (out_dir / "report.tsv").write_text(tsv, encoding="utf-8")
    log.info("report written to %s", out_dir)
    return 1 if unmatched_pred else 0


# -- wiring ------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ctiunet",
        description="Cascaded threshold-integrated segmentation pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--profile", choices=("paper", "desk"), default="paper",
                       help="base defaults before --config and overrides")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--epochs", type=int, help="epoch count override")
        p.add_argument("--out", help="output directory override")

    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset tree")
    common(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train-stage1", help="train the RGB segmentation model")
    common(p)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="train the refinement model")
    common(p)
    p.add_argument("--model1", help="stage-1 checkpoint (default <out>/model1.ckpt)")
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("infer", help="run the cascade on image files")
    common(p)
    p.add_argument("--model1", required=True)
    p.add_argument("--model2", required=True)
    p.add_argument("--intermediates", action="store_true",
                   help="also write heatmaps, threshold masks, and overlays")
    p.add_argument("images", nargs="+", help="input PNG files")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", required=True, help="directory of predicted mask PNGs")
    p.add_argument("--gt", required=True, help="dataset root or flat mask directory")
    p.add_argument("--force", action="store_true",
                   help="compare artifacts even if their config hashes differ")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, HarnessError, ModelIOError) as e:
        log.error("%s", e)
        return 2
    except DataLoadError as e:
        for line in e.errors:
            log.error("%s", line)
        return 2
    except OSError as e:
        log.error("%s", e)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
