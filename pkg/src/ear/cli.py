"""Command-line entry points for the pipeline.

Subcommands: estimate-scale, fit-scale-model, preprocess, train, score,
eval, grid-search-mosaic, gradcheck. The EAR_SEED environment variable
overrides the configured training seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import toml

from .harness import (DEFAULT_RESOLUTION, attention_for, emit_heatmap, evaluate_checkpoint,
                      load_image_resized, run_config_from_dict, run_experiment, scan_dataset,
                      score_image, write_report, _masks_for)
from .imagecore import load_image, save_image, save_png
from .obfuscate import compose_hint
from .reconnet import gradcheck_battery, load_checkpoint, model_from_checkpoint, save_checkpoint
from .saliency import binarize_q3, fallback_saliency, read_attention
from .scalest import CATEGORIES, ScaleModel, estimate_scale, fit_scale_model, product_r10


def _env_seed() -> int | None:
    raw = os.environ.get("EAR_SEED")
    return int(raw) if raw else None


def _load_run_config(path: Path):
    cfg = toml.load(path)
    return run_config_from_dict(cfg, base_dir=path.parent, seed_override=_env_seed())


def _split_category_dir(data_dir: Path) -> tuple[Path, str]:
    data_dir = data_dir.resolve()
    return data_dir.parent, data_dir.name


def _load_scale_model(args) -> ScaleModel | None:
    if args.model:
        blob = json.loads(Path(args.model).read_text())
        entry = blob.get(args.kind, blob if "slope" in blob else None)
        if entry is None:
            raise SystemExit(f"model file has no coefficients for category kind {args.kind!r}")
        return ScaleModel(slope=float(entry["slope"]), intercept=float(entry["intercept"]),
                          category=args.kind)
    if args.slope is not None and args.intercept is not None:
        return ScaleModel(slope=args.slope, intercept=args.intercept, category=args.kind)
    return None


def cmd_estimate_scale(args) -> int:
    root, category = _split_category_dir(Path(args.data))
    spec = scan_dataset(root, category, kind=args.kind, attn_dir=args.attn)
    images, attns = [], []
    for p in spec.train_paths:
        images.append(load_image_resized(p, args.resolution))
        attns.append(attention_for(spec, p))
    masks = _masks_for(images, attns)
    r10_value = product_r10(list(zip(images, masks)), args.sigma)
    print(f"r10 = {r10_value:.6f}")
    model = _load_scale_model(args)
    if model is None:
        print("m_hat = (no scale model given; pass --model or --slope/--intercept)")
    else:
        print(f"m_hat = {estimate_scale(model, r10_value).value}")
    return 0


def cmd_fit_scale_model(args) -> int:
    pairs_by_kind: dict[str, list] = {}
    with open(args.pairs, newline="") as fh:
        for row in csv.DictReader(fh):
            kind = row["category"].strip()
            if kind not in CATEGORIES:
                raise SystemExit(f"unknown category kind {kind!r} in {args.pairs}")
            pairs_by_kind.setdefault(kind, []).append((float(row["r10"]), float(row["mStar"])))
    out = {}
    for kind, pairs in pairs_by_kind.items():
        model = fit_scale_model(pairs, kind)
        out[kind] = {"slope": model.slope, "intercept": model.intercept, "n_pairs": len(pairs)}
    Path(args.out).write_text(json.dumps(out, sort_keys=True, indent=2) + "\n")
    print(f"wrote {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    img = load_image(args.image)
    if args.attn:
        attn = read_attention(args.attn)
    else:
        attn = fallback_saliency(img)
    mask = binarize_q3(attn, img.height, img.width)
    iprime = compose_hint(img, args.scale, mask)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    save_image(iprime, out_dir / f"{stem}.iprime.png")
    save_png(mask.bits.astype(np.float64), out_dir / f"{stem}.mask.png")
    print(f"wrote {out_dir / (stem + '.iprime.png')} and {out_dir / (stem + '.mask.png')}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(Path(args.config))
    spec = scan_dataset(cfg.root, cfg.category, kind=cfg.kind, attn_dir=cfg.attn_dir)
    report = run_experiment(spec, cfg)
    best = report.best
    ckpt = best.pop("checkpoint")
    ckpt.extra["resolution"] = cfg.resolution
    if cfg.checkpoint_path is not None:
        Path(cfg.checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, cfg.checkpoint_path)
        print(f"checkpoint: {cfg.checkpoint_path}")
    if cfg.report_path is not None:
        write_report(report, cfg.report_path)
        print(f"report: {cfg.report_path}")
    print(f"scale={best['scale']} auroc={best['auroc']:.4f} "
          f"loss {best['loss_first']:.4f} -> {best['loss_final']:.4f}")
    return 0


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    resolution = int(ckpt.extra.get("resolution", DEFAULT_RESOLUTION))
    img = load_image_resized(args.image, resolution)
    attn = read_attention(args.attn) if args.attn else None
    score, dmap = score_image(model, img, ckpt.scale, ckpt.metric_cfg,
                              hint=bool(ckpt.extra.get("hint", True)),
                              attention=bool(ckpt.extra.get("attention", True)),
                              attn=attn)
    print(json.dumps({"path": str(args.image), "score": score}, sort_keys=True))
    if args.heatmap:
        emit_heatmap(img, dmap, args.heatmap)
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    root, category = _split_category_dir(Path(args.data))
    spec = scan_dataset(root, category, kind=args.kind, attn_dir=args.attn)
    resolution = int(ckpt.extra.get("resolution", DEFAULT_RESOLUTION))
    started = time.perf_counter()
    result = evaluate_checkpoint(ckpt, spec, resolution)
    images = result.pop("images")
    lines = [json.dumps(row, sort_keys=True) for row in images]
    result["wall_clock_sec"] = time.perf_counter() - started
    lines.append(json.dumps(result, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_grid_search_mosaic(args) -> int:
    cfg = _load_run_config(Path(args.config))
    if cfg.scale_mode != "grid-search":
        raise SystemExit("config must set scale.mode = 'grid-search'")
    spec = scan_dataset(cfg.root, cfg.category, kind=cfg.kind, attn_dir=cfg.attn_dir)
    report = run_experiment(spec, cfg)
    best = report.best
    best.pop("checkpoint", None)
    for m, value in sorted(best["scale_table"].items()):
        print(f"m={m:>2}  auroc={value:.4f}")
    print(f"m* = {best['scale']}")
    if cfg.report_path is not None:
        write_report(report, cfg.report_path)
        print(f"report: {cfg.report_path}")
    return 0


def cmd_gradcheck(args) -> int:
    failures = 0
    for case in gradcheck_battery(seed=args.seed):
        status = "PASS" if case["passed"] else "FAIL"
        print(f"[{status}] {case['name']}: max_rel_err={case['error']:.3e} tol={case['tol']:.0e}")
        failures += 0 if case["passed"] else 1
    if failures:
        print(f"{failures} primitive(s) failed")
        return 1
    print("all primitives pass")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ear", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-scale", help="print r10 and the estimated mosaic scale")
    p.add_argument("--data", required=True, help="category directory (contains train/ and test/)")
    p.add_argument("--attn", default=None, help="attention directory mirroring image stems")
    p.add_argument("--sigma", type=float, default=1.0, help="Hessian pre-smoothing sigma")
    p.add_argument("--kind", choices=CATEGORIES, default="objects")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    p.add_argument("--model", default=None, help="scale-model JSON from fit-scale-model")
    p.add_argument("--slope", type=float, default=None)
    p.add_argument("--intercept", type=float, default=None)
    p.set_defaults(func=cmd_estimate_scale)

    p = sub.add_parser("fit-scale-model", help="fit linear scale models from a (r10, m*) CSV")
    p.add_argument("--pairs", required=True, help="CSV with columns product,category,r10,mStar")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_fit_scale_model)

    p = sub.add_parser("preprocess", help="write the corrupted input I' and mask S as PNGs")
    p.add_argument("--image", required=True)
    p.add_argument("--attn", default=None, help="EARATTN1 file (fallback saliency if omitted)")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train from a TOML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score one image with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--attn", default=None)
    p.add_argument("--heatmap", default=None, help="optional overlay PNG path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score a test split and print AUROC")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="category directory")
    p.add_argument("--attn", default=None)
    p.add_argument("--kind", choices=CATEGORIES, default="objects")
    p.add_argument("--out", default=None, help="optional JSONL report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid-search-mosaic", help="grid-search the mosaic scale from a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_grid_search_mosaic)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
