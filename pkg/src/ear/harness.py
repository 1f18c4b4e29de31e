"""Dataset ingestion, experiment orchestration and reporting.

Datasets follow the industrial-inspection layout: category/train/good
holds normal samples; category/test/good is normal and every other test
subdirectory is anomalous. Reports are JSON lines, one run per line, and
are byte-reproducible for a fixed seed apart from wall-clock fields.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

from .grad import Tensor
from .imagecore import Image, save_png
from .metrics import DistanceMap, LossWeights, MetricConfig, anomaly_score, auroc, msgms_distance
from .obfuscate import ALLOWED_SCALES
from .reconnet import (Checkpoint, ReconModel, TrainConfig, model_from_checkpoint,
                       prepare_input, train, _to_nchw)
from .saliency import AttentionMap, binarize_q3, fallback_saliency, read_attention
from .scalest import ScaleModel, estimate_scale, grid_search_scale, product_r10

DEFAULT_RESOLUTION = 256
ATTENTION_SUFFIX = ".earattn"
TIMING_FIELDS = ("wall_clock_sec",)


@dataclass(frozen=True)
class DatasetSpec:
    """Resolved dataset layout for one category."""

    root: Path
    category: str
    kind: str
    train_paths: tuple
    test_paths: tuple  # of (path, label) with label in {normal, anomalous}
    attn_dir: Path | None = None


def scan_dataset(root, category: str, kind: str = "objects", attn_dir=None) -> DatasetSpec:
    """Scan category/train/good and category/test/*; paths sorted lexicographically."""
    root = Path(root)
    base = root / category
    train_dir = base / "train" / "good"
    if not train_dir.is_dir():
        raise FileNotFoundError(f"missing train/good directory: {train_dir}")
    train_paths = tuple(sorted(train_dir.glob("*.png")))
    if not train_paths:
        raise ValueError(f"no training images in {train_dir}")
    test_dir = base / "test"
    if not test_dir.is_dir():
        raise FileNotFoundError(f"missing test directory: {test_dir}")
    test_paths = []
    for sub in sorted(p for p in test_dir.iterdir() if p.is_dir()):
        label = "normal" if sub.name == "good" else "anomalous"
        for p in sorted(sub.glob("*.png")):
            test_paths.append((p, label))
    labels = {label for _, label in test_paths}
    if "normal" not in labels:
        raise ValueError(f"test set has no test/good images; AUROC undefined: {test_dir}")
    if "anomalous" not in labels:
        raise ValueError(f"test set has no anomalous images; AUROC undefined: {test_dir}")
    return DatasetSpec(
        root=root,
        category=category,
        kind=kind,
        train_paths=train_paths,
        test_paths=tuple(test_paths),
        attn_dir=Path(attn_dir) if attn_dir else None,
    )


def load_image_resized(path, resolution: int | None) -> Image:
    """Load a PNG and bilinearly resize to the working resolution."""
    p = Path(path)
    with _PILImage.open(p) as im:
        im.load()
        if im.mode not in ("L", "RGB"):
            raise ValueError(f"unsupported image mode {im.mode!r}: {p}")
        if resolution is not None and im.size != (resolution, resolution):
            im = im.resize((resolution, resolution), _PILImage.Resampling.BILINEAR)
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return Image(arr.astype(np.float32) / np.float32(255.0))


def attention_for(spec: DatasetSpec, img_path) -> AttentionMap | None:
    """Look up the attention file mirroring an image stem, if present."""
    if spec.attn_dir is None:
        return None
    rel = Path(img_path).relative_to(spec.root / spec.category)
    candidate = spec.attn_dir / rel.with_suffix(ATTENTION_SUFFIX)
    if not candidate.exists():
        return None
    return read_attention(candidate)


def _load_split(spec: DatasetSpec, paths, resolution: int):
    """Images plus attention maps (None where the stem is missing)."""
    images, attns, fallback_count = [], [], 0
    for p in paths:
        images.append(load_image_resized(p, resolution))
        attn = attention_for(spec, p)
        if attn is None and spec.attn_dir is not None:
            fallback_count += 1
        attns.append(attn)
    return images, attns, fallback_count


def score_image(model: ReconModel, img: Image, scale: int, metric_cfg: MetricConfig,
                hint: bool = True, attention: bool = True,
                attn: AttentionMap | None = None) -> tuple[float, DistanceMap]:
    """Score one image: corrupt, reconstruct, MSGMS distance map, max."""
    iprime, _ = prepare_input(img, scale, attn, hint=hint, attention=attention)
    x = Tensor(_to_nchw(iprime)[None])
    out = model.forward(x, training=False).data[0].transpose(1, 2, 0)
    ihat = Image(np.clip(out, 0.0, 1.0).astype(np.float32))
    dmap = msgms_distance(img, ihat, metric_cfg)
    return anomaly_score(dmap, metric_cfg), dmap


def evaluate_checkpoint(ckpt: Checkpoint, spec: DatasetSpec,
                        resolution: int = DEFAULT_RESOLUTION) -> dict:
    """Score the test split with a frozen checkpoint and compute AUROC."""
    model = model_from_checkpoint(ckpt)
    hint = bool(ckpt.extra.get("hint", True))
    attention = bool(ckpt.extra.get("attention", True))
    rows = []
    normal_scores, anomaly_scores = [], []
    fallback_count = 0
    for p, label in spec.test_paths:
        img = load_image_resized(p, resolution)
        attn = attention_for(spec, p)
        if attn is None and spec.attn_dir is not None:
            fallback_count += 1
        score, _ = score_image(model, img, ckpt.scale, ckpt.metric_cfg,
                               hint=hint, attention=attention, attn=attn)
        rows.append({"path": str(p), "label": label, "score": score})
        (normal_scores if label == "normal" else anomaly_scores).append(score)
    return {
        "category": spec.category,
        "kind": spec.kind,
        "scale": ckpt.scale,
        "auroc": auroc(normal_scores, anomaly_scores),
        "n_normal": len(normal_scores),
        "n_anomalous": len(anomaly_scores),
        "fallback_count": fallback_count,
        "images": rows,
    }


def heatmap_lut() -> np.ndarray:
    """256-entry overlay LUT: red with opacity i/255 (0 transparent, 255 solid)."""
    lut = np.zeros((256, 4), dtype=np.float64)
    lut[:, 0] = 1.0
    lut[:, 3] = np.arange(256) / 255.0
    return lut


_HEATMAP_LUT = heatmap_lut()


def emit_heatmap(img: Image, dmap: DistanceMap, path) -> None:
    """Blend the input with the distance map through the fixed red LUT."""
    if (dmap.d.shape[0], dmap.d.shape[1]) != (img.height, img.width):
        raise ValueError("distance map dims do not match image")
    idx = np.clip(np.rint(dmap.d * 255.0), 0, 255).astype(np.intp)
    alpha = _HEATMAP_LUT[idx, 3][:, :, None]
    color = _HEATMAP_LUT[idx, :3]
    rgb = img.data.astype(np.float64)
    if img.channels == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    save_png(rgb * (1.0 - alpha) + color * alpha, path)


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs, loadable from a TOML file."""

    root: Path
    category: str
    kind: str = "objects"
    attn_dir: Path | None = None
    resolution: int = DEFAULT_RESOLUTION
    train: TrainConfig = TrainConfig()
    model_base: int = 8
    metric: MetricConfig = MetricConfig()
    weights: LossWeights = LossWeights()
    hint: bool = True
    attention: bool = True
    scale_mode: str = "fixed"  # fixed | estimate | grid-search
    scale_m: int = 8
    scale_model: ScaleModel | None = None
    presmooth_sigma: float = 1.0
    checkpoint_path: Path | None = None
    report_path: Path | None = None

    def __post_init__(self):
        if self.scale_mode not in ("fixed", "estimate", "grid-search"):
            raise ValueError(f"scale mode must be fixed/estimate/grid-search, got {self.scale_mode!r}")
        if self.resolution % 32 != 0:
            raise ValueError(f"working resolution must be divisible by 32, got {self.resolution}")


def run_config_from_dict(cfg: dict, base_dir: Path | None = None,
                         seed_override: int | None = None) -> RunConfig:
    """Build a RunConfig from parsed TOML; relative paths resolve against base_dir."""
    def _path(value):
        if value is None:
            return None
        p = Path(value)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return p

    data = cfg.get("data", {})
    train_kw = dict(cfg.get("train", {}))
    if seed_override is not None:
        train_kw["seed"] = seed_override
    scale = cfg.get("scale", {})
    model_cfg = cfg.get("model", {})
    output = cfg.get("output", {})
    scale_model = None
    if "slope" in scale and "intercept" in scale:
        scale_model = ScaleModel(slope=float(scale["slope"]), intercept=float(scale["intercept"]),
                                 category=data.get("kind", "objects"))
    return RunConfig(
        root=_path(data.get("root", ".")),
        category=data["category"],
        kind=data.get("kind", "objects"),
        attn_dir=_path(data.get("attn_dir")),
        resolution=int(data.get("resolution", DEFAULT_RESOLUTION)),
        train=TrainConfig(**train_kw),
        model_base=int(model_cfg.get("base", 8)),
        metric=MetricConfig(**cfg.get("metric", {})),
        weights=LossWeights(**cfg.get("weights", {})),
        hint=bool(cfg.get("ablation", {}).get("hint", True)),
        attention=bool(cfg.get("ablation", {}).get("attention", True)),
        scale_mode=scale.get("mode", "fixed"),
        scale_m=int(scale.get("m", 8)),
        scale_model=scale_model,
        presmooth_sigma=float(scale.get("presmooth_sigma", 1.0)),
        checkpoint_path=_path(output.get("checkpoint")),
        report_path=_path(output.get("report")),
    )


def table2_grid(base: TrainConfig) -> list[TrainConfig]:
    """The tuned-hyperparameter grid: kernel x learning rate x schedule."""
    from .reconnet import KERNEL_CHOICES, LR_CHOICES, SCHEDULE_CHOICES

    return [replace(base, kernel=k, lr=lr, schedule=s)
            for k, lr, s in itertools.product(KERNEL_CHOICES, LR_CHOICES, SCHEDULE_CHOICES)]


def _masks_for(images, attns):
    return [binarize_q3(attn if attn is not None else fallback_saliency(img),
                        img.height, img.width)
            for img, attn in zip(images, attns)]


def resolve_scale(cfg: RunConfig, images, attns) -> tuple[int, float | None]:
    """Fixed scale or the regression estimate from the training split."""
    if cfg.scale_mode == "fixed":
        return cfg.scale_m, None
    if cfg.scale_mode == "estimate":
        if cfg.scale_model is None:
            raise ValueError("scale mode 'estimate' needs model coefficients (slope/intercept)")
        masks = _masks_for(images, attns)
        r10_value = product_r10(list(zip(images, masks)), cfg.presmooth_sigma)
        return estimate_scale(cfg.scale_model, r10_value).value, r10_value
    raise ValueError(f"scale mode {cfg.scale_mode!r} is not resolved here")


@dataclass
class ExperimentReport:
    """One row per run; `best` is the highest-AUROC row."""

    rows: list = field(default_factory=list)
    best_index: int = 0

    @property
    def best(self) -> dict:
        return self.rows[self.best_index]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.rows)


def strip_timing(report_text: str) -> str:
    """Drop wall-clock fields so reports can be compared byte-for-byte."""
    lines = []
    for line in report_text.splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        for key in TIMING_FIELDS:
            row.pop(key, None)
        lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + "\n"


def _train_once(cfg: RunConfig, train_cfg: TrainConfig, images, attns, scale: int):
    model = ReconModel(in_channels=images[0].channels, base=cfg.model_base,
                       kernel=train_cfg.kernel, seed=train_cfg.seed)
    return train(model, images, scale, train_cfg, metric_cfg=cfg.metric,
                 loss_weights=cfg.weights, attention_maps=attns,
                 hint=cfg.hint, attention=cfg.attention)


def run_experiment(spec: DatasetSpec, cfg: RunConfig,
                   train_cfgs: list[TrainConfig] | None = None) -> ExperimentReport:
    """Train and evaluate each config; report every run plus the best one.

    Scale mode "estimate" runs the edge-response pipeline on the training
    split; "grid-search" trains once per candidate scale with the first
    config and keeps the AUROC argmax (ties to the smaller scale).
    """
    cfgs = train_cfgs if train_cfgs is not None else [cfg.train]
    images, attns, fallback_train = _load_split(spec, spec.train_paths, cfg.resolution)

    r10_value = None
    scale_table = None
    if cfg.scale_mode == "grid-search":
        def evaluate(m: int) -> float:
            ckpt, _ = _train_once(cfg, cfgs[0], images, attns, m)
            return evaluate_checkpoint(ckpt, spec, cfg.resolution)["auroc"]

        scale, scale_table = grid_search_scale(evaluate, ALLOWED_SCALES)
    else:
        scale, r10_value = resolve_scale(cfg, images, attns)

    report = ExperimentReport()
    best_auroc = -1.0
    for run_id, train_cfg in enumerate(cfgs):
        started = time.perf_counter()
        ckpt, curve = _train_once(cfg, train_cfg, images, attns, scale)
        evaluation = evaluate_checkpoint(ckpt, spec, cfg.resolution)
        row = {
            "run_id": run_id,
            "category": spec.category,
            "kind": spec.kind,
            "scale_mode": cfg.scale_mode,
            "scale": scale,
            "r10": r10_value,
            "scale_table": scale_table,
            "config": asdict(train_cfg),
            "ablation": {"hint": cfg.hint, "attention": cfg.attention},
            "auroc": evaluation["auroc"],
            "n_train": len(images),
            "n_test_normal": evaluation["n_normal"],
            "n_test_anomalous": evaluation["n_anomalous"],
            "fallback_count": fallback_train + evaluation["fallback_count"],
            "loss_first": curve[0],
            "loss_final": curve[-1],
            "loss_curve": curve,
            "seed": train_cfg.seed,
            "wall_clock_sec": time.perf_counter() - started,
        }
        report.rows.append(row)
        if evaluation["auroc"] > best_auroc:
            best_auroc = evaluation["auroc"]
            report.best_index = run_id
        row["checkpoint"] = ckpt
    return report


def write_report(report: ExperimentReport, path) -> None:
    rows = []
    for row in report.rows:
        clean = {k: v for k, v in row.items() if k != "checkpoint"}
        rows.append(json.dumps(clean, sort_keys=True))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
