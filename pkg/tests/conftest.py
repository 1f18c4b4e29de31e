import numpy as np
import pytest

from ear.harness import RunConfig, run_experiment, scan_dataset, score_image
from ear.reconnet import TrainConfig, model_from_checkpoint
from ear.scalest import ScaleModel

from synthdata import write_dataset

E2E_SEEDS = (0, 1, 2)
E2E_EPOCHS = 30
# chosen so the measured disc-product r10 (a few hundred) lands the estimate
# in the quantization bin of 16
E2E_SCALE_MODEL = ScaleModel(slope=-0.04, intercept=24.0, category="objects")


@pytest.fixture(scope="session")
def disc_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("discdata")
    write_dataset(root, category="disc", seed=100)
    return root


def _run_variant(root, seed: int, hint: bool):
    spec = scan_dataset(root, "disc")
    cfg = RunConfig(
        root=root,
        category="disc",
        resolution=64,
        train=TrainConfig(kernel=3, lr=1e-3, schedule="fixed", epochs=E2E_EPOCHS,
                          batch=4, seed=seed),
        model_base=8,
        hint=hint,
        scale_mode="estimate",
        scale_model=E2E_SCALE_MODEL,
    )
    report = run_experiment(spec, cfg)
    return report.best, spec


@pytest.fixture(scope="session")
def e2e_runs(disc_dataset):
    """Six desk-scale runs: full pipeline and the no-hint ablation, 3 seeds each."""
    import time

    from ear.harness import _load_split

    started = time.perf_counter()
    results = {"ear": [], "wo_obf": [], "train_score_max": [], "anomaly_score_max": []}
    for seed in E2E_SEEDS:
        row, spec = _run_variant(disc_dataset, seed, hint=True)
        results["ear"].append(row)
        # training-split scores with the run's own checkpoint (separation check)
        ckpt = row["checkpoint"]
        model = model_from_checkpoint(ckpt)
        train_images, train_attns, _ = _load_split(spec, spec.train_paths, 64)
        train_scores = [score_image(model, img, ckpt.scale, ckpt.metric_cfg,
                                    hint=True, attention=True, attn=attn)[0]
                        for img, attn in zip(train_images, train_attns)]
        test_images, test_attns, _ = _load_split(spec, [p for p, _ in spec.test_paths], 64)
        anomaly_scores = [score_image(model, img, ckpt.scale, ckpt.metric_cfg,
                                      hint=True, attention=True, attn=attn)[0]
                          for (img, attn), (_, label) in zip(zip(test_images, test_attns),
                                                             spec.test_paths)
                          if label == "anomalous"]
        results["train_score_max"].append(max(train_scores))
        results["anomaly_score_max"].append(max(anomaly_scores))
    for seed in E2E_SEEDS:
        row, _ = _run_variant(disc_dataset, seed, hint=False)
        results["wo_obf"].append(row)
    results["elapsed_sec"] = time.perf_counter() - started
    return results
