"""Acceptance gate: every criterion runs at its stated tolerance and prints
one pass/fail line (run with `pytest tests/test_acceptance.py -v -s`)."""

import json
import os
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ear.imagecore import GrayImage, Image
from ear.metrics import auroc, gms_map, lamp, msgms_distance
from ear.obfuscate import compose_hint, mosaic
from ear.reconnet import gradcheck_battery
from ear.saliency import AttentionMap, SaliencyMask, binarize_q3, read_attention
from ear.scalest import ScaleModel, edge_response, estimate_scale, fit_scale_model
from ear.harness import strip_timing


def _report(name: str, elapsed: float, bound: float) -> None:
    print(f"[PASS] {name}: {elapsed:.2f}s (bound {bound:g}s)")


class TestCompositingIdentities:
    def test_eq1_compositing_identities(self):
        started = time.perf_counter()
        rng = np.random.default_rng(1001)
        for trial in range(100):
            h, w = 32, 32
            img = Image(rng.uniform(0, 1, (h, w, 3)).astype(np.float32))
            m = int(rng.choice([2, 4, 8, 16]))
            zeros = SaliencyMask(np.zeros((h, w), dtype=np.uint8))
            ones = SaliencyMask(np.ones((h, w), dtype=np.uint8))
            np.testing.assert_array_equal(compose_hint(img, m, zeros).data, img.data)
            np.testing.assert_array_equal(compose_hint(img, m, ones).data, mosaic(img, m).data)
            bits = (rng.uniform(size=(h, w)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
            s = SaliencyMask(bits)
            lhs = (compose_hint(img, m, s).data
                   + compose_hint(img, m, s.complement()).data
                   - mosaic(img, m).data)
            np.testing.assert_allclose(lhs, img.data, atol=1e-6)
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0
        _report("eq1-compositing-identities", elapsed, 1.0)


class TestMaskDeterminism:
    def test_mask_determinism_and_affine_invariance(self):
        started = time.perf_counter()
        rng = np.random.default_rng(1002)
        for trial in range(100):
            gh, gw = int(rng.integers(4, 24)), int(rng.integers(4, 24))
            scores = rng.uniform(0, 1, (gh, gw)).astype(np.float32)
            if trial % 3 == 0:
                scores = rng.exponential(1.0, (gh, gw)).astype(np.float32)
            amap = AttentionMap(scores)
            first = binarize_q3(amap, 48, 48)
            again = binarize_q3(amap, 48, 48)
            assert first.bits.tobytes() == again.bits.tobytes()
            a = float(rng.uniform(0.1, 10.0))
            b = float(rng.uniform(0.0, 5.0))
            scaled = binarize_q3(AttentionMap(a * scores + b), 48, 48)
            np.testing.assert_array_equal(first.bits, scaled.bits)
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0
        _report("mask-determinism-affine-invariance", elapsed, 1.0)


class TestEdgeResponseAnalytics:
    def test_edge_response_analytics(self):
        started = time.perf_counter()
        ys, xs = np.mgrid[0:11, 0:11].astype(np.float64)
        interior = np.s_[1:-1, 1:-1]

        paraboloid = edge_response(GrayImage(xs ** 2 + ys ** 2), presmooth_sigma=0.0)
        assert (paraboloid.valid[interior] == 1).all()
        np.testing.assert_allclose(paraboloid.r[interior], 4.0, atol=1e-9)

        saddle = edge_response(GrayImage(xs * ys), presmooth_sigma=0.0)
        assert (saddle.valid[interior] == 0).all()

        degenerate = edge_response(GrayImage(xs ** 2), presmooth_sigma=0.0)
        assert (degenerate.valid[interior] == 0).all()
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0
        _report("edge-response-analytics", elapsed, 1.0)


class TestQuantizationRegression:
    def test_quantization_and_regression(self):
        started = time.perf_counter()
        model = fit_scale_model([(1.0, 3), (2.0, 5)])
        assert model.slope == pytest.approx(2.0, abs=1e-12)
        assert model.intercept == pytest.approx(1.0, abs=1e-12)

        wood_like = ScaleModel(slope=-9.6, intercept=68.3)
        assert wood_like.slope * 7.4 + wood_like.intercept < 2
        assert estimate_scale(wood_like, 7.4).value == 2

        identity = ScaleModel(slope=1.0, intercept=0.0)
        assert estimate_scale(identity, 20.0).value == 16
        assert estimate_scale(identity, 100.0).value == 64
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0
        _report("quantization-regression", elapsed, 1.0)


class TestMetricSuite:
    def test_metric_suite(self):
        started = time.perf_counter()
        rng = np.random.default_rng(1003)

        for _ in range(25):
            a = GrayImage(rng.uniform(0, 1, (9, 9)))
            b = GrayImage(rng.uniform(0, 1, (9, 9)))
            ab = gms_map(a, b, 0.0026).data
            np.testing.assert_array_equal(ab, gms_map(b, a, 0.0026).data)
            assert (ab > 0).all() and (ab <= 1.0).all()

        img = Image(rng.uniform(0, 1, (16, 16, 3)).astype(np.float32))
        np.testing.assert_array_equal(msgms_distance(img, img).d, np.zeros((16, 16)))

        assert lamp(0.5) == pytest.approx(0.693147, abs=1e-6)
        assert lamp(1.0, eps=1e-6) == pytest.approx(13.815511, abs=1e-4)

        for _ in range(1000):
            n = int(rng.integers(1, 201))
            m = int(rng.integers(1, 201))
            normal = rng.integers(0, 40, n) / 8.0
            anomaly = rng.integers(0, 40, m) / 8.0
            got = auroc(normal, anomaly)
            wins = (anomaly[None, :] > normal[:, None]).sum()
            ties = (anomaly[None, :] == normal[:, None]).sum()
            want = (wins + 0.5 * ties) / (n * m)
            assert abs(got - want) <= 1e-12
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0
        _report("metric-suite", elapsed, 30.0)


class TestGradcheck:
    def test_gradcheck_all_primitives(self):
        started = time.perf_counter()
        cases = gradcheck_battery(seed=2024)
        assert len(cases) >= 20
        failures = [f"{c['name']} err={c['error']:.2e} tol={c['tol']:.0e}"
                    for c in cases if not c["passed"]]
        assert failures == [], failures
        elapsed = time.perf_counter() - started
        assert elapsed < 120.0
        _report(f"gradcheck ({len(cases)} toy configurations)", elapsed, 120.0)


class TestDeskScaleEndToEnd:
    def test_desk_scale_end_to_end(self, e2e_runs):
        ear_rows = e2e_runs["ear"]
        ablation_rows = e2e_runs["wo_obf"]

        for row in ear_rows:
            assert row["scale"] in (2, 4, 8, 16, 32, 64)
            assert row["r10"] > 0
        ear_aurocs = [row["auroc"] for row in ear_rows]
        ablation_aurocs = [row["auroc"] for row in ablation_rows]
        ear_median = float(np.median(ear_aurocs))
        ablation_median = float(np.median(ablation_aurocs))

        assert ear_median >= 0.90, (ear_aurocs, ablation_aurocs)
        assert ear_median >= ablation_median, (ear_aurocs, ablation_aurocs)
        elapsed = e2e_runs["elapsed_sec"]
        assert elapsed < 600.0
        print(f"    EAR aurocs={['%.3f' % a for a in ear_aurocs]} median={ear_median:.3f}; "
              f"w/o-obf median={ablation_median:.3f}; m_hat={ear_rows[0]['scale']}")
        _report("desk-scale-end-to-end", elapsed, 600.0)

    def test_training_scores_separate_from_anomalies(self, e2e_runs):
        # median over seeds: max train-split score <= max anomalous test score
        train_max = np.median(e2e_runs["train_score_max"])
        anomaly_max = np.median(e2e_runs["anomaly_score_max"])
        assert train_max <= anomaly_max
        print(f"[PASS] train/anomaly separation: {train_max:.3f} <= {anomaly_max:.3f}")


class TestCliDeterminism:
    def test_cli_train_eval_byte_identical(self, disc_dataset, tmp_path):
        started = time.perf_counter()
        small_root = tmp_path / "data"
        from synthdata import write_dataset

        write_dataset(small_root, category="disc", seed=7, n_train=12,
                      n_test_normal=4, n_test_anomalous=4)
        outputs = []
        env = dict(os.environ, EAR_SEED="123")
        for run in range(2):
            run_dir = tmp_path / f"run{run}"
            run_dir.mkdir()
            config = run_dir / "run.toml"
            config.write_text(f"""
[data]
root = "{small_root}"
category = "disc"
resolution = 64

[train]
kernel = 3
lr = 1e-3
schedule = "fixed"
epochs = 4
batch = 4
seed = 0

[model]
base = 8

[scale]
mode = "fixed"
m = 16

[output]
checkpoint = "model.earckpt"
report = "train_report.jsonl"
""")
            subprocess.run([sys.executable, "-m", "ear.cli", "train", "--config", str(config)],
                           check=True, capture_output=True, env=env)
            eval_out = run_dir / "eval_report.jsonl"
            subprocess.run([sys.executable, "-m", "ear.cli", "eval",
                            "--ckpt", str(run_dir / "model.earckpt"),
                            "--data", str(small_root / "disc"),
                            "--out", str(eval_out)],
                           check=True, capture_output=True, env=env)
            outputs.append((
                strip_timing((run_dir / "train_report.jsonl").read_text()),
                strip_timing(eval_out.read_text()),
                (run_dir / "model.earckpt").read_bytes(),
            ))
        assert outputs[0][0] == outputs[1][0], "train reports differ"
        assert outputs[0][1] == outputs[1][1], "eval reports differ"
        assert outputs[0][2] == outputs[1][2], "checkpoints differ"
        elapsed = time.perf_counter() - started
        assert elapsed < 600.0
        _report("cli-determinism", elapsed, 600.0)


EXPORTER_DIR = Path(__file__).resolve().parents[1] / "attnexport"


class TestSecondaryExporterConformance:
    @pytest.mark.skipif(not (EXPORTER_DIR / "dist" / "cli.js").exists(),
                        reason="attention exporter not built (secondary component)")
    def test_exporter_files_conform(self, tmp_path):
        started = time.perf_counter()
        from synthdata import write_dataset

        root = tmp_path / "expdata"
        write_dataset(root, category="disc", seed=11, n_train=10,
                      n_test_normal=1, n_test_anomalous=1)
        image_dir = root / "disc" / "train" / "good"
        out_a = tmp_path / "outA"
        out_b = tmp_path / "outB"
        node = shutil.which("node")
        assert node is not None, "node runtime required for the exporter"
        for out_dir in (out_a, out_b):
            subprocess.run([node, str(EXPORTER_DIR / "dist" / "cli.js"),
                            "--images", str(image_dir), "--out", str(out_dir),
                            "--resolution", "64"],
                           check=True, capture_output=True)
        files = sorted(out_a.glob("*.earattn"))
        assert len(files) == 10
        for f in files:
            amap = read_attention(f)
            assert (amap.height, amap.width) == (8, 8)  # 64 / 8
            assert amap.scores.min() >= 0.0 and amap.scores.max() <= 1.0
            twin = out_b / f.name
            assert f.read_bytes() == twin.read_bytes(), f"re-export differs for {f.name}"
        manifest = json.loads((out_a / "manifest.json").read_text())
        assert len(manifest["images"]) == 10
        elapsed = time.perf_counter() - started
        assert elapsed < 120.0
        _report("secondary-exporter-conformance", elapsed, 120.0)
