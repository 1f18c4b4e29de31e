import json

import numpy as np
import pytest
from PIL import Image as PILImage

from ear.cli import main
from ear.imagecore import load_image
from ear.reconnet import load_checkpoint
from ear.saliency import AttentionMap, write_attention

from test_harness import make_tree, write_png


def write_config(path, root, category="widget", scale_mode="fixed", extra_scale=None,
                 report="report.jsonl", ckpt="model.earckpt"):
    scale_lines = {"fixed": 'mode = "fixed"\nm = 4',
                   "grid-search": 'mode = "grid-search"'}[scale_mode]
    if extra_scale:
        scale_lines += "\n" + extra_scale
    path.write_text(f"""
[data]
root = "{root}"
category = "{category}"
resolution = 32

[train]
kernel = 3
lr = 1e-3
schedule = "fixed"
epochs = 1
batch = 4
seed = 3

[model]
base = 4

[scale]
{scale_lines}

[output]
checkpoint = "{ckpt}"
report = "{report}"
""")
    return path


class TestTrainEvalScore:
    def test_train_eval_score_round_trip(self, tmp_path, capsys):
        make_tree(tmp_path, n_train=4)
        cfg_path = write_config(tmp_path / "run.toml", tmp_path)
        assert main(["train", "--config", str(cfg_path)]) == 0
        ckpt_path = tmp_path / "model.earckpt"
        assert ckpt_path.exists()
        ckpt = load_checkpoint(ckpt_path)
        assert ckpt.extra["resolution"] == 32
        report_lines = (tmp_path / "report.jsonl").read_text().strip().splitlines()
        assert len(report_lines) == 1
        assert 0.0 <= json.loads(report_lines[0])["auroc"] <= 1.0
        capsys.readouterr()

        rc = main(["eval", "--ckpt", str(ckpt_path), "--data", str(tmp_path / "widget"),
                   "--out", str(tmp_path / "eval.jsonl")])
        assert rc == 0
        out_lines = capsys.readouterr().out.strip().splitlines()
        summary = json.loads(out_lines[-1])
        assert summary["n_normal"] == 2 and summary["n_anomalous"] == 2
        assert "auroc" in summary

        rc = main(["score", "--ckpt", str(ckpt_path),
                   "--image", str(tmp_path / "widget" / "test" / "good" / "000.png"),
                   "--heatmap", str(tmp_path / "heat.png")])
        assert rc == 0
        line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(line) == {"path", "score"}
        assert (tmp_path / "heat.png").exists()


class TestPreprocess:
    def test_writes_iprime_and_mask(self, tmp_path, capsys):
        write_png(tmp_path / "img.png", size=32, seed=9)
        attn_path = tmp_path / "img.earattn"
        rng = np.random.default_rng(0)
        write_attention(AttentionMap(rng.uniform(0, 1, (4, 4)).astype(np.float32)), attn_path)
        rc = main(["preprocess", "--image", str(tmp_path / "img.png"),
                   "--attn", str(attn_path), "--scale", "4",
                   "--out-dir", str(tmp_path / "out")])
        assert rc == 0
        iprime = load_image(tmp_path / "out" / "img.iprime.png")
        mask = np.asarray(PILImage.open(tmp_path / "out" / "img.mask.png"))
        assert iprime.height == 32
        assert set(np.unique(mask)) <= {0, 255}


class TestScaleModelCommands:
    def test_fit_then_estimate(self, tmp_path, capsys):
        csv_path = tmp_path / "pairs.csv"
        csv_path.write_text(
            "product,category,r10,mStar\n"
            "hazelnut,objects,0.5,64\n"
            "bottle,objects,3.7,32\n"
            "pill,objects,6.7,4\n"
            "zipper,objects,7.4,2\n"
            "carpet,textures,1.0,64\n"
            "wood,textures,5.0,8\n"
        )
        model_path = tmp_path / "model.json"
        assert main(["fit-scale-model", "--pairs", str(csv_path), "--out", str(model_path)]) == 0
        blob = json.loads(model_path.read_text())
        assert set(blob) == {"objects", "textures"}
        assert blob["objects"]["slope"] < 0
        capsys.readouterr()

        make_tree(tmp_path, n_train=3)
        rc = main(["estimate-scale", "--data", str(tmp_path / "widget"),
                   "--resolution", "32", "--model", str(model_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "r10 =" in out and "m_hat =" in out

    def test_estimate_without_model_prints_r10_only(self, tmp_path, capsys):
        make_tree(tmp_path, n_train=3)
        rc = main(["estimate-scale", "--data", str(tmp_path / "widget"), "--resolution", "32"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "r10 =" in out and "no scale model" in out


class TestGridSearchMosaic:
    def test_prints_table_and_choice(self, tmp_path, capsys):
        make_tree(tmp_path, n_train=4)
        cfg_path = write_config(tmp_path / "run.toml", tmp_path, scale_mode="grid-search")
        rc = main(["grid-search-mosaic", "--config", str(cfg_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "m* =" in out
        assert out.count("auroc=") == 6


class TestGradcheckCommand:
    def test_exits_zero_and_prints_lines(self, capsys):
        rc = main(["gradcheck"])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") >= 20
        assert "[FAIL]" not in out


class TestSeedOverride:
    def test_env_seed_applies(self, tmp_path, monkeypatch, capsys):
        make_tree(tmp_path, n_train=4)
        cfg_path = write_config(tmp_path / "run.toml", tmp_path)
        monkeypatch.setenv("EAR_SEED", "17")
        assert main(["train", "--config", str(cfg_path)]) == 0
        row = json.loads((tmp_path / "report.jsonl").read_text().splitlines()[0])
        assert row["seed"] == 17
        capsys.readouterr()
