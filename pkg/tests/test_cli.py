import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from PIL import Image

from lffont.cli import main
from lffont.config import ConfigError, RunConfig
from lffont.glyphset import DatasetManifest, GlyphStore
from lffont.decomposition import load_table
from conftest import TINY_ARCH


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["build-dataset", "--synthetic", "--out", str(data), "--resolution", "32", "--n-styles", "6",
                 "--n-chars", "40", "--n-components", "12", "--n-test-styles", "2", "--seed", "2"]) == 0
    cfg = {"manifest": "data/manifest.json", "out": "run", "seed": 0,
           "arch": {k: v for k, v in TINY_ARCH.items() if k != "resolution"},
           "train": {"phase1_iters": 1, "phase2_iters": 1, "batch_size": 2, "log_every": 0},
           "eval": {"epochs": 1, "width": 8}}
    (root / "run.yaml").write_text(yaml.safe_dump(cfg))
    assert main(["train", "--config", str(root / "run.yaml")]) == 0
    manifest = DatasetManifest.load(data / "manifest.json")
    table = load_table(data / "table.tsv")
    store = GlyphStore(manifest)
    refs = root / "refs"
    refs.mkdir()
    style = manifest.train_styles[0]
    chars = manifest.available_chars(style, manifest.seen)
    for cp in chars[:3]:
        g = store.glyph(style, cp, table)
        Image.fromarray(((g.pixels + 1) * 127.5).round().astype(np.uint8)).save(refs / f"{cp:04x}.png")
    return root, manifest, table, chars


def test_help_exits_zero():
    r = subprocess.run([sys.executable, "-m", "lffont.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "generate" in r.stdout


def test_unknown_subcommand_exits_two():
    r = subprocess.run([sys.executable, "-m", "lffont.cli", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 2


def test_train_outputs(workspace):
    root, *_ = workspace
    run = root / "run"
    assert (run / "phase1.pt").exists() and (run / "final.pt").exists()
    lines = (run / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["phase"] for x in lines] == [1, 2]
    resolved = json.loads((run / "config.resolved.json").read_text())
    assert resolved["train_resolved"]["arch"]["resolution"] == 32


def test_generate(workspace, tmp_path):
    root, manifest, table, chars = workspace
    chars_text = "".join(chr(c) for c in chars[5:9])
    assert main(["generate", "--ckpt", str(root / "run" / "final.pt"), "--manifest", str(root / "data" / "manifest.json"),
                 "--refs", str(root / "refs"), "--chars", chars_text, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["generated"] == 4
    assert (tmp_path / "grid.png").exists()
    assert (tmp_path / f"{chars[5]:04x}.png").exists()


def test_generate_pred_and_cross_lingual(workspace, tmp_path):
    root, manifest, table, chars = workspace
    base = ["--ckpt", str(root / "run" / "final.pt"), "--manifest", str(root / "data" / "manifest.json"),
            "--refs", str(root / "refs"), "--chars", chr(chars[6])]
    assert main(["generate", *base, "--labels", "pred", "--out", str(tmp_path / "p")]) == 0
    assert main(["generate", *base, "--cross-lingual", "--out", str(tmp_path / "x")]) == 0
    assert (tmp_path / "x" / f"{chars[6]:04x}.png").exists()


def test_interpolate_and_mix(workspace, tmp_path):
    root, manifest, table, chars = workspace
    base = ["--ckpt", str(root / "run" / "final.pt"), "--manifest", str(root / "data" / "manifest.json")]
    assert main(["interpolate", *base, "--refs", str(root / "refs"), "--char-a", f"U+{chars[5]:04X}",
                 "--char-b", f"{chars[6]:04x}", "--steps", "3", "--out", str(tmp_path / "i")]) == 0
    assert len(list((tmp_path / "i").glob("step*.png"))) == 3
    assert main(["interpolate", *base, "--refs", str(root / "refs"), "--refs-b", str(root / "refs"),
                 "--char", chr(chars[7]), "--steps", "2", "--out", str(tmp_path / "s")]) == 0
    x1, x2 = sorted((root / "refs").glob("*.png"))[:2]
    assert main(["mix", *base, "--x1", str(x1), "--x2", str(x2), "--lam", "0.25", "--mode", "character",
                 "--out", str(tmp_path / "m")]) == 0
    info = json.loads((tmp_path / "m" / "label.json").read_text())
    assert sorted(info["label"].values()) == [0.25, 0.75]


def test_evaluate(workspace, tmp_path):
    root, *_ = workspace
    out = tmp_path / "eval.json"
    assert main(["evaluate", "--ckpt", str(root / "run" / "final.pt"), "--config", str(root / "run.yaml"),
                 "--n-ref", "3", "--repeats", "1", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["config"]["repeats"] == 1
    assert 0 <= report["seen"]["acc_content"] <= 1


def test_decomp(workspace, capsys):
    root, manifest, table, chars = workspace
    assert main(["decomp", "--table", str(root / "data" / "table.tsv")]) == 0
    assert "40 characters" in capsys.readouterr().out
    assert main(["decomp", "--table", str(root / "data" / "table.tsv"), "--char", f"U+{chars[0]:04X}"]) == 0
    assert main(["decomp", "--table", str(root / "data" / "table.tsv"), "--frequency"]) == 0


def test_augment_train(workspace, tmp_path):
    root, *_ = workspace
    out = tmp_path / "aug.json"
    assert main(["augment-train", "--config", str(root / "run.yaml"), "--mode", "cutmix", "--epochs", "1",
                 "--n-chars", "5", "--images-per-char", "2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mode"] == "cutmix"


def test_errors_are_one_line(workspace, tmp_path, capsys):
    root, *_ = workspace
    rc = main(["generate", "--ckpt", str(tmp_path / "missing.pt"), "--manifest", str(root / "data" / "manifest.json"),
               "--refs", str(root / "refs"), "--all", "--out", str(tmp_path / "g")])
    assert rc == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("lffont generate: error:")
    assert main(["augment-train", "--config", str(root / "run.yaml"), "--mode", "fontmix-both",
                 "--out", str(tmp_path / "a.json")]) == 1


def test_config_file_validation(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("trian: {}\n")
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.load(bad)
    cfg = RunConfig(arch={"k": 0})
    with pytest.raises(ConfigError):
        cfg.arch_config(64)
    with pytest.raises(ConfigError):
        RunConfig().override(colour="red")
    good = tmp_path / "c.json"
    good.write_text(json.dumps({"manifest": "m.json", "train": {"phase1_iters": 3}}))
    cfg = RunConfig.load(good).override(phase2_iters=4)
    assert cfg.manifest == str((tmp_path / "m.json").resolve())
    tc = cfg.train_config(64)
    assert (tc.phase1_iters, tc.phase2_iters, tc.arch.norm) == (3, 4, "in")
