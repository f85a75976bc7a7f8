import numpy as np
import pytest
import torch

from lffont.decomposition import load_table, table_from_mapping
from lffont.glyphset import DatasetManifest, GlyphImage, ManifestConfig, StyleId, build_manifest, write_corpus
from lffont.networks import ArchConfig, ModelBundle

torch.set_num_threads(1)

FIXTURE = {"A": ["p", "q"], "B": ["q", "r"], "C": ["p", "q", "q"], "D": ["r"]}


@pytest.fixture
def fixture_table():
    return table_from_mapping(FIXTURE)


class StubStore:
    """Hands out blank glyphs; enough for sampler logic."""

    def __init__(self, resolution=16):
        self.resolution = resolution

    def glyph(self, style, character, table=None):
        char = table.character(character) if table is not None else character
        return GlyphImage(np.ones((self.resolution, self.resolution), np.float32), style, char)


def fixture_manifest(table, n_styles=1, chars="ABCD", unseen=""):
    styles = [StyleId(i, f"s{i}", "train") for i in range(n_styles)]
    seen = [ord(c) for c in chars if c not in unseen]
    return DatasetManifest(
        resolution=16,
        styles=styles,
        source_style=styles[0],
        seen=seen,
        unseen=[ord(c) for c in unseen],
        fonts={s.name: "" for s in styles},
        available={s.name: [ord(c) for c in chars] for s in styles},
        table_fingerprint=table.fingerprint(),
        seed=0,
        dropped={},
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """6 synthetic styles (4 train, 2 test), 60 characters, 32 px."""
    root = tmp_path_factory.mktemp("corpus")
    font_dir, table_path = write_corpus(root / "src", 6, 60, 14, seed=3)
    table = load_table(table_path)
    manifest = build_manifest(font_dir, table, ManifestConfig(resolution=32, n_test_styles=2, seed=3),
                              out_dir=root / "data")
    return manifest, table


TINY_ARCH = dict(resolution=32, base=8, n_down=2, disc_base=8, disc_layers=3, k=4, norm="in")


@pytest.fixture
def tiny_arch():
    return ArchConfig(**TINY_ARCH)


@pytest.fixture
def tiny_bundle(tiny_corpus):
    manifest, table = tiny_corpus
    return ModelBundle(ArchConfig(**TINY_ARCH), table.n_components, len(manifest.train_styles), len(table),
                       table.fingerprint(), seed=0)


DESK_SEED = 0
DESK_EVALUATOR_HELDOUT_ACC = 0.90


@pytest.fixture(scope="session")
def desk_run():
    """Desk-scale trained run (cached; trains on first use)."""
    from lffont.desk import DeskConfig, train
    cfg = DeskConfig(seed=DESK_SEED)
    run = train(cfg)
    bundle, _ = run.bundle()
    return cfg, run, bundle


@pytest.fixture(scope="session")
def content_evaluator(desk_run):
    """Content classifier on real glyphs of all but the last test style.

    Returns (classifier, accuracy on 50 characters of the held-out test style).
    """
    from lffont.evalsuite import EvalConfig, accuracy, train_eval_classifier
    _, run, _ = desk_run
    m, table, store = run.manifest, run.table, run.store
    styles = m.test_styles
    glyphs = [store.glyph(s, c, table) for s in styles[:-1] for c in m.available_chars(s)]
    clf = train_eval_classifier("content", glyphs, EvalConfig(seed=DESK_SEED))
    rng = np.random.default_rng(DESK_SEED)
    chars = sorted(rng.choice(m.available_chars(styles[-1]), size=50, replace=False).tolist())
    return clf, accuracy(clf, [store.glyph(styles[-1], c, table) for c in chars])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        name, ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
