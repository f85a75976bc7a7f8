import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg
from scipy.stats import ortho_group

from lffont.evalsuite import (
    EvalClassifier,
    EvalConfig,
    EvalNet,
    MetricReport,
    accuracy,
    cutmix,
    cutmix_box,
    evaluate_run,
    fid,
    hmean,
    p_unseen,
    train_eval_classifier,
)
from lffont.glyphset import GlyphImage, GlyphStore, StyleId


def fid_closed_form(mu1, s1, mu2, s2):
    covmean = linalg.sqrtm(s1 @ s2).real
    return float(((mu1 - mu2) ** 2).sum() + np.trace(s1 + s2 - 2 * covmean))


def random_spd(d, rng):
    a = rng.normal(size=(d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


def test_eval_config_defaults():
    cfg = EvalConfig()
    assert (cfg.batch_size, cfg.lr, cfg.epochs) == (64, 2e-4, 20)


def test_cutmix_lam_one_unchanged():
    rng = np.random.default_rng(0)
    x = torch.randn(4, 1, 8, 8)
    y = torch.eye(4)
    x2, y2 = cutmix(x, y, 1.0, rng)
    assert torch.equal(x2, x) and torch.equal(y2, y)


def test_cutmix_label_matches_pasted_area():
    rng = np.random.default_rng(1)
    x = torch.stack([torch.full((1, 16, 16), float(i)) for i in range(4)])
    y = torch.eye(4)
    perm = torch.tensor([1, 2, 3, 0])
    x2, y2 = cutmix(x, y, 0.6, rng, perm=perm)
    for i in range(4):
        pasted = float((x2[i] == float(perm[i])).float().mean())
        assert y2[i, perm[i]].item() == pytest.approx(pasted)
        assert y2[i].sum().item() == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 64), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_cutmix_box_inside_image(size, lam, seed):
    y0, y1, x0, x1 = cutmix_box(size, lam, np.random.default_rng(seed))
    assert 0 <= y0 <= y1 <= size and 0 <= x0 <= x1 <= size


def test_fid_identical_sets():
    a = np.random.default_rng(0).normal(size=(200, 6))
    assert fid(a, a) < 1e-4


def test_fid_matches_closed_form():
    rng = np.random.default_rng(0)
    d = 4
    mu1, mu2 = rng.normal(size=d), rng.normal(size=d) + 1.0
    s1, s2 = random_spd(d, rng), random_spd(d, rng)
    a = rng.multivariate_normal(mu1, s1, size=200_000)
    b = rng.multivariate_normal(mu2, s2, size=200_000)
    want = fid_closed_form(mu1, s1, mu2, s2)
    assert abs(fid(a, b) - want) / want < 0.02


def test_fid_exact_on_population_moments():
    # with moments matched exactly the estimator has nothing to estimate
    rng = np.random.default_rng(3)
    d = 3
    s1, s2 = random_spd(d, rng), random_spd(d, rng)
    want = fid_closed_form(np.zeros(d), s1, np.zeros(d), s2)
    from lffont.evalsuite import _tr_sqrt_product
    got = np.trace(s1) + np.trace(s2) - 2 * _tr_sqrt_product(s1, s2)
    assert got == pytest.approx(want, rel=1e-8)


def test_fid_symmetry_and_rotation():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(300, 5)), rng.normal(size=(250, 5)) * 1.5 + 0.3
    assert fid(a, b) == fid(b, a)
    q = ortho_group.rvs(5, random_state=4)
    assert fid(a @ q, b @ q) == pytest.approx(fid(a, b), abs=1e-3)


def test_fid_small_samples():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(5, 10)), rng.normal(size=(6, 10))
    with pytest.raises(ValueError):
        fid(a, b, shrinkage=False)
    assert fid(a, b) >= 0
    assert np.isfinite(fid(a, b, shrinkage=True))
    with pytest.raises(ValueError):
        fid(a, rng.normal(size=(6, 3)))


def test_hmean():
    assert hmean(0, 0) == 0
    assert hmean(1, 1) == 1
    assert hmean(0.5, 1.0) == pytest.approx(2 / 3)


@settings(max_examples=100)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_hmean_bounds(a, b):
    h = hmean(a, b)
    assert min(a, b) - 1e-9 * max(a, b, 1) <= h <= (a + b) / 2 + 1e-9 * max(a, b, 1)


class FixedNet(torch.nn.Module):
    """Predicts class = round(mean pixel) clipped; features = per-row means."""

    def __init__(self, n):
        super().__init__()
        self.n = n

    def features(self, x):
        return x.mean(dim=(1, 3))

    def forward(self, x):
        idx = x.mean(dim=(1, 2, 3)).round().clamp(0, self.n - 1).long()
        return torch.nn.functional.one_hot(idx, self.n).float()


def glyphs_with_values(values, style="a"):
    sid = StyleId(0, style, "test")
    return [GlyphImage(np.full((8, 8), float(v), np.float32), sid, None) for v in values]


def test_accuracy_trivial_cases():
    clf = EvalClassifier("style", FixedNet(2), ["a", "b"])
    g = glyphs_with_values([0] * 10)
    assert accuracy(clf, g, ["a"] * 10) == 1.0
    assert accuracy(clf, g, ["b"] * 10) == 0.0
    assert accuracy(clf, g, ["a"] * 5 + ["b"] * 5) == 0.5
    with pytest.raises(ValueError):
        accuracy(clf, [])


def test_p_unseen_trivial_and_order():
    clf = EvalClassifier("style", FixedNet(3), ["seen", "u1", "u2"])
    g = glyphs_with_values([1, 2, 0, 0])
    assert p_unseen(clf, g[:2], ["u1", "u2"]) == 1.0
    assert p_unseen(clf, g[2:], ["u1", "u2"]) == 0.0
    assert p_unseen(clf, g, ["u1", "u2"]) == p_unseen(clf, g[::-1], ["u1", "u2"]) == 0.5
    with pytest.raises(ValueError):
        p_unseen(clf, [], ["u1"])


def test_metric_report_mean():
    r1 = MetricReport(1, 0, 0, 2, 2, 2, 0, n=3)
    r2 = MetricReport(0, 1, 0, 4, 2, 2, 1, n=5)
    m = MetricReport.mean([r1, r2])
    assert m.acc_style == 0.5 and m.fid_style == 3 and m.n == 8
    assert MetricReport.mean([r1]) is r1


def test_classifier_needs_two_classes(tiny_corpus):
    manifest, table = tiny_corpus
    store = GlyphStore(manifest)
    s = manifest.test_styles[0]
    one = [store.glyph(s, c, table) for c in manifest.available_chars(s)[:3]]
    with pytest.raises(ValueError):
        train_eval_classifier("style", one)
    with pytest.raises(ValueError):
        train_eval_classifier("shape", one)


def test_classifier_learns_easy_task(tiny_corpus):
    manifest, table = tiny_corpus
    store = GlyphStore(manifest)
    chars = manifest.characters[:4]
    glyphs = [store.glyph(s, c, table) for s in manifest.styles for c in chars]
    clf = train_eval_classifier("content", glyphs, EvalConfig(epochs=30, batch_size=8, lr=2e-3, width=8))
    assert accuracy(clf, glyphs) >= 0.9
    assert clf.features(glyphs[:3]).shape == (3, 4 * 8)


def test_evaluate_run_single_repeat(tiny_corpus, tiny_bundle):
    from lffont.evalsuite import Evaluators
    manifest, table = tiny_corpus
    store = GlyphStore(manifest)
    styles = manifest.styles
    names = [s.name for s in styles]
    chars = manifest.characters

    class Const(torch.nn.Module):
        def __init__(self, n):
            super().__init__()
            self.lin = torch.nn.Linear(4, n)

        def features(self, x):
            return torch.nn.functional.adaptive_avg_pool2d(x, 2).flatten(1)

        def forward(self, x):
            return self.lin(self.features(x))

    ev = Evaluators(EvalClassifier("style", Const(len(names)), names),
                    EvalClassifier("content", Const(len(chars)), chars),
                    EvalClassifier("style", Const(len(names)), names))
    a = evaluate_run(tiny_bundle, manifest, table, n_ref=3, n_repeats=1, evaluators=ev, store=store,
                     max_seen_chars=6)
    b = evaluate_run(tiny_bundle, manifest, table, n_ref=3, n_repeats=1, evaluators=ev, store=store,
                     max_seen_chars=6)
    assert a["seen"] == b["seen"]
    for rep in a.values():
        assert all(np.isfinite(v) for v in rep.to_dict().values())
