"""Evaluation instruments: CutMix-trained classifiers, accuracy, FID, p_unseen.

The style-aware and content-aware classifiers are small residual networks;
their penultimate activations double as the feature space for FID.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .glyphset import GlyphImage, GlyphStore
from .inference import FontGenerator, ReferenceSet, extract_style_factor

log = logging.getLogger(__name__)

KINDS = ("style", "content")


# ---------------------------------------------------------------- CutMix

def cutmix_box(size: int, lam: float, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Random box covering a (1 - lam) share of a size x size image: (y0, y1, x0, x1)."""
    cut = int(round(size * math.sqrt(1.0 - lam)))
    cy, cx = int(rng.integers(size)), int(rng.integers(size))
    y0, y1 = max(cy - cut // 2, 0), min(cy + cut - cut // 2, size)
    x0, x1 = max(cx - cut // 2, 0), min(cx + cut - cut // 2, size)
    return y0, y1, x0, x1


def cutmix(x: torch.Tensor, y: torch.Tensor, lam: float, rng: np.random.Generator,
           perm: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Paste a box from a shuffled copy of the batch; labels mixed by pasted area.

    `y` holds soft labels (N, n_classes).  lam=1 leaves images and labels untouched.
    """
    if perm is None:
        perm = torch.from_numpy(rng.permutation(x.shape[0]))
    y0, y1, x0, x1 = cutmix_box(x.shape[-1], lam, rng)
    area = (y1 - y0) * (x1 - x0)
    if area == 0:
        return x, y
    x = x.clone()
    x[..., y0:y1, x0:x1] = x[perm][..., y0:y1, x0:x1]
    keep = 1.0 - area / float(x.shape[-1] * x.shape[-2])
    return x, keep * y + (1.0 - keep) * y[perm]


# ---------------------------------------------------------------- classifier

class _Block(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.c1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.b1 = nn.BatchNorm2d(cout)
        self.c2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.b2 = nn.BatchNorm2d(cout)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        h = F.relu(self.b1(self.c1(x)))
        h = self.b2(self.c2(h))
        return F.relu(h + (x if self.skip is None else self.skip(x)))


class EvalNet(nn.Module):
    """Small residual classifier; `features` returns the pooled penultimate layer."""

    def __init__(self, n_classes: int, width: int = 32):
        super().__init__()
        w = width
        self.stem = nn.Sequential(nn.Conv2d(1, w, 3, 1, 1, bias=False), nn.BatchNorm2d(w), nn.ReLU())
        self.body = nn.Sequential(_Block(w, w, 2), _Block(w, 2 * w, 2), _Block(2 * w, 4 * w, 2), _Block(4 * w, 4 * w, 2))
        self.fc = nn.Linear(4 * w, n_classes)
        self.feature_dim = 4 * w

    def features(self, x):
        return self.body(self.stem(x)).mean(dim=(2, 3))

    def forward(self, x):
        return self.fc(self.features(x))


@dataclass
class EvalConfig:
    batch_size: int = 64
    lr: float = 2e-4
    epochs: int = 20
    cutmix_prob: float = 0.5
    cutmix_beta: float = 0.5
    width: int = 32
    seed: int = 0


@dataclass
class EvalClassifier:
    kind: str
    net: EvalNet
    labels: list                    # class index -> style name or character codepoint

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    def label_of(self, g: GlyphImage):
        return _label(self.kind, g)

    @torch.no_grad()
    def _run(self, glyphs, fn, batch=256) -> torch.Tensor:
        self.net.eval()
        out = []
        for i in range(0, len(glyphs), batch):
            out.append(fn(_images(glyphs[i:i + batch])))
        return torch.cat(out)

    def logits(self, glyphs) -> torch.Tensor:
        return self._run(list(glyphs), self.net)

    def features(self, glyphs) -> np.ndarray:
        return self._run(list(glyphs), self.net.features).numpy().astype(np.float64)

    def predict(self, glyphs) -> list:
        idx = self.logits(glyphs).argmax(1).tolist()
        return [self.labels[i] for i in idx]


def _label(kind: str, g: GlyphImage):
    if kind == "style":
        return g.style.name
    return g.character.codepoint


def _images(glyphs) -> torch.Tensor:
    if isinstance(glyphs, torch.Tensor):
        return glyphs
    return torch.from_numpy(np.stack([g.pixels for g in glyphs])[:, None].astype(np.float32))


def fit_classifier(net: nn.Module, images: torch.Tensor, targets: torch.Tensor, epochs: int, batch_size: int,
                   lr: float, rng: np.random.Generator, mix=None, schedule: str | None = None) -> nn.Module:
    """Minibatch Adam on soft-label cross-entropy.

    `mix(x, y, rng) -> (x, y)` is applied to every batch when given.
    `schedule="cosine"` anneals the learning rate to 0 over all steps.
    """
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    n = images.shape[0]
    steps_per_epoch = max(1, math.ceil(n / batch_size))
    total = epochs * steps_per_epoch
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(total, 1)) if schedule == "cosine" else None
    for _ in range(epochs):
        net.train()
        order = rng.permutation(n)
        for s in range(steps_per_epoch):
            idx = torch.from_numpy(order[s * batch_size:(s + 1) * batch_size])
            if len(idx) < 2:
                continue
            x, y = images[idx], targets[idx]
            if mix is not None:
                x, y = mix(x, y, rng)
            loss = -(y * F.log_softmax(net(x), dim=1)).sum(1).mean()
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
    net.eval()
    return net


def train_eval_classifier(kind: str, data, config: EvalConfig | None = None) -> EvalClassifier:
    """Train a style- or content-aware classifier on labelled glyphs with CutMix."""
    config = config or EvalConfig()
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    glyphs = list(data)
    labels = sorted({_label(kind, g) for g in glyphs}, key=str)
    if len(labels) < 2:
        raise ValueError(f"{kind} classifier needs at least two classes, got {len(labels)}")
    index = {lab: i for i, lab in enumerate(labels)}
    images = _images(glyphs)
    targets = F.one_hot(torch.tensor([index[_label(kind, g)] for g in glyphs]), len(labels)).float()
    rng = np.random.default_rng(config.seed)
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        net = EvalNet(len(labels), config.width)

    def mix(x, y, rng):
        if rng.random() >= config.cutmix_prob:
            return x, y
        return cutmix(x, y, float(rng.beta(config.cutmix_beta, config.cutmix_beta)), rng)

    fit_classifier(net, images, targets, config.epochs, config.batch_size, config.lr, rng, mix=mix)
    return EvalClassifier(kind, net, labels)


# ---------------------------------------------------------------- metrics

def accuracy(classifier: EvalClassifier, glyphs, labels=None) -> float:
    glyphs = list(glyphs)
    if not glyphs:
        raise ValueError("accuracy of an empty set")
    labels = labels if labels is not None else [classifier.label_of(g) for g in glyphs]
    pred = classifier.predict(glyphs)
    return float(np.mean([p == t for p, t in zip(pred, labels)]))


def hmean(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2.0 * a * b / (a + b)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _tr_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    # Tr (S1 S2)^1/2 = Tr (S1^1/2 S2 S1^1/2)^1/2, the latter symmetric PSD
    r = _psd_sqrt(s1)
    m = r @ s2 @ r
    w = np.linalg.eigvalsh((m + m.T) / 2.0)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def _shrink(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    return cov + np.eye(d) * (0.01 * np.trace(cov) / d)


def fid(features_real, features_fake, shrinkage: bool | str = "auto") -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    shrinkage: True always adds 0.01 * trace / d to the covariance diagonal,
    False never does (and requires more samples than dimensions), "auto"
    applies it only when a set has no more samples than dimensions.
    """
    a = np.asarray(features_real, dtype=np.float64)
    b = np.asarray(features_fake, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"feature sets must be (n, d) with equal d, got {a.shape} and {b.shape}")
    d = a.shape[1]
    small = min(len(a), len(b)) < d + 1
    if shrinkage == "auto":
        shrinkage = small
    if small and not shrinkage:
        raise ValueError(f"need at least {d + 1} samples per set without shrinkage, got {len(a)} and {len(b)}")
    if min(len(a), len(b)) < 2:
        raise ValueError("need at least two samples per set")
    mu1, mu2 = a.mean(0), b.mean(0)
    s1, s2 = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    s1, s2 = np.atleast_2d(s1), np.atleast_2d(s2)
    if shrinkage:
        s1, s2 = _shrink(s1), _shrink(s2)
    # average both orders so the value is exactly symmetric in its arguments
    tr_cross = 0.5 * (_tr_sqrt_product(s1, s2) + _tr_sqrt_product(s2, s1))
    value = float(((mu1 - mu2) ** 2).sum() + np.trace(s1) + np.trace(s2) - 2.0 * tr_cross)
    return max(value, 0.0)


def p_unseen(style_classifier: EvalClassifier, glyphs, unseen_styles) -> float:
    """Share of glyphs whose predicted style is one of `unseen_styles` (names or StyleIds)."""
    glyphs = list(glyphs)
    if not glyphs:
        raise ValueError("p_unseen of an empty set")
    unseen = {getattr(s, "name", s) for s in unseen_styles}
    return float(np.mean([p in unseen for p in style_classifier.predict(glyphs)]))


# ---------------------------------------------------------------- run evaluation

@dataclass
class MetricReport:
    acc_style: float
    acc_content: float
    acc_hmean: float
    fid_style: float
    fid_content: float
    fid_hmean: float
    p_unseen: float
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, reports: list["MetricReport"]) -> "MetricReport":
        if len(reports) == 1:
            return reports[0]
        keys = [k for k in asdict(reports[0]) if k != "n"]
        vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
        return cls(**vals, n=sum(r.n for r in reports))


@dataclass
class Evaluators:
    style: EvalClassifier        # over the held-out (test) styles
    content: EvalClassifier      # over all characters
    all_styles: EvalClassifier   # over train and test styles, for p_unseen


def build_evaluators(manifest, table, config: EvalConfig | None = None, store: GlyphStore | None = None,
                     max_chars_per_style: int | None = None) -> Evaluators:
    """Train the three instruments on real glyphs.

    Style and content classifiers see only test-style glyphs, so their
    labels do not overlap with what the generator was trained on.
    """
    config = config or EvalConfig()
    store = store or GlyphStore(manifest)
    rng = np.random.default_rng(config.seed)

    def glyphs_of(styles):
        out = []
        for s in styles:
            chars = manifest.available_chars(s)
            if max_chars_per_style is not None and len(chars) > max_chars_per_style:
                chars = sorted(rng.choice(chars, size=max_chars_per_style, replace=False).tolist())
            out += [store.glyph(s, c, table) for c in chars]
        return out

    test = glyphs_of(manifest.test_styles)
    everyone = test + glyphs_of(manifest.train_styles)
    return Evaluators(
        style=train_eval_classifier("style", test, config),
        content=train_eval_classifier("content", test, config),
        all_styles=train_eval_classifier("style", everyone, config),
    )


def _block_report(ev: Evaluators, fakes: list[GlyphImage], reals: list[GlyphImage], unseen_styles) -> MetricReport:
    acc_s = accuracy(ev.style, fakes)
    acc_c = accuracy(ev.content, fakes)
    fid_s = fid(ev.style.features(reals), ev.style.features(fakes))
    fid_c = fid(ev.content.features(reals), ev.content.features(fakes))
    return MetricReport(
        acc_style=acc_s, acc_content=acc_c, acc_hmean=hmean(acc_s, acc_c),
        fid_style=fid_s, fid_content=fid_c, fid_hmean=hmean(fid_s, fid_c),
        p_unseen=p_unseen(ev.all_styles, fakes, unseen_styles), n=len(fakes),
    )


def evaluate_run(bundle, manifest, table, n_ref: int = 8, n_repeats: int = 50, seed: int = 0,
                 evaluators: Evaluators | None = None, store: GlyphStore | None = None,
                 styles=None, max_seen_chars: int | None = 50) -> dict[str, MetricReport]:
    """Generate test-style glyphs from n_ref random references, n_repeats times, and score them.

    Returns {"seen": MetricReport, "unseen": MetricReport}, each averaged over
    repeats.  Style labels on the generated glyphs are the reference style.
    """
    store = store or GlyphStore(manifest)
    evaluators = evaluators or build_evaluators(manifest, table, store=store)
    styles = list(styles) if styles is not None else manifest.test_styles
    if not styles:
        raise ValueError("no styles to evaluate")
    gen = FontGenerator(bundle, manifest, table, store)
    rng = np.random.default_rng(seed)
    blocks: dict[str, list[MetricReport]] = {"seen": [], "unseen": []}
    unseen_styles = manifest.test_styles
    for _ in range(n_repeats):
        fakes = {"seen": [], "unseen": []}
        reals = {"seen": [], "unseen": []}
        for s in styles:
            seen_pool = manifest.available_chars(s, manifest.seen)
            refs = sorted(rng.choice(seen_pool, size=min(n_ref, len(seen_pool)), replace=False).tolist())
            z = extract_style_factor(gen.bundle, ReferenceSet.from_manifest(manifest, table, s, refs, store), table)
            targets = {
                "seen": [c for c in seen_pool if c not in refs],
                "unseen": manifest.available_chars(s, manifest.unseen),
            }
            if max_seen_chars is not None and len(targets["seen"]) > max_seen_chars:
                targets["seen"] = sorted(rng.choice(targets["seen"], size=max_seen_chars, replace=False).tolist())
            for block, chars in targets.items():
                for c in chars:
                    g = gen.generate(z, c, style=s)
                    fakes[block].append(g)
                    reals[block].append(store.glyph(s, c, table))
        for block in blocks:
            if fakes[block]:
                blocks[block].append(_block_report(evaluators, fakes[block], reals[block], unseen_styles))
    return {k: MetricReport.mean(v) for k, v in blocks.items() if v}
