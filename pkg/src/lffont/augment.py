"""Character-classifier training with mix augmentations.

Modes: vanilla, cutmix, fontmix-style, fontmix-char and fontmix-both.  The
fontmix modes synthesize the mixed half of each mini-batch with a trained
generation bundle; fontmix-both alternates style and character mixing from
one iteration to the next.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .evalsuite import EvalNet, cutmix
from .glyphset import GlyphStore
from .inference import FontGenerator, ReferenceSet, _character_mix, _glyph_key, extract_style_factor
from .networks import glyph_tensor

log = logging.getLogger(__name__)

MODES = ("vanilla", "cutmix", "fontmix-style", "fontmix-char", "fontmix-both")


@dataclass
class AugmentConfig:
    mode: str = "vanilla"
    n_chars: int = 50
    images_per_char: int = 5
    styles: list | None = None      # style names; None = every style in the manifest
    epochs: int = 90
    batch_size: int = 256
    lr: float = 2e-4
    schedule: str = "cosine"
    mix_alpha: float = 0.5
    mix_fraction: float = 0.5
    width: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class AugmentReport:
    mode: str
    accuracy: float
    n_train: int
    n_test: int
    n_classes: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def make_split(manifest, table, config: AugmentConfig, store: GlyphStore):
    """Few images per character for training, the remaining styles for testing."""
    rng = np.random.default_rng(config.seed)
    styles = [manifest.style(s) for s in config.styles] if config.styles else list(manifest.styles)
    src = manifest.source_style
    common = set(manifest.characters)
    for s in styles + [src]:
        common &= set(manifest.available_chars(s))
    common = sorted(common)
    if len(common) < config.n_chars:
        raise ValueError(f"only {len(common)} characters are shared by all styles, need {config.n_chars}")
    chars = sorted(rng.choice(common, size=config.n_chars, replace=False).tolist())
    if config.images_per_char >= len(styles):
        raise ValueError("images_per_char must leave at least one style for testing")
    train, test = [], []
    for c in chars:
        order = rng.permutation(len(styles))
        for rank, i in enumerate(order):
            g = store.glyph(styles[i], c, table)
            (train if rank < config.images_per_char else test).append(g)
    return chars, train, test


class _FontMixer:
    """Generates mixed images for a batch, caching per-image style factors."""

    def __init__(self, generator: FontGenerator, table):
        self.gen = generator
        self.table = table
        self._z: dict[str, torch.Tensor] = {}

    def z(self, g):
        key = _glyph_key(g)
        if key not in self._z:
            self._z[key] = extract_style_factor(self.gen.bundle, ReferenceSet([g]), self.table)
        return self._z[key]

    def style_mix(self, g1, g2, lam):
        z = lam * self.z(g1) + (1.0 - lam) * self.z(g2)
        return self.gen.generate(z, g1.character)

    def char_mix(self, g1, g2, lam):
        return _character_mix(self.gen, self.z(g1), g1.character, g2.character, 1.0 - lam)


def augment_train(config: AugmentConfig, manifest, table, bundle=None, store: GlyphStore | None = None):
    """Train a character classifier under `config.mode`; returns (net, report)."""
    if config.mode.startswith("fontmix") and bundle is None:
        raise ValueError(f"mode {config.mode} needs a trained generation bundle")
    store = store or GlyphStore(manifest)
    chars, train, test = make_split(manifest, table, config, store)
    index = {c: i for i, c in enumerate(chars)}
    n_cls = len(chars)
    x_train = glyph_tensor(train)
    y_train = F.one_hot(torch.tensor([index[g.character.codepoint] for g in train]), n_cls).float()
    rng = np.random.default_rng(config.seed + 1)
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        net = EvalNet(n_cls, config.width)
    mixer = _FontMixer(FontGenerator(bundle, manifest, table, store), table) if bundle is not None else None

    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    n = len(train)
    steps = max(1, math.ceil(n / config.batch_size))
    total = config.epochs * steps
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(total, 1)) if config.schedule == "cosine" else None
    it = 0
    for _ in range(config.epochs):
        net.train()
        order = rng.permutation(n)
        for s in range(steps):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            if len(idx) < 2:
                continue
            x, y = x_train[idx], y_train[idx]
            x, y = _mix_batch(config, x, y, [train[i] for i in idx], index, n_cls, mixer, rng, it)
            loss = -(y * F.log_softmax(net(x), dim=1)).sum(1).mean()
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            it += 1
    net.eval()
    with torch.no_grad():
        pred = net(glyph_tensor(test)).argmax(1).numpy()
    truth = np.array([index[g.character.codepoint] for g in test])
    acc = float((pred == truth).mean())
    return net, AugmentReport(config.mode, acc, len(train), len(test), n_cls, config.seed)


def _mix_batch(config, x, y, glyphs, index, n_cls, mixer, rng, it):
    if config.mode == "vanilla":
        return x, y
    m = int(round(config.mix_fraction * len(x)))
    if m < 2:
        return x, y
    lam = float(rng.beta(config.mix_alpha, config.mix_alpha))
    perm = rng.permutation(m)
    x, y = x.clone(), y.clone()
    if config.mode == "cutmix":
        xm, ym = cutmix(x[:m], y[:m], lam, rng, perm=torch.from_numpy(perm))
        x[:m], y[:m] = xm, ym
        return x, y
    mode = config.mode
    if mode == "fontmix-both":
        mode = "fontmix-style" if it % 2 == 0 else "fontmix-char"
    for i in range(m):
        g1, g2 = glyphs[i], glyphs[int(perm[i])]
        if mode == "fontmix-style":
            out = mixer.style_mix(g1, g2, lam)
        else:
            out = mixer.char_mix(g1, g2, lam)
            y[i] = lam * y[i] + (1.0 - lam) * F.one_hot(torch.tensor(index[g2.character.codepoint]), n_cls).float()
        x[i, 0] = torch.from_numpy(out.pixels)
    return x, y
