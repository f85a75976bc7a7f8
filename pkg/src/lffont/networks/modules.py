"""Encoders, generator, discriminator and classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import CBAM, ComponentConditioning, ConvAct, GlobalContext, ResBlock, init_weights


@dataclass
class ArchConfig:
    """Architecture knobs.  Channels double at each downsampling stage."""

    resolution: int = 128
    base: int = 32
    n_down: int = 3
    n_res: int = 2
    style_res: int = 1
    gen_res: int = 2
    disc_base: int = 32
    disc_layers: int = 5
    k: int = 8
    g_sn: bool = False          # spectral norm on encoder/generator convs
    norm: str = "none"          # "in": instance norm in encoder/generator blocks

    @property
    def feat_channels(self) -> int:
        return self.base * 2 ** self.n_down

    @property
    def feat_size(self) -> int:
        return self.resolution // 2 ** self.n_down

    def feature_shape(self) -> tuple[int, int, int]:
        return (self.feat_channels, self.feat_size, self.feat_size)

    def validate(self) -> None:
        if self.resolution % 2 ** self.n_down:
            raise ValueError(f"resolution {self.resolution} not divisible by 2**{self.n_down}")
        if self.n_down < 2:
            raise ValueError("n_down must be >= 2 (conditioning sits after the second stage)")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _check_glyph(x: torch.Tensor, resolution: int) -> None:
    if x.dim() != 4 or x.shape[1] != 1 or x.shape[2] != resolution or x.shape[3] != resolution:
        raise ValueError(f"expected glyph batch (N, 1, {resolution}, {resolution}), got {tuple(x.shape)}")


class ContentEncoder(nn.Module):
    """Stride-1 stem followed by `n_down` stride-2 stages and residual blocks."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.resolution = cfg.resolution
        chans = [cfg.base * 2 ** i for i in range(cfg.n_down + 1)]
        sn, nm = cfg.g_sn, cfg.norm
        layers = [ConvAct(1, chans[0], sn=sn, norm=nm)]
        layers += [ConvAct(a, b, stride=2, sn=sn, norm=nm) for a, b in zip(chans[:-1], chans[1:])]
        layers += [ResBlock(chans[-1], sn=sn, norm=nm) for _ in range(cfg.n_res)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        _check_glyph(x, self.resolution)
        return self.net(x)


class StyleEncoder(nn.Module):
    """Component-conditioned style encoder.

    `trunk` (stem + first stride-2 stage) does not depend on the component;
    `head` adds the component bias and runs the remaining stages, residual,
    global-context and attention blocks.  Splitting the two lets many
    (glyph, component) queries share one trunk pass.
    """

    def __init__(self, cfg: ArchConfig, n_components: int):
        super().__init__()
        self.resolution = cfg.resolution
        self.n_components = n_components
        chans = [cfg.base * 2 ** i for i in range(cfg.n_down + 1)]
        sn, nm = cfg.g_sn, cfg.norm
        self.stem = nn.Sequential(ConvAct(1, chans[0], sn=sn, norm=nm), ConvAct(chans[0], chans[1], stride=2, sn=sn, norm=nm))
        self.cond = ComponentConditioning(n_components, chans[1])
        # no normalization after the conditioning: it would cancel the channel bias
        rest = [ConvAct(a, b, stride=2, sn=sn) for a, b in zip(chans[1:-1], chans[2:])]
        rest += [ResBlock(chans[-1], sn=sn) for _ in range(cfg.style_res)]
        rest += [GlobalContext(chans[-1]), CBAM(chans[-1])]
        self.rest = nn.Sequential(*rest)

    def trunk(self, x):
        _check_glyph(x, self.resolution)
        return self.stem(x)

    def head(self, h, comp_ids=None):
        return self.rest(self.cond(h, comp_ids))

    def forward(self, x, comp_ids=None):
        return self.head(self.trunk(x), comp_ids)


class Generator(nn.Module):
    """Fuses style and content features by concatenation and decodes to a glyph."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        c = cfg.feat_channels
        self.feat_shape = cfg.feature_shape()
        chans = [cfg.base * 2 ** i for i in range(cfg.n_down, -1, -1)]
        sn, nm = cfg.g_sn, cfg.norm
        layers = [ConvAct(2 * c, c, sn=sn, norm=nm)]
        layers += [ResBlock(c, sn=sn, norm=nm) for _ in range(cfg.gen_res)]
        for a, b in zip(chans[:-1], chans[1:]):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"), ConvAct(a, b, sn=sn, norm=nm)]
        layers += [nn.Conv2d(chans[-1], 1, 3, 1, 1), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, f_style, f_content):
        if f_style.shape != f_content.shape or tuple(f_style.shape[1:]) != self.feat_shape:
            raise ValueError(
                f"generator expects two (N, {self.feat_shape}) features, got "
                f"{tuple(f_style.shape)} and {tuple(f_content.shape)}"
            )
        return self.net(torch.cat([f_style, f_content], dim=1))


class Discriminator(nn.Module):
    """Shared trunk with projection heads for the style label and the character label.

    Returns (style_score, char_score, features) where `features` holds the
    output of every trunk layer (used for feature matching).
    """

    def __init__(self, cfg: ArchConfig, n_styles: int, n_chars: int):
        super().__init__()
        self.resolution = cfg.resolution
        self.n_styles, self.n_chars = n_styles, n_chars
        chans, layers, cin = [], [], 1
        for i in range(cfg.disc_layers):
            cout = cfg.disc_base * 2 ** min(i, 3)
            stride = 2 if i < cfg.disc_layers - 1 else 1
            layers.append(ConvAct(cin, cout, stride=stride, sn=True))
            cin = cout
        self.layers = nn.ModuleList(layers)
        self.style_lin = nn.utils.parametrizations.spectral_norm(nn.Linear(cin, 1))
        self.char_lin = nn.utils.parametrizations.spectral_norm(nn.Linear(cin, 1))
        self.style_emb = nn.utils.parametrizations.spectral_norm(nn.Embedding(n_styles, cin))
        self.char_emb = nn.utils.parametrizations.spectral_norm(nn.Embedding(n_chars, cin))

    def forward(self, x, style_ids, char_ids):
        _check_glyph(x, self.resolution)
        for ids, n, what in ((style_ids, self.n_styles, "style"), (char_ids, self.n_chars, "character")):
            if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= n):
                raise IndexError(f"{what} label out of range [0, {n})")
        feats = []
        h = x
        for layer in self.layers:
            h = layer(h)
            feats.append(h)
        pooled = h.mean(dim=(2, 3))
        style = self.style_lin(pooled).squeeze(1) + (self.style_emb(style_ids) * pooled).sum(1)
        char = self.char_lin(pooled).squeeze(1) + (self.char_emb(char_ids) * pooled).sum(1)
        return style, char, feats


class ComponentClassifier(nn.Module):
    def __init__(self, cfg: ArchConfig, n_components: int):
        super().__init__()
        c = cfg.feat_channels
        self.conv = ConvAct(c, c)
        self.fc = nn.Linear(c, n_components)

    def forward(self, f):
        return self.fc(self.conv(F.leaky_relu(f, 0.2)).mean(dim=(2, 3)))


class CharacterClassifier(nn.Module):
    """Auxiliary glyph -> character classifier used for pseudo labels."""

    def __init__(self, cfg: ArchConfig, n_chars: int):
        super().__init__()
        self.resolution = cfg.resolution
        b = cfg.base
        self.net = nn.Sequential(
            ConvAct(1, b, stride=2), ConvAct(b, 2 * b, stride=2),
            ConvAct(2 * b, 4 * b, stride=2), ConvAct(4 * b, 4 * b),
        )
        self.fc = nn.Linear(4 * b, n_chars)

    def forward(self, x):
        _check_glyph(x, self.resolution)
        return self.fc(self.net(x).mean(dim=(2, 3)))


def build_modules(cfg: ArchConfig, n_components: int, n_styles: int, n_chars: int) -> nn.ModuleDict:
    from .factorization import Factorizer

    cfg.validate()
    mods = nn.ModuleDict(
        {
            "content_enc": ContentEncoder(cfg),
            "style_enc": StyleEncoder(cfg, n_components),
            "gen": Generator(cfg),
            "disc": Discriminator(cfg, n_styles, n_chars),
            "comp_cls": ComponentClassifier(cfg, n_components),
            "char_cls": CharacterClassifier(cfg, n_chars),
        }
    )
    init_weights(mods)
    mods["fact_s"] = Factorizer(cfg.k, cfg.feat_channels, "style")
    mods["fact_u"] = Factorizer(cfg.k, cfg.feat_channels, "component")
    return mods
