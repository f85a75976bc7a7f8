"""Parametric functions: encoders, factorization, generator, discriminator, classifiers.

The functions here are thin, glyph-level wrappers over the modules held by a
:class:`ModelBundle`.  Tensors use the (N, C, H, W) layout throughout; glyph
inputs are lifted to a batch of one.
"""

from __future__ import annotations

import numpy as np
import torch

from ..glyphset import GlyphImage
from .bundle import CheckpointError, ModelBundle, load_checkpoint, save_checkpoint
from .factorization import Factorizer, aggregate_localized_style, factorize, reconstruct_feature
from .modules import ArchConfig

__all__ = [
    "ArchConfig",
    "CheckpointError",
    "Factorizer",
    "ModelBundle",
    "aggregate_localized_style",
    "classify_character",
    "classify_component",
    "discriminate",
    "encode_component_style",
    "encode_content",
    "factorize",
    "generate",
    "glyph_tensor",
    "load_checkpoint",
    "reconstruct_feature",
    "save_checkpoint",
    "tensor_to_glyph",
]


def glyph_tensor(glyphs, dtype=torch.float32) -> torch.Tensor:
    """Stack GlyphImages / arrays into an (N, 1, H, W) tensor."""
    if isinstance(glyphs, torch.Tensor):
        return glyphs
    if isinstance(glyphs, (GlyphImage, np.ndarray)):
        glyphs = [glyphs]
    arrays = [g.pixels if isinstance(g, GlyphImage) else np.asarray(g) for g in glyphs]
    return torch.from_numpy(np.stack(arrays)[:, None].astype(np.float32)).to(dtype)


def tensor_to_glyph(x: torch.Tensor, style=None, character=None) -> GlyphImage:
    arr = x.detach().cpu().to(torch.float32).numpy()
    return GlyphImage(arr.reshape(arr.shape[-2:]), style, character)


def _comp_index(bundle: ModelBundle, u) -> int:
    idx = u.id if hasattr(u, "id") else int(u)
    if not 0 <= idx < bundle.n_components:
        raise IndexError(f"unknown component id {idx}")
    return idx


@torch.no_grad()
def encode_content(bundle: ModelBundle, glyph) -> torch.Tensor:
    return bundle.content_enc(glyph_tensor(glyph, bundle.dtype))


@torch.no_grad()
def encode_component_style(bundle: ModelBundle, glyph, u, conditioned: bool = True) -> torch.Tensor:
    """Component-wise style feature of `glyph` for component `u`.

    `conditioned=False` skips the component bias (used for cross-script style).
    """
    x = glyph_tensor(glyph, bundle.dtype)
    if not conditioned:
        return bundle.style_enc(x, None)
    ids = torch.full((x.shape[0],), _comp_index(bundle, u), dtype=torch.long)
    return bundle.style_enc(x, ids)


@torch.no_grad()
def generate(bundle: ModelBundle, f_sc: torch.Tensor, f_c: torch.Tensor, style=None, character=None) -> GlyphImage:
    out = bundle.gen(f_sc, f_c)
    return tensor_to_glyph(out[0], style, character)


@torch.no_grad()
def discriminate(bundle: ModelBundle, glyph, s, c):
    """(style_score, char_score, per-layer trunk features) for one glyph."""
    x = glyph_tensor(glyph, bundle.dtype)
    sid = torch.tensor([s.id if hasattr(s, "id") else int(s)])
    cid = torch.tensor([c.id if hasattr(c, "id") else int(c)])
    style, char, feats = bundle.disc(x, sid, cid)
    return float(style[0]), float(char[0]), feats


@torch.no_grad()
def classify_component(bundle: ModelBundle, f: torch.Tensor) -> torch.Tensor:
    expected = bundle.cfg.feature_shape()
    if tuple(f.shape[1:]) != expected:
        raise ValueError(f"component feature must be (N, {expected}), got {tuple(f.shape)}")
    return bundle.comp_cls(f)


@torch.no_grad()
def classify_character(bundle: ModelBundle, glyph) -> torch.Tensor:
    return bundle.char_cls(glyph_tensor(glyph, bundle.dtype))
