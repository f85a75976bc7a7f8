"""Few-shot generation from a handful of reference glyphs.

A style factor is averaged over every (reference, component) pair.  Each
target character brings its own component factors, computed from the
source-style glyph, and its content feature.  The generator decodes the
sum of the rebuilt component-wise features together with the content
feature.

Every generation is a batch of one through the same code path, so
degenerate interpolations and mixes reproduce plain generation bit for bit.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .decomposition import CharacterId, ComponentId, DecompositionTable, UnknownCharacterError
from .glyphset import DatasetManifest, GlyphImage, GlyphStore
from .networks import ModelBundle, aggregate_localized_style, glyph_tensor, reconstruct_feature, tensor_to_glyph

log = logging.getLogger(__name__)

LABEL_MODES = ("ground_truth", "predicted")


@dataclass
class ReferenceSet:
    """Reference glyphs plus how their component lists are obtained.

    In "ground_truth" mode components come from `components` when given,
    otherwise from each glyph's character annotation.  In "predicted" mode the
    auxiliary character classifier picks the character (argmax, lowest id on
    ties) and the table decomposes it.
    """

    glyphs: list[GlyphImage]
    label_mode: str = "ground_truth"
    components: list[list[ComponentId]] | None = None

    def __post_init__(self):
        if not self.glyphs:
            raise ValueError("a reference set needs at least one glyph")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}, got {self.label_mode!r}")
        if self.components is not None and len(self.components) != len(self.glyphs):
            raise ValueError("one component list per reference glyph required")

    def __len__(self):
        return len(self.glyphs)

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, table: DecompositionTable, style, characters,
                      store: GlyphStore | None = None, label_mode: str = "ground_truth") -> "ReferenceSet":
        store = store or GlyphStore(manifest)
        glyphs = [store.glyph(style, table.character(c).codepoint, table) for c in characters]
        return cls(glyphs, label_mode)

    def resolve(self, bundle: ModelBundle, table: DecompositionTable) -> list[tuple[GlyphImage, list[ComponentId]]]:
        """(glyph, components) pairs; glyphs whose components cannot be resolved are skipped."""
        out = []
        for i, g in enumerate(self.glyphs):
            if self.label_mode == "ground_truth" and self.components is not None:
                comps = list(self.components[i])
            elif self.label_mode == "ground_truth":
                if g.character is None:
                    log.warning("reference %d has no character label; skipped", i)
                    continue
                try:
                    comps = table.decompose(g.character)
                except (UnknownCharacterError, KeyError):
                    log.warning("reference %d: character not in the table; skipped", i)
                    continue
            else:
                comps = table.decompose(predict_character(bundle, table, g))
            if not comps:
                continue
            out.append((g, comps))
        return out


def predict_character(bundle: ModelBundle, table: DecompositionTable, glyph) -> CharacterId:
    with torch.no_grad():
        logits = bundle.char_cls(glyph_tensor(glyph, bundle.dtype))[0]
    # torch.argmax returns the first maximum, i.e. the lowest id on ties
    return table.character_by_id(int(torch.argmax(logits)))


def _glyph_key(g: GlyphImage) -> str:
    return hashlib.sha1(np.ascontiguousarray(g.pixels, dtype=np.float32).tobytes()).hexdigest()


@torch.no_grad()
def style_factors(bundle: ModelBundle, pairs, conditioned: bool = True) -> torch.Tensor:
    """F_s(E(x, u)) for every (glyph, component) pair, stacked as (P, k, C, h, w)."""
    out = []
    for g, u in pairs:
        x = glyph_tensor(g, bundle.dtype)
        ids = torch.tensor([u.id if hasattr(u, "id") else int(u)]) if conditioned else None
        if ids is not None and not 0 <= int(ids[0]) < bundle.n_components:
            raise IndexError(f"unknown component id {int(ids[0])}")
        out.append(bundle.fact_s(bundle.style_enc(x, ids))[0])
    return torch.stack(out)


@torch.no_grad()
def extract_style_factor(bundle: ModelBundle, refs: ReferenceSet, table: DecompositionTable) -> torch.Tensor:
    """Mean style factor over all (reference glyph, distinct component) pairs.

    Pairs are put into a canonical order before summation, so the result does
    not depend on the order of the references.
    """
    resolved = refs.resolve(bundle, table)
    if not resolved:
        raise ValueError("no reference glyph has resolvable components")
    pairs = [(g, u) for g, comps in resolved for u in sorted(set(comps))]
    pairs.sort(key=lambda p: (_glyph_key(p[0]), p[1].id))
    return _mean(style_factors(bundle, pairs))


def _mean(z: torch.Tensor) -> torch.Tensor:
    total = z[0].clone()
    for i in range(1, len(z)):
        total = total + z[i]
    return total / len(z)


@dataclass
class CharacterSide:
    """Everything about a target character that does not depend on the style."""

    character: CharacterId | None
    comp_factors: list[torch.Tensor]      # one (k, C, h, w) per component occurrence
    content: torch.Tensor                 # (1, C, h, w)


class FontGenerator:
    """Generation context: a frozen bundle plus the data needed for source glyphs."""

    def __init__(self, bundle: ModelBundle, manifest: DatasetManifest, table: DecompositionTable,
                 store: GlyphStore | None = None):
        if bundle.table_fingerprint != table.fingerprint():
            raise ValueError("bundle and decomposition table do not match")
        self.bundle = bundle.eval()
        self.manifest = manifest
        self.table = table
        self.store = store or GlyphStore(manifest)
        self._sides: dict[int, CharacterSide] = {}
        trained = {u for c in manifest.seen if c in table for u in table.decompose(c)}
        self.untrained_components = frozenset(table.vocabulary) - trained

    def source_glyph(self, c) -> GlyphImage:
        cid = self.table.character(c)
        if not self.manifest.has(self.manifest.source_style, cid.codepoint):
            raise KeyError(f"source style lacks U+{cid.codepoint:04X}")
        return self.store.glyph(self.manifest.source_style, cid.codepoint, self.table)

    @torch.no_grad()
    def character_side(self, c) -> CharacterSide:
        cid = self.table.character(c)
        if cid.id not in self._sides:
            b = self.bundle
            src = glyph_tensor(self.source_glyph(cid), b.dtype)
            h = b.style_enc.trunk(src)
            per_comp = {}
            for u in sorted(set(self.table.entries[cid])):
                per_comp[u] = b.fact_u(b.style_enc.head(h, torch.tensor([u.id])))[0]
            factors = [per_comp[u] for u in self.table.entries[cid]]
            self._sides[cid.id] = CharacterSide(cid, factors, b.content_enc(src))
        return self._sides[cid.id]

    @torch.no_grad()
    def localized_style(self, z_style: torch.Tensor, side: CharacterSide) -> torch.Tensor:
        """Sum of rebuilt component-wise features (one summand per occurrence)."""
        feats = [reconstruct_feature(z_style[None], zu[None]) for zu in side.comp_factors]
        return aggregate_localized_style(feats)

    @torch.no_grad()
    def decode(self, f_sc: torch.Tensor, f_c: torch.Tensor, style=None, character=None) -> GlyphImage:
        out = self.bundle.gen(f_sc, f_c)
        return tensor_to_glyph(out[0], style, character)

    def generate(self, z_style: torch.Tensor, target, style=None) -> GlyphImage:
        side = self.character_side(target)
        return self.decode(self.localized_style(z_style, side), side.content, style, side.character)

    def is_low_confidence(self, target) -> bool:
        return any(u in self.untrained_components for u in self.table.decompose(target))


def generate_glyph(bundle, z_style, manifest, target, table, store=None) -> GlyphImage:
    return FontGenerator(bundle, manifest, table, store).generate(z_style, target)


@dataclass
class LibraryResult:
    glyphs: list[GlyphImage] = field(default_factory=list)
    failures: dict = field(default_factory=dict)         # character -> reason
    low_confidence: list = field(default_factory=list)   # characters with never-trained components

    def __len__(self):
        return len(self.glyphs)

    def __iter__(self):
        return iter(self.glyphs)


def generate_library(bundle, refs: ReferenceSet, characters, manifest, table, store=None,
                     generator: FontGenerator | None = None) -> LibraryResult:
    """Generate every requested character; per-character failures are collected."""
    characters = list(characters)
    if not characters:
        raise ValueError("empty character list")
    gen = generator or FontGenerator(bundle, manifest, table, store)
    z = extract_style_factor(gen.bundle, refs, table)
    result = LibraryResult()
    for c in characters:
        try:
            result.glyphs.append(gen.generate(z, c))
        except (KeyError, UnknownCharacterError) as exc:
            result.failures[c] = str(exc)
            continue
        if gen.is_low_confidence(c):
            result.low_confidence.append(c)
    if result.failures:
        log.warning("skipped %d of %d characters", len(result.failures), len(characters))
    return result


def _ts(steps: int) -> np.ndarray:
    if steps < 2:
        raise ValueError("steps must be >= 2")
    return np.linspace(0.0, 1.0, steps)


def _lerp(a: torch.Tensor, b: torch.Tensor, t: float) -> torch.Tensor:
    return (1.0 - t) * a + t * b


def interpolate_style(bundle, refs_a, refs_b, target, steps, manifest, table, store=None) -> list[GlyphImage]:
    gen = FontGenerator(bundle, manifest, table, store)
    za = extract_style_factor(gen.bundle, refs_a, table)
    zb = extract_style_factor(gen.bundle, refs_b, table)
    return [gen.generate(_lerp(za, zb, float(t)), target) for t in _ts(steps)]


def _character_mix(gen: FontGenerator, z_style, char_a, char_b, t: float, label=None) -> GlyphImage:
    side_a, side_b = gen.character_side(char_a), gen.character_side(char_b)
    # the localized feature is linear in the component factors, so mixing it
    # mixes the aggregated component side
    f_sc = _lerp(gen.localized_style(z_style, side_a), gen.localized_style(z_style, side_b), t)
    f_c = _lerp(side_a.content, side_b.content, t)
    return gen.decode(f_sc, f_c, character=label)


def interpolate_character(bundle, refs, char_a, char_b, steps, manifest, table, store=None) -> list[GlyphImage]:
    gen = FontGenerator(bundle, manifest, table, store)
    z = extract_style_factor(gen.bundle, refs, table)
    ts = _ts(steps)
    out = []
    for t in ts:
        ch = gen.character_side(char_a).character if t < 0.5 else gen.character_side(char_b).character
        out.append(_character_mix(gen, z, char_a, char_b, float(t), label=ch))
    return out


@dataclass
class MixLabel:
    """Soft label as {character id: weight}."""

    weights: dict[int, float]

    def dense(self, n_classes: int) -> np.ndarray:
        v = np.zeros(n_classes, dtype=np.float32)
        for k, w in self.weights.items():
            v[k] += w
        return v


def fontmix(bundle, x1: GlyphImage, x2: GlyphImage, target, lam: float, mode: str, manifest, table,
            store=None, generator: FontGenerator | None = None) -> tuple[GlyphImage, MixLabel]:
    """Mix two glyphs in style-factor space ("style") or across characters ("character").

    style: z = lam * z1 + (1 - lam) * z2 applied to `target` (default: x1's
    character); the label is the target character.
    character: x1's style drawing a lam-weighted blend of x1's and x2's
    characters; the label is mixed with the same weights.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    gen = generator or FontGenerator(bundle, manifest, table, store)
    z1 = extract_style_factor(gen.bundle, ReferenceSet([x1]), table)
    if mode == "style":
        z2 = extract_style_factor(gen.bundle, ReferenceSet([x2]), table)
        target = target if target is not None else x1.character
        z = lam * z1 + (1.0 - lam) * z2
        out = gen.generate(z, target)
        return out, MixLabel({table.character(target).id: 1.0})
    if mode == "character":
        c1, c2 = table.character(x1.character), table.character(x2.character)
        out = _character_mix(gen, z1, c1, c2, 1.0 - lam, label=c1 if lam >= 0.5 else c2)
        weights = {c1.id: lam}
        weights[c2.id] = weights.get(c2.id, 0.0) + (1.0 - lam)
        return out, MixLabel(weights)
    raise ValueError(f"mode must be 'style' or 'character', got {mode!r}")


@torch.no_grad()
def generate_cross_lingual(bundle, refs: ReferenceSet, target_glyph_source: GlyphImage) -> GlyphImage:
    """Style transfer with the component conditioning switched off.

    The style factor is the mean over unconditioned reference encodings; the
    target's own unconditioned encoding provides the component factor.
    """
    bundle.eval()
    glyphs = sorted(refs.glyphs, key=_glyph_key)
    z = _mean(style_factors(bundle, [(g, None) for g in glyphs], conditioned=False))
    src = glyph_tensor(target_glyph_source, bundle.dtype)
    zu = bundle.fact_u(bundle.style_enc(src, None))
    f_sc = reconstruct_feature(z[None], zu)
    out = bundle.gen(f_sc, bundle.content_enc(src))
    return tensor_to_glyph(out[0], None, target_glyph_source.character)
