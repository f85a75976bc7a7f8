"""Glyph datasets: rasterization, manifests and glyph access."""

from .manifest import (
    DatasetManifest,
    GlyphStore,
    ManifestConfig,
    ManifestError,
    build_manifest,
    load_glyph,
)
from .render import (
    GlyphImage,
    GlyphNotFoundError,
    InvalidGlyphError,
    StyleId,
    TrueTypeFont,
    character_from_filename,
    glyph_from_png,
    open_font,
    render_glyph,
)
from .synthetic import SynthFont, SynthStyle, make_script, write_corpus

__all__ = [
    "DatasetManifest",
    "GlyphImage",
    "GlyphNotFoundError",
    "GlyphStore",
    "InvalidGlyphError",
    "ManifestConfig",
    "ManifestError",
    "StyleId",
    "SynthFont",
    "SynthStyle",
    "TrueTypeFont",
    "build_manifest",
    "character_from_filename",
    "glyph_from_png",
    "load_glyph",
    "make_script",
    "open_font",
    "render_glyph",
    "write_corpus",
]
