"""Font loading and glyph rasterization.

Two font backends sit behind the same small interface (`name`, `has`,
`render`): TrueType/OpenType files rendered with FreeType through Pillow,
and the procedural synthetic fonts in :mod:`lffont.glyphset.synthetic`.
`render` returns 8-bit grayscale with 255 as background; :func:`render_glyph`
converts to the [-1, 1] float convention (ink negative).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .synthetic import FONT_SUFFIX, SynthFont

FONT_EXTENSIONS = (".ttf", ".otf", ".ttc", FONT_SUFFIX)


class GlyphNotFoundError(KeyError):
    pass


class InvalidGlyphError(ValueError):
    pass


@dataclass(frozen=True)
class StyleId:
    id: int
    name: str
    split: str = "train"


@dataclass
class GlyphImage:
    """A single glyph: (H, W) float32 pixels in [-1, 1], ink negative."""

    pixels: np.ndarray
    style: StyleId | None = None
    character: object = None

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]


def to_float(gray: np.ndarray) -> np.ndarray:
    return gray.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(pixels, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


class TrueTypeFont:
    def __init__(self, path: str | Path, face_index: int = 0):
        from fontTools.ttLib import TTFont

        self.path = Path(path)
        self.name = style_name_for(self.path)
        with TTFont(str(self.path), fontNumber=face_index, lazy=True) as tt:
            self._cmap = set(tt.getBestCmap() or {})
        self._face_index = face_index
        self._fonts: dict[int, ImageFont.FreeTypeFont] = {}

    def has(self, codepoint: int) -> bool:
        return codepoint in self._cmap

    def codepoints(self) -> list[int]:
        return sorted(self._cmap)

    def _font(self, size: int) -> ImageFont.FreeTypeFont:
        if size not in self._fonts:
            self._fonts[size] = ImageFont.truetype(str(self.path), size, index=self._face_index)
        return self._fonts[size]

    def render(self, codepoint: int, resolution: int, supersample: int = 4) -> np.ndarray:
        if not self.has(codepoint):
            raise GlyphNotFoundError(codepoint)
        size = resolution * supersample
        font = self._font(size)
        canvas = Image.new("L", (2 * size, 2 * size), 255)
        ImageDraw.Draw(canvas).text((size // 2, size // 2), chr(codepoint), fill=0, font=font)
        ink = np.asarray(canvas) < 255
        if not ink.any():
            return np.full((resolution, resolution), 255, np.uint8)
        ys, xs = np.nonzero(ink)
        crop = canvas.crop((xs.min(), ys.min(), xs.max() + 1, ys.max() + 1))
        # aspect-preserving fit into the central 80% of the cell
        box = int(round(size * 0.8))
        scale = box / max(crop.width, crop.height)
        w, h = max(1, int(round(crop.width * scale))), max(1, int(round(crop.height * scale)))
        crop = crop.resize((w, h), Image.Resampling.LANCZOS)
        cell = Image.new("L", (size, size), 255)
        cell.paste(crop, ((size - w) // 2, (size - h) // 2))
        return np.asarray(cell.resize((resolution, resolution), Image.Resampling.BOX), dtype=np.uint8)


def style_name_for(path: Path) -> str:
    name = path.name
    for ext in FONT_EXTENSIONS:
        if name.lower().endswith(ext):
            return name[: -len(ext)]
    return path.stem


def open_font(path: str | Path):
    path = Path(path)
    if path.name.endswith(FONT_SUFFIX):
        return SynthFont.load(path)
    if path.suffix.lower() in (".ttf", ".otf", ".ttc"):
        return TrueTypeFont(path)
    raise ValueError(f"unsupported font file: {path}")


def list_fonts(font_dir: str | Path) -> list[Path]:
    font_dir = Path(font_dir)
    if not font_dir.is_dir():
        raise FileNotFoundError(f"font directory not found: {font_dir}")
    return sorted(p for p in font_dir.iterdir() if p.is_file() and p.name.lower().endswith(FONT_EXTENSIONS))


def render_gray(font, codepoint: int, resolution: int) -> np.ndarray:
    """8-bit rendering with the missing/blank checks applied."""
    if not font.has(codepoint):
        raise GlyphNotFoundError(f"{font.name} has no glyph for U+{codepoint:04X}")
    gray = font.render(codepoint, resolution)
    if gray.min() >= 128:
        raise InvalidGlyphError(f"{font.name}: U+{codepoint:04X} renders without ink")
    return gray


def render_glyph(font, character, resolution: int, style: StyleId | None = None) -> GlyphImage:
    """Rasterize one character, centered and aspect-preserving, into [-1, 1].

    Values are quantized to 8 bits so a rendered glyph and its PNG cache entry
    are bit-identical.
    """
    if isinstance(character, str):
        cp = ord(character)
    elif hasattr(character, "codepoint"):
        cp = character.codepoint
    else:
        cp = int(character)
    return GlyphImage(to_float(render_gray(font, cp, resolution)), style, character)


def character_from_filename(path: str | Path) -> int | None:
    """Codepoint encoded in a glyph file name: `4e00.png`, `U+4E00.png` or `一.png`."""
    stem = Path(path).stem
    if len(stem) == 1:
        return ord(stem)
    text = stem[2:] if stem.upper().startswith("U+") else stem
    try:
        return int(text, 16)
    except ValueError:
        return None


def glyph_from_png(path: str | Path, resolution: int, style: StyleId | None = None, table=None) -> GlyphImage:
    """Read a grayscale glyph image (dark ink on a light background) at `resolution`.

    The character comes from the file name when it encodes one; with `table`
    it is resolved to a CharacterId.
    """
    img = Image.open(path).convert("L")
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.Resampling.BOX)
    cp = character_from_filename(path)
    char = cp
    if table is not None and cp is not None and cp in table:
        char = table.character(cp)
    return GlyphImage(to_float(np.asarray(img, dtype=np.uint8)), style, char)
