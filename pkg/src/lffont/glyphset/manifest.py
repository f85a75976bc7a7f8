"""Dataset manifests: styles, seen/unseen split, glyph availability and cache."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..decomposition import DecompositionTable
from .render import (
    GlyphImage,
    GlyphNotFoundError,
    InvalidGlyphError,
    StyleId,
    list_fonts,
    open_font,
    render_gray,
    style_name_for,
    to_float,
)

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "lffont-manifest"
MANIFEST_NAME = "manifest.json"


class ManifestError(ValueError):
    pass


@dataclass
class ManifestConfig:
    """How to build a manifest.

    Test styles come from `test_styles` (explicit names) or `n_test_styles`
    (drawn at random).  Unseen characters come from `unseen` (explicit) or
    `unseen_ratio`.  `n_characters` subsamples the table first.
    """

    resolution: int = 128
    source_font: str | None = None
    test_styles: list[str] | None = None
    n_test_styles: int = 0
    unseen: list[str] | None = None
    unseen_ratio: float = 0.1
    n_characters: int | None = None
    seed: int = 0


@dataclass
class DatasetManifest:
    resolution: int
    styles: list[StyleId]
    source_style: StyleId
    seen: list[int]
    unseen: list[int]
    fonts: dict[str, str]
    available: dict[str, list[int]]
    table_fingerprint: str
    seed: int = 0
    dropped: dict[str, list[int]] = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        self._avail = {k: frozenset(v) for k, v in self.available.items()}
        self._by_name = {s.name: s for s in self.styles}

    @property
    def train_styles(self) -> list[StyleId]:
        return [s for s in self.styles if s.split == "train"]

    @property
    def test_styles(self) -> list[StyleId]:
        return [s for s in self.styles if s.split == "test"]

    @property
    def characters(self) -> list[int]:
        return sorted(self.seen + self.unseen)

    def style(self, s: StyleId | str | int) -> StyleId:
        if isinstance(s, StyleId):
            s = s.name
        if isinstance(s, str):
            try:
                return self._by_name[s]
            except KeyError:
                raise GlyphNotFoundError(f"unknown style {s!r}") from None
        return self.styles[int(s)]

    def has(self, style, character) -> bool:
        try:
            name = self.style(style).name
        except (GlyphNotFoundError, IndexError):
            return False
        return _codepoint(character) in self._avail.get(name, ())

    def available_chars(self, style, subset=None) -> list[int]:
        avail = self._avail[self.style(style).name]
        pool = self.characters if subset is None else subset
        return [c for c in pool if c in avail]

    @property
    def cache_dir(self) -> Path | None:
        """`<root>/glyphs`, or `$LFFONT_CACHE/glyphs/<table>-<resolution>` for rootless manifests."""
        if self.root is not None and (self.root / "glyphs").is_dir():
            return self.root / "glyphs"
        env = os.environ.get("LFFONT_CACHE")
        if env:
            return Path(env) / "glyphs" / f"{self.table_fingerprint}-{self.resolution}"
        return None if self.root is None else self.root / "glyphs"

    def glyph_path(self, style, character) -> Path:
        if self.cache_dir is None:
            raise ManifestError("manifest has no cache directory")
        return self.cache_dir / self.style(style).name / f"{_codepoint(character):04x}.png"

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "resolution": self.resolution,
            "seed": self.seed,
            "table_fingerprint": self.table_fingerprint,
            "source_style": self.source_style.name,
            "styles": [asdict(s) for s in self.styles],
            "fonts": self.fonts,
            "seen": self.seen,
            "unseen": self.unseen,
            "available": self.available,
            "dropped": self.dropped,
        }

    def save(self, root: str | Path) -> Path:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        self.root = root
        path = root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        data = json.loads(path.read_text(encoding="utf-8"))
        if data.get("format") != MANIFEST_FORMAT:
            raise ManifestError(f"{path} is not a dataset manifest")
        styles = [StyleId(**s) for s in data["styles"]]
        by_name = {s.name: s for s in styles}
        return cls(
            resolution=data["resolution"],
            styles=styles,
            source_style=by_name[data["source_style"]],
            seen=list(data["seen"]),
            unseen=list(data["unseen"]),
            fonts=dict(data["fonts"]),
            available={k: list(v) for k, v in data["available"].items()},
            table_fingerprint=data["table_fingerprint"],
            seed=data.get("seed", 0),
            dropped={k: list(v) for k, v in data.get("dropped", {}).items()},
            root=path.parent,
        )


def _codepoint(character) -> int:
    if isinstance(character, str):
        return ord(character)
    if hasattr(character, "codepoint"):
        return character.codepoint
    return int(character)


def build_manifest(font_dir: str | Path, table: DecompositionTable, config: ManifestConfig,
                   out_dir: str | Path | None = None, render: bool | None = None) -> DatasetManifest:
    """Scan fonts, split styles and characters, and (optionally) fill the glyph cache.

    Missing or blank (style, character) pairs are dropped and logged; the
    source font must cover every selected character.  With `out_dir` the
    manifest is written there and glyphs are rasterized into
    `<out_dir>/glyphs/<style>/<codepoint>.png` (unless `render=False`).
    """
    paths = list_fonts(font_dir)
    if not paths:
        raise ManifestError(f"no font files in {font_dir}")
    names = [style_name_for(p) for p in paths]
    if len(set(names)) != len(names):
        raise ManifestError("duplicate style names in font directory")
    fonts = {n: open_font(p) for n, p in zip(names, paths)}
    rng = np.random.default_rng(config.seed)

    source = config.source_font or names[0]
    if source not in fonts:
        raise ManifestError(f"source font {source!r} not found in {font_dir}")

    chars = [c.codepoint for c in table.characters]
    if config.n_characters is not None and config.n_characters < len(chars):
        pick = rng.choice(len(chars), size=config.n_characters, replace=False)
        chars = sorted(chars[i] for i in pick)

    if config.unseen is not None:
        unseen = sorted(_codepoint(c) for c in config.unseen)
        missing = [c for c in unseen if c not in set(chars)]
        if missing:
            raise ManifestError(f"unseen characters not in the character set: {missing[:5]}")
    else:
        n_unseen = int(round(config.unseen_ratio * len(chars)))
        unseen = sorted(chars[i] for i in rng.permutation(len(chars))[:n_unseen])
    unseen_set = set(unseen)
    seen = [c for c in chars if c not in unseen_set]

    others = [n for n in names if n != source]
    if config.test_styles is not None:
        test = set(config.test_styles)
        if source in test:
            raise ManifestError("the source font must be a training style")
        if not test <= set(others):
            raise ManifestError(f"unknown test styles: {sorted(test - set(others))}")
    else:
        if config.n_test_styles > len(others):
            raise ManifestError("more test styles requested than fonts available")
        test = {others[i] for i in rng.permutation(len(others))[: config.n_test_styles]}
    train_names = [n for n in names if n not in test]
    test_names = [n for n in names if n in test]
    styles = [StyleId(i, n, "train") for i, n in enumerate(train_names)]
    styles += [StyleId(len(train_names) + i, n, "test") for i, n in enumerate(test_names)]

    do_render = (out_dir is not None) if render is None else render
    available: dict[str, list[int]] = {}
    dropped: dict[str, list[int]] = {}
    cache = Path(out_dir) / "glyphs" if out_dir is not None else None
    for s in styles:
        font = fonts[s.name]
        ok, bad = [], []
        for cp in chars:
            if not font.has(cp):
                bad.append(cp)
                continue
            if do_render:
                try:
                    gray = render_gray(font, cp, config.resolution)
                except InvalidGlyphError:
                    bad.append(cp)
                    continue
                if cache is not None:
                    d = cache / s.name
                    d.mkdir(parents=True, exist_ok=True)
                    Image.fromarray(gray).save(d / f"{cp:04x}.png")
            ok.append(cp)
        if bad:
            if s.name == source:
                raise ManifestError(
                    f"source font {source!r} lacks {len(bad)} selected characters "
                    f"(first: U+{bad[0]:04X})"
                )
            log.info("style %s: dropped %d missing/blank glyphs", s.name, len(bad))
            dropped[s.name] = bad
        available[s.name] = ok

    manifest = DatasetManifest(
        resolution=config.resolution,
        styles=styles,
        source_style=styles[train_names.index(source)],
        seen=seen,
        unseen=unseen,
        fonts={n: str(Path(p).resolve()) for n, p in zip(names, paths)},
        available=available,
        table_fingerprint=table.fingerprint(),
        seed=config.seed,
        dropped=dropped,
    )
    if out_dir is not None:
        manifest.save(out_dir)
    return manifest


class GlyphStore:
    """Read-through glyph access with an in-memory cache.

    Glyphs come from the manifest's PNG cache when present, otherwise they
    are rasterized from the font (and written to the cache if one exists).
    """

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._mem: dict[tuple[str, int], np.ndarray] = {}
        self._fonts: dict[str, object] = {}

    def _font(self, name: str):
        if name not in self._fonts:
            self._fonts[name] = open_font(self.manifest.fonts[name])
        return self._fonts[name]

    def gray(self, style, character) -> np.ndarray:
        m = self.manifest
        st = m.style(style)
        cp = _codepoint(character)
        key = (st.name, cp)
        if key in self._mem:
            return self._mem[key]
        if not m.has(st, cp):
            raise GlyphNotFoundError(f"({st.name}, U+{cp:04X}) is not in the manifest")
        path = m.glyph_path(st, cp) if m.cache_dir is not None else None
        if path is not None and path.exists():
            gray = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
        else:
            gray = render_gray(self._font(st.name), cp, m.resolution)
            if path is not None:
                try:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    Image.fromarray(gray).save(path)
                except OSError:
                    pass
        self._mem[key] = gray
        return gray

    def pixels(self, style, character) -> np.ndarray:
        return to_float(self.gray(style, character))

    def glyph(self, style, character, table: DecompositionTable | None = None) -> GlyphImage:
        st = self.manifest.style(style)
        char = table.character(_codepoint(character)) if table is not None else character
        return GlyphImage(self.pixels(st, character), st, char)

    def preload(self, styles=None, characters=None) -> None:
        m = self.manifest
        for st in styles or m.styles:
            for cp in m.available_chars(st, characters):
                self.gray(st, cp)


def load_glyph(manifest: DatasetManifest, style, character, store: GlyphStore | None = None) -> GlyphImage:
    store = store or GlyphStore(manifest)
    return store.glyph(style, character)
