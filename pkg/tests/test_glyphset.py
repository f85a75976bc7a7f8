import logging
import shutil
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from lffont.decomposition import load_table, table_from_mapping
from lffont.glyphset import (
    DatasetManifest,
    GlyphNotFoundError,
    GlyphStore,
    InvalidGlyphError,
    ManifestConfig,
    ManifestError,
    StyleId,
    TrueTypeFont,
    build_manifest,
    character_from_filename,
    glyph_from_png,
    load_glyph,
    open_font,
    render_glyph,
    write_corpus,
)

DEJAVU = Path("/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf")
needs_ttf = pytest.mark.skipif(not DEJAVU.exists(), reason="no system TrueType font")


@pytest.fixture(scope="module")
def desk_like(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    font_dir, table_path = write_corpus(root, 10, 300, 40, seed=0)
    return font_dir, load_table(table_path)


def test_desk_split_arithmetic(desk_like):
    font_dir, table = desk_like
    m = build_manifest(font_dir, table, ManifestConfig(resolution=32, unseen_ratio=0.1, seed=0))
    assert (len(m.seen), len(m.unseen)) == (270, 30)
    assert not set(m.seen) & set(m.unseen)
    assert m.source_style in m.train_styles


def test_build_is_reproducible(desk_like):
    font_dir, table = desk_like
    cfg = ManifestConfig(resolution=32, n_test_styles=3, seed=5)
    a, b = build_manifest(font_dir, table, cfg), build_manifest(font_dir, table, cfg)
    assert a.to_json() == b.to_json()
    assert len(a.test_styles) == 3 and len(a.train_styles) == 7
    c = build_manifest(font_dir, table, ManifestConfig(resolution=32, n_test_styles=3, seed=6))
    assert c.unseen != a.unseen or c.test_styles != a.test_styles


def test_explicit_lists(desk_like):
    font_dir, table = desk_like
    names = sorted(p.name.split(".")[0] for p in font_dir.iterdir())
    unseen = [chr(table.characters[i].codepoint) for i in (0, 5, 9)]
    m = build_manifest(font_dir, table, ManifestConfig(resolution=32, test_styles=names[-2:], unseen=unseen,
                                                       source_font=names[1]))
    assert [s.name for s in m.test_styles] == names[-2:]
    assert m.source_style.name == names[1]
    assert m.unseen == sorted(ord(c) for c in unseen)
    with pytest.raises(ManifestError):
        build_manifest(font_dir, table, ManifestConfig(test_styles=[names[1]], source_font=names[1]))
    with pytest.raises(ManifestError):
        build_manifest(font_dir, table, ManifestConfig(source_font="nope"))


def test_identical_fonts_are_distinct_styles(tmp_path, desk_like):
    font_dir, table = desk_like
    first = sorted(font_dir.iterdir())[0]
    d = tmp_path / "twins"
    d.mkdir()
    shutil.copy(first, d / first.name.replace(first.name.split(".")[0], "twin_a"))
    shutil.copy(first, d / first.name.replace(first.name.split(".")[0], "twin_b"))
    m = build_manifest(d, table, ManifestConfig(resolution=32, n_characters=20))
    a, b = m.styles
    assert a.id != b.id and a.name != b.name
    store = GlyphStore(m)
    for c in m.characters[:5]:
        assert np.array_equal(store.pixels(a, c), store.pixels(b, c))


def test_missing_glyphs_are_dropped_and_logged(tmp_path, caplog):
    font_dir, table_path = write_corpus(tmp_path, 4, 60, 14, seed=1, missing_rate=0.2)
    table = load_table(table_path)
    with caplog.at_level(logging.INFO, logger="lffont.glyphset.manifest"):
        m = build_manifest(font_dir, table, ManifestConfig(resolution=32, seed=1))
    assert m.dropped and "dropped" in caplog.text
    for name, lost in m.dropped.items():
        assert name != m.source_style.name
        for c in lost:
            assert not m.has(name, c)
            with pytest.raises(GlyphNotFoundError):
                load_glyph(m, name, c)
    # source covers everything
    assert m.available_chars(m.source_style) == m.characters


def test_source_missing_a_character_is_fatal(tmp_path):
    font_dir, table_path = write_corpus(tmp_path, 2, 30, 10, seed=2)
    table = load_table(table_path)
    src = sorted(font_dir.iterdir())[0]
    font = open_font(src)
    from lffont.glyphset.synthetic import write_font
    write_font(src, font.style, font.script, exclude=[font.codepoints()[0]])
    with pytest.raises(ManifestError, match="lacks"):
        build_manifest(font_dir, table, ManifestConfig(resolution=32))


def test_undecomposable_unseen_is_rejected(desk_like):
    font_dir, table = desk_like
    with pytest.raises(ManifestError):
        build_manifest(font_dir, table, ManifestConfig(unseen=["\u0001"]))


def test_render_contract(desk_like):
    font_dir, table = desk_like
    font = open_font(sorted(font_dir.iterdir())[0])
    cp = font.codepoints()[0]
    a = render_glyph(font, cp, 48)
    b = render_glyph(font, cp, 48)
    assert a.pixels.shape == (48, 48)
    assert a.pixels.min() >= -1 and a.pixels.max() <= 1 and np.isfinite(a.pixels).all()
    assert np.array_equal(a.pixels, b.pixels)
    # white background at the border, some ink inside
    assert a.pixels[0].min() > 0.9 and a.pixels.min() < -0.5
    with pytest.raises(GlyphNotFoundError):
        render_glyph(font, 0x10FFFF, 48)


@needs_ttf
def test_truetype_render():
    font = TrueTypeFont(DEJAVU)
    g = render_glyph(font, "A", 64)
    assert g.pixels.shape == (64, 64) and g.pixels.min() < -0.9 and g.pixels.max() == 1.0
    assert np.array_equal(g.pixels, render_glyph(font, "A", 64).pixels)
    # centred: ink bounding box is symmetric to within a pixel or two
    ys, xs = np.nonzero(g.pixels < 0)
    assert abs((xs.min() + xs.max()) / 2 - 31.5) <= 2 and abs((ys.min() + ys.max()) / 2 - 31.5) <= 2
    with pytest.raises(InvalidGlyphError):
        render_glyph(font, " ", 64)


def test_cache_round_trip(tmp_path, desk_like):
    font_dir, table = desk_like
    cfg = ManifestConfig(resolution=32, n_characters=12, seed=0)
    m = build_manifest(font_dir, table, cfg, out_dir=tmp_path / "data")
    style = m.styles[2]
    cp = m.characters[3]
    path = m.glyph_path(style, cp)
    assert path == tmp_path / "data" / "glyphs" / style.name / f"{cp:04x}.png"
    cached = load_glyph(m, style, cp).pixels
    fresh = render_glyph(open_font(m.fonts[style.name]), cp, 32).pixels
    assert np.array_equal(cached, fresh)
    loaded = DatasetManifest.load(tmp_path / "data")
    assert loaded.to_json() == m.to_json()
    assert np.array_equal(load_glyph(loaded, style.name, cp).pixels, cached)


def test_rootless_manifest_uses_env_cache(tmp_path, desk_like, monkeypatch):
    font_dir, table = desk_like
    m = build_manifest(font_dir, table, ManifestConfig(resolution=32, n_characters=8))
    monkeypatch.delenv("LFFONT_CACHE", raising=False)
    assert m.cache_dir is None
    monkeypatch.setenv("LFFONT_CACHE", str(tmp_path))
    store = GlyphStore(m)
    px = store.pixels(m.styles[0], m.characters[0])
    assert m.glyph_path(m.styles[0], m.characters[0]).exists()
    assert np.array_equal(GlyphStore(m).pixels(m.styles[0], m.characters[0]), px)


def test_source_covers_seen_and_unseen(tiny_corpus):
    manifest, _ = tiny_corpus
    store = GlyphStore(manifest)
    for c in manifest.characters:
        assert store.glyph(manifest.source_style, c).pixels.shape == (manifest.resolution,) * 2


def test_all_glyphs_share_shape(tiny_corpus):
    manifest, _ = tiny_corpus
    store = GlyphStore(manifest)
    shapes = {store.pixels(s, c).shape for s in manifest.styles for c in manifest.available_chars(s)[:10]}
    assert shapes == {(manifest.resolution, manifest.resolution)}


def test_character_from_filename():
    assert character_from_filename("x/4e00.png") == 0x4E00
    assert character_from_filename("U+4E00.png") == 0x4E00
    assert character_from_filename("一.png") == 0x4E00
    assert character_from_filename("notes.png") is None


def test_glyph_from_png(tmp_path):
    table = table_from_mapping({"一": ["a"]})
    arr = np.full((40, 40), 255, np.uint8)
    arr[18:22, 5:35] = 0
    Image.fromarray(arr).save(tmp_path / "4e00.png")
    g = glyph_from_png(tmp_path / "4e00.png", 40, StyleId(0, "hand", "test"), table)
    assert g.character.codepoint == 0x4E00
    assert g.pixels[20, 20] == -1.0 and g.pixels[0, 0] == 1.0
    assert glyph_from_png(tmp_path / "4e00.png", 20).pixels.shape == (20, 20)


def test_unknown_style_and_empty_dir(tmp_path, tiny_corpus):
    manifest, _ = tiny_corpus
    with pytest.raises(GlyphNotFoundError):
        load_glyph(manifest, "no-such-style", manifest.characters[0])
    (tmp_path / "empty").mkdir()
    with pytest.raises(ManifestError):
        build_manifest(tmp_path / "empty", table_from_mapping({"A": ["x"]}), ManifestConfig())
