"""Build a small synthetic glyph dataset and look at how characters decompose.

    python demos/01_dataset.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from lffont.decomposition import component_frequency, covers, load_table
from lffont.glyphset import GlyphStore, ManifestConfig, build_manifest, write_corpus

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-data")

# 8 fonts over a 120-character script built from 24 components
font_dir, table_path = write_corpus(out / "corpus", n_styles=8, n_characters=120, n_components=24, seed=0)
table = load_table(table_path)
print(f"{len(table)} characters, {table.n_components} components")

freq = component_frequency(table)
common = sorted(freq.items(), key=lambda kv: -kv[1])[:5]
print("most shared components:", [(u.char, n) for u, n in common])

c = table.characters[0]
print(f"{chr(c.codepoint)!r} ->", [u.char for u in table.decompose(c)])

# a few references usually cover many more characters than themselves
refs = [ch.codepoint for ch in table.characters[:6]]
n_cov = sum(covers(table, refs, ch) for ch in table.characters)
print(f"6 references cover {n_cov} of {len(table)} characters")

manifest = build_manifest(font_dir, table, ManifestConfig(resolution=48, n_test_styles=2, seed=0),
                          out_dir=out / "data")
print("train styles:", [s.name for s in manifest.train_styles])
print("test styles: ", [s.name for s in manifest.test_styles])
print(f"seen {len(manifest.seen)}, unseen {len(manifest.unseen)}")

store = GlyphStore(manifest)
g = store.glyph(manifest.source_style, c.codepoint, table)
print("glyph", g.pixels.shape, "range", float(g.pixels.min()), float(g.pixels.max()))
ink = np.mean([(store.pixels(s, c.codepoint) < 0).mean() for s in manifest.styles])
print(f"ink fraction across styles: {ink:.3f}")
print("manifest written to", out / "data" / "manifest.json")
