"""Few-shot generation, interpolation and glyph mixing with a trained bundle.

    python demos/03_few_shot.py [data_dir]

Uses the checkpoint from 02_train_tiny.py; images land in <data_dir>/demo-out.
A tiny model makes blurry glyphs, the point here is the API.
"""
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from lffont.decomposition import load_table
from lffont.glyphset import DatasetManifest, GlyphStore
from lffont.inference import (FontGenerator, ReferenceSet, extract_style_factor, fontmix,
                              interpolate_style)
from lffont.networks import load_checkpoint

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-data")
manifest = DatasetManifest.load(root / "data")
table = load_table(root / "corpus" / "table.tsv")
store = GlyphStore(manifest)
bundle, _ = load_checkpoint(root / "run" / "final.pt", table)
gen = FontGenerator(bundle, manifest, table, store)
out = root / "demo-out"
out.mkdir(exist_ok=True)


def save_row(glyphs, name):
    row = np.concatenate([g.pixels for g in glyphs], axis=1)
    Image.fromarray(((row + 1) * 127.5).round().clip(0, 255).astype(np.uint8)).save(out / name)


# a held-out font, known only through 4 reference glyphs
style = manifest.test_styles[0]
chars = manifest.available_chars(style)
refs = ReferenceSet.from_manifest(manifest, table, style, chars[:4], store)
z = extract_style_factor(bundle, refs, table)
targets = chars[4:12]
fake = [gen.generate(z, c) for c in targets]
real = [store.glyph(style, c, table) for c in targets]
save_row(real, "real.png")
save_row(fake, "fake.png")
err = np.mean([np.abs(a.pixels - b.pixels).mean() for a, b in zip(fake, real)])
print(f"{style.name}: mean L1 to ground truth {err:.3f} over {len(targets)} glyphs")

# walking between two fonts
other = manifest.test_styles[1]
refs_b = ReferenceSet.from_manifest(manifest, table, other, manifest.available_chars(other)[:4], store)
save_row(interpolate_style(bundle, refs, refs_b, targets[0], 6, manifest, table, store), "interp.png")

# style-level mixing of two single glyphs
x1, x2 = refs.glyphs[0], refs_b.glyphs[0]
mixed = [fontmix(bundle, x1, x2, targets[1], lam, "style", manifest, table, generator=gen)[0]
         for lam in (0.0, 0.25, 0.5, 0.75, 1.0)]
save_row(mixed, "mix.png")
print("wrote", sorted(p.name for p in out.iterdir()))
