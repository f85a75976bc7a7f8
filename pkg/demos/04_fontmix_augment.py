"""Character classification with few images per class: vanilla vs CutMix vs FontMix.

    python demos/04_fontmix_augment.py [data_dir]

FontMix builds extra training images by mixing style factors (or
characters) of real glyphs with a trained generator.  With a tiny
generator and a handful of epochs the numbers are noisy; the acceptance
suite runs the same comparison at desk scale over three seeds.
"""
import sys
from pathlib import Path

import torch

from lffont.augment import AugmentConfig, augment_train
from lffont.decomposition import load_table
from lffont.glyphset import DatasetManifest, GlyphStore
from lffont.networks import load_checkpoint

torch.set_num_threads(1)
root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-data")
manifest = DatasetManifest.load(root / "data")
table = load_table(root / "corpus" / "table.tsv")
store = GlyphStore(manifest)
bundle, _ = load_checkpoint(root / "run" / "final.pt", table)

for mode in ("vanilla", "cutmix", "fontmix-both"):
    cfg = AugmentConfig(mode=mode, n_chars=20, images_per_char=4, epochs=15, batch_size=32, seed=0)
    _, report = augment_train(cfg, manifest, table, bundle=bundle, store=store)
    print(f"{mode:13s} accuracy {report.accuracy:.3f}  ({report.n_train} train / {report.n_test} test images)")
