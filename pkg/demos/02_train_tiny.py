"""Train a very small model for a few hundred iterations and watch the losses.

    python demos/02_train_tiny.py [data_dir]

Reuses the dataset from 01_dataset.py.  Real runs go through the CLI
(`lffont train --config run.yaml`) or `python -m lffont.desk`.
"""
import sys
from pathlib import Path

import numpy as np
import torch

from lffont.decomposition import load_table
from lffont.glyphset import DatasetManifest, GlyphStore
from lffont.networks import ArchConfig
from lffont.trainer import TrainConfig, Trainer

torch.set_num_threads(1)
root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-data")
manifest = DatasetManifest.load(root / "data")
table = load_table(root / "corpus" / "table.tsv")

arch = ArchConfig(resolution=manifest.resolution, base=8, n_down=2, disc_base=8, disc_layers=3, k=4, norm="in")
cfg = TrainConfig(batch_size=4, n_ref=3, arch=arch, lr_g=1e-3, betas=(0.5, 0.99), adv_scale=0.1, log_every=50)
trainer = Trainer(manifest, table, cfg, store=GlyphStore(manifest), out_dir=root / "run")

trainer.run(1, 200)     # phase 1: references cover the target's components
trainer.run(2, 100)     # phase 2: factorized style features, mixed-style references
trainer.save(root / "run" / "final.pt")

h = trainer.history
for lo in range(0, len(h), 50):
    w = h[lo:lo + 50]
    print(f"it {lo:4d}  phase {w[0]['phase']}  l1 {np.mean([r['l1'] for r in w]):.3f}  "
          f"cls {np.mean([r['cls'] for r in w]):.3f}")
print("checkpoint:", root / "run" / "final.pt")
