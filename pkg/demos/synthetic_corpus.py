"""Generate the shapes corpus, sample an episode and degrade its support mask.

Run with ``python3 demos/synthetic_corpus.py [out_dir]``.
"""

import sys
import tempfile

import numpy as np

from ridgeproto.episodes import degrade_mask, sample_episode
from ridgeproto.synthdata import SynthConfig, generate, stream

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="shapes-")
config = SynthConfig(images_per_class=8)
index = generate(config, out)
print(f"wrote {len(index.records)} images for {len(index.class_names)} classes to {out}")

for fold in index.folds:
    held = [index.class_names[c] for c in index.classes("test", fold)]
    print(f"fold {fold}: held-out {', '.join(held)}")

ep = sample_episode(index, "train", 2, 1, 1, stream(0, "demo"), held_out=0)
print("roster:", [index.class_names[c] for c in ep.roster])

shot = ep.support[0][0]
dense = shot.mask
g = np.random.default_rng(1)
for mode in ("bbox", "scribble"):
    weak = degrade_mask(dense, mode, g)
    print(f"{mode:>8}: {int((weak.labels > 0).sum())} labeled px vs {int((dense.labels > 0).sum())} dense")
