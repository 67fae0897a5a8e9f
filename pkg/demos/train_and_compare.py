"""Short training runs comparing attribute prototypes against mean prototypes.

This uses a reduced profile so it finishes in about a minute; the numbers
are noisy at this budget.  Run with ``python3 demos/train_and_compare.py``.
"""

import tempfile

from ridgeproto.synthdata import SynthConfig, generate, synth_attributes
from ridgeproto.trainer import desk_profile, evaluate, run

config = SynthConfig(images_per_class=20)
index = generate(config, tempfile.mkdtemp(prefix="shapes-"))
attrs = synth_attributes(config)

results = {}
for mode in ("ridge", "mean"):
    cfg = desk_profile(episodes_total=600, n_eval=100, prototype_mode=mode, seed=1)
    ckpt, report = run(cfg, index, attrs)
    results[mode] = ckpt
    print(f"{mode:>5}: mean_iou={report.mean_iou:.4f} binary_iou={report.binary_iou:.4f}")

ckpt = results["ridge"]
for shots in (1, 5):
    rep = evaluate(ckpt.params, index, attrs, 0, 100, shots=shots, seed=1)
    print(f"ridge {shots}-shot: mean_iou={rep.mean_iou:.4f}")
for annotation in ("bbox", "scribble"):
    rep = evaluate(ckpt.params, index, attrs, 0, 100, annotation=annotation, seed=1)
    print(f"ridge {annotation} support: mean_iou={rep.mean_iou:.4f}")
