"""
Scoring a test set with IF-COMP
===============================

Train a small MLP on Gaussian blobs, fit the EKFAC curvature once, then
score held-out points. Run with ``python notebooks/01_scoring_walkthrough.py``.
"""

import numpy as np

from ifcomp.curvature import fit_ekfac
from ifcomp.data import blob_splits
from ifcomp.pnml import PnmlConfig, score_dataset, to_bits
from ifcomp.train import TrainConfig, accuracy, train_base

# 4 classes in 8 dimensions, 200 training points per class
splits = blob_splits(4, 8, {"train": 200, "test": 50}, spread=2.0, seed=0)
train, test = splits["train"], splits["test"]

params = train_base(train, TrainConfig(epochs=30, lr=0.02, hidden=(64, 64)))
print("test accuracy:", accuracy(params, test.features, test.labels))

# The curvature is fit at the same inverse temperature used for scoring.
beta = 1.0
curv = fit_ekfac(params, train, beta, delta=1e-3)
for i, layer in enumerate(curv.layers):
    print(f"layer {i}: moments in [{layer.moments.min():.2e}, {layer.moments.max():.2e}]")

records = score_dataset(curv, params, test.features, test.labels, PnmlConfig(alpha=1.0, beta=beta, n=len(train)))

# Points with the largest total complexity are the ones the model would
# bend most to accommodate.
total = np.array([r.total for r in records])
for r in sorted(records, key=lambda r: -r.total)[:5]:
    print(f"id {r.id:3d}  error {r.error:.3f}  par_comp {r.par_comp:9.2f}  total {to_bits(r.total):.3f} bits")

# With alpha = 0 the pNML output is just the softmax; larger alpha moves
# mass toward labels with high influence.
for alpha in (0.0, 1.0, 100.0):
    r = score_dataset(curv, params, test.features[:1], None, PnmlConfig(alpha, beta, len(train)))[0]
    print(f"alpha={alpha:6.1f}  pnml={np.round(r.pnml, 4)}")
