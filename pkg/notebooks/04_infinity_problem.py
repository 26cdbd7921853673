"""
Why unrestricted refits are useless
===================================

A wide network retrained from scratch with the test point added fits any
label it is given. Every candidate then gets probability near one and the
normalized distribution collapses to uniform.
"""

import numpy as np

from ifcomp.data import blob_splits
from ifcomp.model import forward, softmax_temp
from ifcomp.pnml import boltzmann_pnml_exact
from ifcomp.train import TrainConfig, retrain_unrestricted

splits = blob_splits(4, 8, {"train": 12, "test": 2}, spread=2.0, seed=0)
train = splits["train"]
cfg = TrainConfig(epochs=300, lr=0.05, hidden=(256, 256))

for x in splits["test"].features[:3]:
    q = []
    for y in range(4):
        fit = retrain_unrestricted(train, (x, y), None, cfg)
        q.append(softmax_temp(forward(fit, x).logits, 1.0)[y])
    dist, comp = boltzmann_pnml_exact(q)
    print("hindsight probs", np.round(q, 4), " pNML", np.round(dist, 4), f" complexity {comp:.4f} (log 4 = {np.log(4):.4f})")
