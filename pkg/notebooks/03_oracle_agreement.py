"""
How close is the estimate to the fine-tuned oracle?
===================================================

For a handful of probes, fine-tune the base model once per candidate label
and compare the resulting log-normalizer with the influence estimate.
"""

import numpy as np

from ifcomp.config import resolve
from ifcomp.tasks import validate_oracle

cfg = resolve("validate-oracle", None, [("task", "probes", "16")])
report = validate_oracle(cfg)

print(f"pearson {report.metrics['pearson']:.3f}   spearman {report.metrics['spearman']:.3f}")
rows = sorted(report.rows, key=lambda r: r["par_comp"])
est = np.array([r["par_comp"] for r in rows])
orc = np.array([r["oracle"] for r in rows])
for r in rows:
    print(f"{r['kind']:8s} estimate {r['par_comp']:10.3f}   oracle {r['oracle']:.4f}")

# The two live on different scales: the estimate is a first-order term,
# the oracle a log of summed probabilities. Only the ordering is compared.
print("estimate range", est.min(), est.max(), " oracle range", orc.min(), orc.max())
