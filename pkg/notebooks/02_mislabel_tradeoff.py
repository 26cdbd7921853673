"""
Finding flipped labels and the error/complexity tradeoff
========================================================

Flip 40% of the labels, train, and rank training points by total
complexity. Then watch how the error term and the influence term trade off
as training goes on.
"""

from ifcomp.config import resolve
from ifcomp.tasks import mislabel

cfg = resolve("mislabel", None, [("task", "trace_epochs", "60")])
report = mislabel(cfg)

print("flipped:", report.metrics["flipped"], "of", report.metrics["n"])
for method, value in sorted(report.metrics["auroc"].items(), key=lambda kv: -kv[1]):
    print(f"{method:15s} AUROC {value:.4f}")

# Early on the loss alone separates noisy points; once the network starts
# memorizing them the error term fades and the influence term takes over.
print("\nepoch  error  par_comp  total")
for row in report.tables["trace"]:
    print(f"{row['epoch']:5d}  {row['auroc_error']:.3f}  {row['auroc_par_comp']:.3f}     {row['auroc_total']:.3f}")
