"""End-to-end experiments on synthetic blobs, each returning an :class:`EvalReport`.

These are the functions behind the ``calibrate``, ``mislabel``, ``ood``,
``prune``, ``validate-oracle`` and ``bench`` subcommands. They only compose
library calls, so a report can be reproduced from Python with the same
:class:`~ifcomp.config.RunConfig`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .curvature import fit_ekfac
from .data import (
    Dataset,
    blob_splits,
    corrupt,
    cyclic_map,
    inject_asymmetric_noise,
    inject_symmetric_noise,
    make_ood_split,
)
from .evaluation import ScoringInputs, auroc, bin_table, ece, pearson_r, spearman_r, time_scoring
from .influence import bif_batch, grad_norm_batch, self_influence_batch
from .model import MlpParams, forward, softmax_temp
from .pnml import PnmlConfig, boltzmann_pnml_exact, pnml_distribution, score_arrays
from .train import TrainConfig, accuracy, bpbo_finetune, train_base

REPORT_SCHEMA_VERSION = 1


@dataclass
class EvalReport:
    """Metrics plus row tables; ``rows`` is the main CSV, ``tables`` extra ones."""

    task: str
    config: dict
    metrics: dict
    rows: list[dict] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": self.task,
            "config": self.config,
            "metrics": self.metrics,
            "rows": self.rows,
            "tables": self.tables,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = self.task.replace("-", "_")
        written = [out_dir / f"{stem}.json"]
        written[0].write_text(self.to_json())
        for name, rows in [(stem, self.rows)] + [(f"{stem}_{k}", v) for k, v in sorted(self.tables.items())]:
            if rows:
                path = out_dir / f"{name}.csv"
                write_rows(rows, path)
                written.append(path)
        return written


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_rows(rows: list[dict], path) -> None:
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: _plain(v) for k, v in r.items()})


# --- shared helpers ---------------------------------------------------------------


def blob_problem(cfg: RunConfig, sizes: dict, seed: Optional[int] = None) -> dict[str, Dataset]:
    t = cfg["task"]
    return blob_splits(t["classes"], t["dim"], sizes, t["spread"], seed=cfg.seed if seed is None else seed)


def train_early_stopped(train: Dataset, val: Dataset, config: TrainConfig) -> tuple[MlpParams, int, list[dict]]:
    """Train for ``config.epochs`` and keep the epoch with the best validation accuracy."""
    best = {"acc": -1.0, "params": None, "epoch": 0}
    curve: list[dict] = []

    def on_epoch(epoch, params, loss, acc):
        va = accuracy(params, val.features, val.labels)
        curve.append({"epoch": epoch, "loss": loss, "train_acc": acc, "val_acc": va})
        if va > best["acc"]:
            best.update(acc=va, params=params, epoch=epoch)

    final = train_base(train, config, on_epoch=on_epoch)
    if best["params"] is None:
        return final, config.epochs, curve
    return best["params"], best["epoch"], curve


def fit_model(cfg: RunConfig, train: Dataset, val: Optional[Dataset] = None, seed: Optional[int] = None):
    tcfg = cfg.train_config(seed=seed)
    if cfg["train"]["early_stopping"] and val is not None:
        params, epoch, curve = train_early_stopped(train, val, tcfg)
        return params, {"best_epoch": epoch}, curve
    curve: list[dict] = []
    params = train_base(train, tcfg, on_epoch=lambda e, p, l, a: curve.append({"epoch": e, "loss": l, "train_acc": a}))
    return params, {}, curve


def _curvature(cfg: RunConfig, params: MlpParams, train: Dataset, beta: Optional[float] = None, seed=None):
    return fit_ekfac(params, train, cfg.beta if beta is None else beta, delta=cfg.delta,
                     labels=cfg["curvature"]["labels"], seed=cfg.seed if seed is None else seed)


def _ecdf_summary(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"median": float(np.median(v)), "q25": float(np.quantile(v, 0.25)), "q75": float(np.quantile(v, 0.75))}


# --- calibration ------------------------------------------------------------------


def calibrate(cfg: RunConfig) -> EvalReport:
    """ECE of the base model and of the pNML output under input corruption.

    ``alpha`` is picked from ``task.alpha_grid`` by mean ECE over corrupted
    copies of a held-out validation split, one per severity.
    """
    t = cfg["task"]
    splits = blob_problem(cfg, {"train": t["n_per_class"], "val": t["val_per_class"], "test": t["test_per_class"]})
    train, val, test = splits["train"], splits["val"], splits["test"]
    params, train_info, _ = fit_model(cfg, train, val)
    curv = _curvature(cfg, params, train)
    n = len(train)
    grid = t["alpha_grid"]
    base_seed = 1000 * cfg.seed

    def eces(ds: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        bifs, probs = bif_batch(curv, params, ds.features, cfg.beta)
        values = []
        for a in grid:
            q = pnml_distribution(probs, bifs, cfg.pnml_config(n, alpha=a))
            values.append(ece(q.max(axis=1), q.argmax(axis=1) == ds.labels))
        return np.array(values), probs, bifs

    val_curves = np.array([eces(corrupt(val, s, t["corruption"], base_seed + 100 + s))[0] for s in t["severities"]])
    mean_val = val_curves.mean(axis=0)
    best = int(np.argmin(mean_val))
    alpha = float(grid[best])

    rows, reliability, metrics_sev = [], [], {}
    for s in t["severities"]:
        base_e, tuned_e, accs = [], [], []
        for j in range(t["corruption_seeds"]):
            ds = corrupt(test, s, t["corruption"], base_seed + j)
            bifs, probs = bif_batch(curv, params, ds.features, cfg.beta)
            base = pnml_distribution(probs, bifs, cfg.pnml_config(n, alpha=0.0))
            tuned = pnml_distribution(probs, bifs, cfg.pnml_config(n, alpha=alpha))
            correct_b = base.argmax(axis=1) == ds.labels
            correct_t = tuned.argmax(axis=1) == ds.labels
            eb, et = ece(base.max(axis=1), correct_b), ece(tuned.max(axis=1), correct_t)
            base_e.append(eb)
            tuned_e.append(et)
            accs.append(float(correct_b.mean()))
            rows.append({"severity": s, "corruption_seed": j, "accuracy": float(correct_b.mean()),
                         "ece_base": eb, "ece_ifcomp": et})
            if j == 0:
                for method, q, c in (("base", base, correct_b), ("ifcomp", tuned, correct_t)):
                    for r in bin_table(q.max(axis=1), c).rows():
                        reliability.append({"severity": s, "method": method, **r})
        metrics_sev[str(s)] = {
            "ece_base": _ecdf_summary(base_e),
            "ece_ifcomp": _ecdf_summary(tuned_e),
            "accuracy": float(np.mean(accs)),
        }
    metrics = {
        "alpha": alpha,
        "validation_ece": {repr(float(a)): float(e) for a, e in zip(grid, mean_val)},
        "severity": metrics_sev,
        "clean_accuracy": accuracy(params, test.features, test.labels),
        **train_info,
    }
    return EvalReport("calibrate", cfg.as_text_dict(), metrics, rows, {"reliability": reliability})


# --- label noise ----------------------------------------------------------------------


def _noisy(cfg: RunConfig, train: Dataset):
    t = cfg["task"]
    if t["noise_kind"] == "symmetric":
        return inject_symmetric_noise(train, t["noise_rate"], cfg.seed)
    return inject_asymmetric_noise(train, cyclic_map(train.num_classes), t["noise_rate"], cfg.seed)


def mislabel_scores(cfg: RunConfig, params: MlpParams, train: Dataset, beta: Optional[float] = None) -> dict[str, np.ndarray]:
    """Per-example scores: IF-COMP total, its two terms, self-influence and gradient norm."""
    beta = cfg.beta if beta is None else beta
    curv = _curvature(cfg, params, train, beta=beta)
    bifs, probs = bif_batch(curv, params, train.features, beta)
    s = score_arrays(bifs, probs, train.labels, PnmlConfig(0.0, beta, len(train)))
    curv1 = curv if beta == 1.0 else _curvature(cfg, params, train, beta=1.0)
    return {
        "ifcomp": s["total"],
        "error": s["error"],
        "par_comp": s["par_comp"],
        "self_influence": self_influence_batch(curv1, params, train.features, train.labels),
        "grad_norm": grad_norm_batch(params, train.features, beta),
    }


def complexity_trace(cfg: RunConfig, train: Dataset, flipped: np.ndarray) -> list[dict]:
    """AUROC of the error, parametric and total terms at periodic checkpoints."""
    t = cfg["task"]
    checkpoints: list[tuple[int, MlpParams]] = []

    def on_epoch(epoch, params, loss, acc):
        if epoch % t["trace_every"] == 0:
            checkpoints.append((epoch, params))

    train_base(train, cfg.train_config(epochs=t["trace_epochs"]), on_epoch=on_epoch)
    rows = []
    for epoch, params in checkpoints:
        s = mislabel_scores(cfg, params, train, beta=t["trace_beta"])
        rows.append({
            "epoch": epoch,
            "auroc_error": auroc(s["error"], flipped),
            "auroc_par_comp": auroc(s["par_comp"], flipped),
            "auroc_total": auroc(s["ifcomp"], flipped),
            "train_acc": accuracy(params, train.features, train.labels),
        })
    return rows


def mislabel(cfg: RunConfig, trace: bool = True) -> EvalReport:
    """Rank noisy-label training points; flipped labels are the positives."""
    t = cfg["task"]
    splits = blob_problem(cfg, {"train": t["n_per_class"], "val": t["val_per_class"]})
    train, record = _noisy(cfg, splits["train"])
    flipped = record.flipped
    if flipped.all() or not flipped.any():
        # AUROC needs both clean and flipped examples.
        auroc(np.zeros(len(flipped)), flipped)
    params, train_info, _ = fit_model(cfg, train, splits["val"])
    scores = mislabel_scores(cfg, params, train)
    metrics = {
        "auroc": {k: auroc(v, flipped) for k, v in scores.items()},
        "flipped": record.count,
        "n": len(train),
        "val_accuracy": accuracy(params, splits["val"].features, splits["val"].labels),
        **train_info,
    }
    rows = [
        {"id": i, "flipped": int(flipped[i]), **{k: float(v[i]) for k, v in scores.items()}}
        for i in range(len(train))
    ]
    tables = {}
    if trace and t["trace_every"] > 0:
        tables["trace"] = complexity_trace(cfg, train, flipped)
    return EvalReport("mislabel", cfg.as_text_dict(), metrics, rows, tables)


# --- OOD detection ----------------------------------------------------------------------


def _ood_auroc(cfg: RunConfig, params, train, beta: float, kind: str, seed: int) -> dict[str, float]:
    t = cfg["task"]
    id_test, ood = make_ood_split(train, kind, seed=seed, separation=t["ood_separation"])
    x = np.concatenate([id_test.features, ood.features])
    is_ood = np.r_[np.zeros(len(id_test)), np.ones(len(ood))]
    curv = _curvature(cfg, params, train, beta=beta)
    bifs, probs = bif_batch(curv, params, x, beta)
    msp = softmax_temp(forward(params, x).logits, 1.0).max(axis=1)
    return {
        "ifcomp": auroc(np.sum(probs * bifs, axis=1), is_ood),
        "max_softmax": auroc(-msp, is_ood),
        "grad_norm": auroc(grad_norm_batch(params, x, beta), is_ood),
    }


def ood(cfg: RunConfig) -> EvalReport:
    """Separate held-out ID points from OOD points by parametric complexity.

    With a non-empty ``task.beta_grid`` the temperature is chosen on a
    shifted-blob validation set generated from a different seed.
    """
    t = cfg["task"]
    train = blob_problem(cfg, {"train": t["n_per_class"]})["train"]
    params, train_info, _ = fit_model(cfg, train)
    beta = cfg.beta
    tuning = {}
    if t["beta_grid"]:
        for b in t["beta_grid"]:
            tuning[repr(float(b))] = _ood_auroc(cfg, params, train, b, "shifted_blobs", cfg.seed + 7919)["ifcomp"]
        beta = float(max(t["beta_grid"], key=lambda b: tuning[repr(float(b))]))
    rows, metrics = [], {"beta": beta, "beta_tuning": tuning, **train_info}
    for kind in t["ood_kinds"]:
        res = _ood_auroc(cfg, params, train, beta, kind, cfg.seed)
        metrics[kind] = res
        rows += [{"ood_kind": kind, "method": m, "auroc": v} for m, v in res.items()]
    return EvalReport("ood", cfg.as_text_dict(), metrics, rows)


# --- pruning --------------------------------------------------------------------------


def prune(cfg: RunConfig) -> EvalReport:
    """Drop the lowest-complexity training points, retrain, compare with random drops.

    Degradation at a fraction is ``max(0, acc_full - acc_pruned)``.
    """
    t = cfg["task"]
    rows = []
    for s in range(t["prune_seeds"]):
        seed = cfg.seed + s
        splits = blob_problem(cfg, {"train": t["n_per_class"], "test": t["test_per_class"]}, seed=seed)
        train, test = splits["train"], splits["test"]
        tcfg = cfg.train_config(seed=seed)
        params = train_base(train, tcfg)
        full_acc = accuracy(params, test.features, test.labels)
        curv = _curvature(cfg, params, train, seed=seed)
        bifs, probs = bif_batch(curv, params, train.features, cfg.beta)
        total = score_arrays(bifs, probs, train.labels, cfg.pnml_config(len(train)))["total"]
        order = {
            "ifcomp": np.argsort(total, kind="stable"),
            "random": np.random.default_rng([seed, 9]).permutation(len(train)),
        }
        for frac in t["prune_fractions"]:
            k = int(round(frac * len(train)))
            for method, idx in order.items():
                keep = np.sort(idx[k:])
                acc = accuracy(train_base(train.subset(keep), tcfg), test.features, test.labels)
                rows.append({"seed": seed, "fraction": frac, "method": method, "full_accuracy": full_acc,
                             "accuracy": acc, "degradation": max(0.0, full_acc - acc)})
    metrics = {}
    for frac in t["prune_fractions"]:
        entry = {}
        for method in ("ifcomp", "random"):
            sel = [r for r in rows if r["fraction"] == frac and r["method"] == method]
            entry[method] = {"accuracy": float(np.mean([r["accuracy"] for r in sel])),
                             "degradation": float(np.mean([r["degradation"] for r in sel]))}
        metrics[repr(float(frac))] = entry
    return EvalReport("prune", cfg.as_text_dict(), {"fractions": metrics}, rows)


# --- oracle validation ------------------------------------------------------------------


def probe_points(cfg: RunConfig, train: Dataset) -> tuple[np.ndarray, list[str]]:
    """Half held-out ID points, half from a shifted blob problem."""
    t = cfg["task"]
    k = train.num_classes
    n_id = t["probes"] // 2
    n_ood = t["probes"] - n_id
    test = blob_problem(cfg, {"train": t["n_per_class"], "test": -(-n_id // k)})["test"]
    _, shifted = make_ood_split(train, "shifted_blobs", seed=cfg.seed + 1, n_ood=n_ood,
                                separation=t["probe_separation"])
    x = np.concatenate([test.features[:n_id], shifted.features[:n_ood]])
    kinds = ["id"] * min(n_id, len(test)) + ["shifted"] * min(n_ood, len(shifted))
    return x, kinds


def oracle_complexity(params: MlpParams, train: Dataset, x: np.ndarray, bpbo_cfg) -> float:
    """Log-normalizer of the per-label fine-tuned hindsight probabilities."""
    q = [bpbo_finetune(params, train, (x, y), bpbo_cfg).prob_after for y in range(params.num_classes)]
    return boltzmann_pnml_exact(q)[1]


def validate_oracle(cfg: RunConfig) -> EvalReport:
    t = cfg["task"]
    train = blob_problem(cfg, {"train": t["n_per_class"]})["train"]
    params, train_info, _ = fit_model(cfg, train)
    x, kinds = probe_points(cfg, train)
    curv = _curvature(cfg, params, train)
    bifs, probs = bif_batch(curv, params, x, cfg.beta)
    estimate = np.sum(probs * bifs, axis=1)
    bpbo_cfg = cfg.bpbo_config()
    oracle = np.array([oracle_complexity(params, train, xi, bpbo_cfg) for xi in x])
    rows = [{"probe": i, "kind": kinds[i], "par_comp": float(estimate[i]), "oracle": float(oracle[i])}
            for i in range(len(x))]
    metrics = {
        "pearson": pearson_r(estimate, oracle),
        "spearman": spearman_r(estimate, oracle),
        "probes": len(x),
        "train_accuracy": accuracy(params, train.features, train.labels),
        **train_info,
    }
    return EvalReport("validate-oracle", cfg.as_text_dict(), metrics, rows)


# --- timing ------------------------------------------------------------------------------


def bench(cfg: RunConfig) -> EvalReport:
    """Per-example seconds for IF-COMP scoring, the gradient-norm baseline and the oracle.

    Wall-clock numbers differ between runs; this is the one report that is
    not byte-reproducible.
    """
    t = cfg["task"]
    splits = blob_problem(cfg, {"train": t["n_per_class"], "test": max(1, -(-t["bench_examples"] // t["classes"]))})
    train = splits["train"]
    params, _, _ = fit_model(cfg, train)
    curv = _curvature(cfg, params, train)
    inputs = ScoringInputs(params, curv, train, splits["test"].features[: t["bench_examples"]],
                           cfg.pnml_config(len(train)), cfg.bpbo_config())
    times = {m: time_scoring(m, inputs, reps=t["bench_reps"] if m != "bpbo_oracle" else 1)
             for m in ("grad_norm", "ifcomp", "bpbo_oracle")}
    rows = [{"method": m, "seconds_per_example": v, "speedup_vs_oracle": times["bpbo_oracle"] / v}
            for m, v in times.items()]
    return EvalReport("bench", cfg.as_text_dict(), {"seconds_per_example": times,
                                                    "ifcomp_speedup": times["bpbo_oracle"] / times["ifcomp"]}, rows)


TASKS = {
    "calibrate": calibrate,
    "mislabel": mislabel,
    "ood": ood,
    "prune": prune,
    "validate-oracle": validate_oracle,
    "bench": bench,
}
