"""Calibration, ranking and correlation metrics, plus a per-example timer."""

from __future__ import annotations

import csv
import time
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigurationError, DimensionError
from .influence import bif_all_labels, grad_norm
from .model import MlpParams, forward, softmax_temp
from .pnml import PnmlConfig, boltzmann_pnml_exact, pnml_distribution
from .train import BpboConfig, bpbo_finetune

DEFAULT_BINS = 20


@dataclass(frozen=True)
class BinTable:
    mean_conf: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {"bin": i, "mean_conf": float(c), "acc": float(a), "count": int(n)}
            for i, (c, a, n) in enumerate(zip(self.mean_conf, self.accuracy, self.count))
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["bin", "mean_conf", "acc", "count"])
            w.writeheader()
            w.writerows(self.rows())


def _check_pairs(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise ConfigurationError("empty input")
    return a, b


def bin_table(confidences, correct, bins: int = DEFAULT_BINS) -> BinTable:
    """Equal-count bins over confidence-sorted predictions.

    With ``n = q * bins + r`` the first ``r`` bins get ``q + 1`` elements.
    Empty bins (``n < bins``) are dropped.
    """
    conf, corr = _check_pairs(confidences, correct)
    if np.any(conf < 0) or np.any(conf > 1):
        raise ConfigurationError("confidences must lie in [0, 1]")
    order = np.argsort(conf, kind="stable")
    conf, corr = conf[order], corr[order].astype(np.float64)
    sizes = np.full(bins, len(conf) // bins)
    sizes[: len(conf) % bins] += 1
    sizes = sizes[sizes > 0]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    mc = np.array([conf[s:e].mean() for s, e in zip(edges[:-1], edges[1:])])
    acc = np.array([corr[s:e].mean() for s, e in zip(edges[:-1], edges[1:])])
    return BinTable(mc, acc, sizes)


def ece(confidences, correct, bins: int = DEFAULT_BINS) -> float:
    t = bin_table(confidences, correct, bins)
    return float(np.sum(t.count * np.abs(t.mean_conf - t.accuracy)) / np.sum(t.count))


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with average ranks for ties; positives are ``labels == 1``."""
    s, l = _check_pairs(scores, labels)
    pos = l.astype(bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ConfigurationError("AUROC needs both positive and negative examples")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pearson_r(a, b) -> float:
    a, b = _check_pairs(a, b)
    if len(a) < 2:
        raise ConfigurationError("Pearson correlation needs at least two points")
    da, db = a - a.mean(), b.astype(np.float64) - b.mean()
    sa, sb = np.sqrt(da @ da), np.sqrt(db @ db)
    if sa == 0 or sb == 0:
        raise ConfigurationError("Pearson correlation undefined for zero variance")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def spearman_r(a, b) -> float:
    return pearson_r(rankdata(a), rankdata(b))


# --- timing ---------------------------------------------------------------------


@dataclass
class ScoringInputs:
    """Everything a timed scoring method needs, prepared outside the timer."""

    params: MlpParams
    curvature: object
    train: object
    x: np.ndarray
    pnml: PnmlConfig
    bpbo: BpboConfig


def _ifcomp_one(inp: ScoringInputs, x: np.ndarray) -> np.ndarray:
    b = bif_all_labels(inp.curvature, inp.params, x, inp.pnml.beta)
    probs = softmax_temp(forward(inp.params, x).logits, inp.pnml.beta)
    return pnml_distribution(probs, b, inp.pnml)


def _oracle_one(inp: ScoringInputs, x: np.ndarray) -> np.ndarray:
    q = []
    for y in range(inp.params.num_classes):
        res = bpbo_finetune(inp.params, inp.train, (x, y), inp.bpbo)
        q.append(res.prob_after)
    return boltzmann_pnml_exact(q)[0]


def _grad_norm_one(inp: ScoringInputs, x: np.ndarray) -> float:
    return grad_norm(inp.params, x, inp.pnml.beta)


SCORERS = {"ifcomp": _ifcomp_one, "bpbo_oracle": _oracle_one, "grad_norm": _grad_norm_one}


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=1)


def time_scoring(method: str, inputs: ScoringInputs, reps: int = 3, warmup: int = 1) -> float:
    """Median over ``reps`` of wall-clock seconds per example."""
    if method not in SCORERS:
        raise ConfigurationError(f"unknown scoring method {method!r}; choose from {sorted(SCORERS)}")
    if reps < 1:
        raise ConfigurationError("reps must be >= 1")
    fn = SCORERS[method]
    xs = np.atleast_2d(inputs.x)
    with _single_thread():
        for _ in range(warmup):
            fn(inputs, xs[0])
        per_example = []
        for _ in range(reps):
            t0 = time.perf_counter()
            for x in xs:
                fn(inputs, x)
            per_example.append((time.perf_counter() - t0) / len(xs))
    return float(np.median(per_example))
