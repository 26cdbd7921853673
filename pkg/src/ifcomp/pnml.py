"""Assembly of per-label influences into pNML distributions and complexities.

All codelengths are in nats.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError
from .influence import BifVector, bif_batch
from .model import PROB_FLOOR, MlpParams

NATS_PER_BIT = np.log(2.0)


@dataclass(frozen=True)
class PnmlConfig:
    alpha: float = 0.0
    beta: float = 1.0
    n: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.n < 1 or not self.beta > 0:
            raise ConfigurationError(f"invalid pNML config: {self}")


def _as_values(bif) -> np.ndarray:
    return bif.values if isinstance(bif, BifVector) else np.asarray(bif, dtype=np.float64)


def parametric_complexity(bif, probs) -> float:
    """Expected BIF under the model's own tempered distribution."""
    b, p = _as_values(bif), np.asarray(probs, dtype=np.float64)
    if b.shape != p.shape:
        raise DimensionError(f"BIF {b.shape} and probabilities {p.shape} differ")
    return max(float(p @ b), 0.0)


def parametric_complexity_log(bif, probs, n: int) -> float:
    """``n * log(1 + E[IF] / n)``: the form before the first-order simplification."""
    return n * float(np.log1p(parametric_complexity(bif, probs) / n))


def full_complexity(error_term: float, par_comp: float, n: int) -> float:
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    return float(error_term) + float(par_comp) / n


def pnml_distribution(probs, bif, cfg: PnmlConfig) -> np.ndarray:
    """Linearized hindsight probabilities, renormalized.

    ``(p_y + a p_y IF_y) / (1 + a sum_y' p_y' IF_y')`` with ``a = alpha / n``;
    works along the last axis so batches of examples are accepted.
    """
    p = np.asarray(probs, dtype=np.float64)
    b = _as_values(bif)
    if p.shape != b.shape:
        raise DimensionError(f"probabilities {p.shape} and BIF {b.shape} differ")
    if cfg.alpha == 0:
        return p.copy()
    a = cfg.alpha / cfg.n
    num = p + a * p * b
    return num / (1.0 + a * np.sum(p * b, axis=-1, keepdims=True))


def boltzmann_pnml_exact(oracle_probs, y: Optional[int] = None) -> tuple[np.ndarray, float]:
    """Normalize hindsight probabilities into the pNML distribution.

    ``oracle_probs[y']`` is the probability the model refit with label ``y'``
    assigns to ``y'``. Returns the distribution and, for labelled points, the
    stochastic complexity ``-log q_y + log sum q``; otherwise the parametric
    complexity ``log sum q``.
    """
    q = np.asarray(oracle_probs, dtype=np.float64)
    if q.ndim != 1 or np.any(q < 0):
        raise ConfigurationError("oracle probabilities must be a nonnegative vector")
    total = float(q.sum())
    if total <= 0:
        raise ConfigurationError("all oracle probabilities are zero")
    dist = q / total
    log_sum = float(np.log(total))
    if y is None:
        return dist, log_sum
    return dist, -float(np.log(max(q[y], PROB_FLOOR))) + log_sum


@dataclass
class ScoreRecord:
    id: int
    error: Optional[float]
    par_comp: float
    total: Optional[float]
    bif: np.ndarray
    pnml: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "error": self.error, "par_comp": self.par_comp, "total": self.total}
        for k, v in enumerate(self.bif):
            d[f"bif_{k}"] = float(v)
        if self.pnml is not None:
            for k, v in enumerate(self.pnml):
                d[f"pnml_{k}"] = float(v)
        return d


def score_arrays(bifs: np.ndarray, probs: np.ndarray, labels, cfg: PnmlConfig) -> dict[str, np.ndarray]:
    """Vectorized scoring given per-label BIFs and base probabilities."""
    par = np.maximum(np.sum(probs * bifs, axis=1), 0.0)
    out = {"par_comp": par, "pnml": pnml_distribution(probs, bifs, cfg)}
    if labels is not None:
        labels = np.asarray(labels)
        err = -np.log(np.maximum(probs[np.arange(len(labels)), labels], PROB_FLOOR))
        out["error"] = err
        out["total"] = err + par / cfg.n
    return out


def score_dataset(curv, params: MlpParams, x, labels, cfg: PnmlConfig, ids: Optional[Sequence[int]] = None) -> list[ScoreRecord]:
    """Score records for every row of ``x``; ``labels`` may be ``None``."""
    bifs, probs = bif_batch(curv, params, x, cfg.beta)
    s = score_arrays(bifs, probs, labels, cfg)
    ids = range(len(bifs)) if ids is None else ids
    records = []
    for i, rid in enumerate(ids):
        records.append(ScoreRecord(
            id=int(rid),
            error=None if labels is None else float(s["error"][i]),
            par_comp=float(s["par_comp"][i]),
            total=None if labels is None else float(s["total"][i]),
            bif=bifs[i],
            pnml=s["pnml"][i],
        ))
    return records


def write_jsonl(records: Iterable[ScoreRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(records: Sequence[ScoreRecord], path) -> None:
    rows = [r.to_dict() for r in records]
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def to_bits(nats):
    return np.asarray(nats) / NATS_PER_BIT
