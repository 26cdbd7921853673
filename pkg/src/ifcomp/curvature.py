"""Temperature-scaled Fisher information: dense (oracle) and EKFAC forms.

The Fisher at inverse temperature ``beta`` averages, over training inputs,
the outer product of energy gradients with the label drawn from the model's
own tempered distribution. Here that label expectation is computed exactly
over all classes unless ``labels="sample"`` is requested.

EKFAC treats every dense layer independently. With bias-augmented inputs
``a~`` and pre-activation gradients ``g`` a layer gradient is ``g a~^T``;
K-FAC factors are ``A = E[a~ a~^T]`` and ``G = E[g g^T]``, and EKFAC replaces
the Kronecker eigenvalues with second moments measured in the joint
eigenbasis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError
from .linalg import sym_eig
from .model import (
    MlpParams,
    all_label_residuals,
    backprop,
    check_beta,
    forward,
    layer_inputs_with_bias,
    softmax_temp,
)

EXACT_FISHER_MAX_PARAMS = 5000
EKFAC_FORMAT = "ifcomp.ekfac"
EKFAC_VERSION = 1
DEFAULT_DELTA = 1e-8


def _features(dataset) -> np.ndarray:
    return np.asarray(getattr(dataset, "features", dataset), dtype=np.float64)


def _label_weights(probs: np.ndarray, labels: str, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Weights over candidate labels per example: exact probabilities or a one-hot sample."""
    if labels == "exact":
        return probs
    if labels == "sample":
        rng = rng if rng is not None else np.random.default_rng(0)
        u = rng.random(len(probs))[:, None]
        pick = np.minimum((np.cumsum(probs, axis=1) < u).sum(axis=1), probs.shape[1] - 1)
        return np.eye(probs.shape[1])[pick]
    raise ConfigurationError(f"labels must be 'exact' or 'sample', got {labels!r}")


def _per_label_layer_grads(params: MlpParams, x: np.ndarray, beta: float):
    """Pre-activation gradients for every example and candidate label.

    Returns ``(probs (n, K), grads[l] (n, K, d_out_l), inputs[l] (n, d_in_l + 1))``.
    """
    trace = forward(params, x)
    probs = softmax_temp(trace.logits, beta)
    grads = backprop(params, trace, all_label_residuals(probs, beta))
    return probs, grads, layer_inputs_with_bias(trace)


@dataclass(frozen=True)
class ExactFisher:
    matrix: np.ndarray
    beta: float
    n: int

    def damped_solve(self, grad: np.ndarray, delta: float) -> np.ndarray:
        p = self.matrix.shape[0]
        return np.linalg.solve(self.matrix + delta * np.eye(p), grad)

    def quadratic_form(self, grad: np.ndarray, delta: float) -> float:
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (self.matrix.shape[0],):
            raise DimensionError(f"gradient has shape {grad.shape}, Fisher is {self.matrix.shape}")
        return float(grad @ self.damped_solve(grad, delta))


def per_label_flat_grads(params: MlpParams, x: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Flat energy gradients ``(n, K, P)`` and tempered probabilities ``(n, K)``."""
    probs, grads, inputs = _per_label_layer_grads(params, x, beta)
    n, k = probs.shape
    parts = []
    for g, a in zip(grads, inputs):
        parts.append((g[:, :, :, None] * a[:, None, None, :-1]).reshape(n, k, -1))
        parts.append(g)
    return np.concatenate(parts, axis=2), probs


def exact_fisher(params: MlpParams, dataset, beta: float, chunk: int = 64) -> ExactFisher:
    """Dense ``(1/n) sum_i sum_y p(y|x_i) g_iy g_iy^T`` over flat parameters."""
    beta = check_beta(beta)
    if params.num_params > EXACT_FISHER_MAX_PARAMS:
        raise ConfigurationError(
            f"exact Fisher limited to {EXACT_FISHER_MAX_PARAMS} parameters, model has {params.num_params}"
        )
    x = _features(dataset)
    n = len(x)
    f = np.zeros((params.num_params, params.num_params))
    for start in range(0, n, chunk):
        jac, probs = per_label_flat_grads(params, x[start:start + chunk], beta)
        rows = (jac * np.sqrt(probs)[:, :, None]).reshape(-1, params.num_params)
        f += rows.T @ rows
    f /= n
    f = 0.5 * (f + f.T)
    return ExactFisher(f, beta, n)


@dataclass(frozen=True)
class KfacFactors:
    activations: list[np.ndarray]  # A_l, (d_in + 1) square
    gradients: list[np.ndarray]  # G_l, d_out square


def fit_kfac_factors(
    params: MlpParams,
    dataset,
    beta: float,
    labels: str = "exact",
    seed: Optional[int] = None,
    chunk: int = 256,
) -> KfacFactors:
    """Activation and output-gradient covariances of every dense layer."""
    beta = check_beta(beta)
    x = _features(dataset)
    n = len(x)
    rng = np.random.default_rng(seed) if labels == "sample" else None
    acts = [np.zeros((w.shape[1] + 1,) * 2) for w, _ in params.layers]
    grads = [np.zeros((w.shape[0],) * 2) for w, _ in params.layers]
    for start in range(0, n, chunk):
        probs, g, a = _per_label_layer_grads(params, x[start:start + chunk], beta)
        weights = _label_weights(probs, labels, rng)
        for l in range(len(params.layers)):
            acts[l] += a[l].T @ a[l]
            gw = g[l] * np.sqrt(weights)[:, :, None]
            flat = gw.reshape(-1, gw.shape[-1])
            grads[l] += flat.T @ flat
    return KfacFactors([m / n for m in acts], [m / n for m in grads])


@dataclass(frozen=True)
class LayerEigen:
    """Eigenbases of one layer and the corrected second moments.

    ``moments[j, k]`` is the curvature along ``qg[:, j] (x) qa[:, k]``.
    """

    qa: np.ndarray
    qg: np.ndarray
    moments: np.ndarray
    a_values: np.ndarray
    g_values: np.ndarray


@dataclass(frozen=True)
class EkfacState:
    layers: tuple[LayerEigen, ...]
    delta: float
    beta: float
    n: int
    labels: str = "exact"

    def with_delta(self, delta: float) -> "EkfacState":
        if not delta > 0:
            raise ConfigurationError(f"damping must be > 0, got {delta}")
        return EkfacState(self.layers, float(delta), self.beta, self.n, self.labels)

    def shapes(self) -> list[tuple[int, int]]:
        return [(l.qg.shape[0], l.qa.shape[0] - 1) for l in self.layers]

    def to_dict(self) -> dict:
        return {
            "format": EKFAC_FORMAT,
            "version": EKFAC_VERSION,
            "beta": self.beta,
            "delta": self.delta,
            "n": self.n,
            "labels": self.labels,
            "layers": [
                {
                    "d_out": l.qg.shape[0],
                    "d_in": l.qa.shape[0] - 1,
                    "qa": l.qa.ravel().tolist(),
                    "qg": l.qg.ravel().tolist(),
                    "moments": l.moments.ravel().tolist(),
                    "a_values": l.a_values.tolist(),
                    "g_values": l.g_values.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EkfacState":
        if d.get("format") != EKFAC_FORMAT or d.get("version") != EKFAC_VERSION:
            raise FormatError(
                f"not an {EKFAC_FORMAT} v{EKFAC_VERSION} file "
                f"(format={d.get('format')!r}, version={d.get('version')!r})"
            )
        layers = []
        for e in d["layers"]:
            do, di = e["d_out"], e["d_in"] + 1
            layers.append(LayerEigen(
                np.asarray(e["qa"], dtype=np.float64).reshape(di, di),
                np.asarray(e["qg"], dtype=np.float64).reshape(do, do),
                np.asarray(e["moments"], dtype=np.float64).reshape(do, di),
                np.asarray(e["a_values"], dtype=np.float64),
                np.asarray(e["g_values"], dtype=np.float64),
            ))
        return cls(tuple(layers), float(d["delta"]), float(d["beta"]), int(d["n"]), d.get("labels", "exact"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "EkfacState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_ekfac(
    params: MlpParams,
    dataset,
    beta: float,
    delta: float = DEFAULT_DELTA,
    labels: str = "exact",
    seed: Optional[int] = None,
    chunk: int = 256,
) -> EkfacState:
    """Two passes: K-FAC factors and their eigenbases, then corrected moments."""
    beta = check_beta(beta)
    if not delta > 0:
        raise ConfigurationError(f"damping must be > 0, got {delta}")
    factors = fit_kfac_factors(params, dataset, beta, labels=labels, seed=seed, chunk=chunk)
    eig_a = [sym_eig(a) for a in factors.activations]
    eig_g = [sym_eig(g) for g in factors.gradients]

    x = _features(dataset)
    n = len(x)
    rng = np.random.default_rng(None if seed is None else [seed, 1]) if labels == "sample" else None
    moments = [np.zeros((w.shape[0], w.shape[1] + 1)) for w, _ in params.layers]
    for start in range(0, n, chunk):
        probs, g, a = _per_label_layer_grads(params, x[start:start + chunk], beta)
        weights = _label_weights(probs, labels, rng)
        for l in range(len(params.layers)):
            u = g[l] @ eig_g[l].vectors  # (b, K, d_out)
            v = a[l] @ eig_a[l].vectors  # (b, d_in + 1)
            moments[l] += np.sum(weights[:, :, None] * u * u, axis=1).T @ (v * v)
    layers = tuple(
        LayerEigen(
            qa=ea.vectors,
            qg=eg.vectors,
            moments=np.maximum(m / n, 0.0),
            a_values=ea.values,
            g_values=eg.values,
        )
        for ea, eg, m in zip(eig_a, eig_g, moments)
    )
    return EkfacState(layers, float(delta), beta, n, labels)


def kfac_state(params: MlpParams, dataset, beta: float, delta: float = DEFAULT_DELTA) -> EkfacState:
    """Plain K-FAC in EKFAC form: moments are products of factor eigenvalues."""
    factors = fit_kfac_factors(params, dataset, beta)
    layers = []
    for a, g in zip(factors.activations, factors.gradients):
        ea, eg = sym_eig(a), sym_eig(g)
        layers.append(LayerEigen(ea.vectors, eg.vectors, np.maximum(np.outer(eg.values, ea.values), 0.0),
                                 ea.values, eg.values))
    return EkfacState(tuple(layers), float(delta), check_beta(beta), len(_features(dataset)))


def split_layer_grads(state: EkfacState, grad: np.ndarray) -> list[np.ndarray]:
    """Cut a flat gradient into per-layer ``[W | b]`` matrices."""
    grad = np.asarray(grad, dtype=np.float64)
    expected = sum(do * (di + 1) for do, di in state.shapes())
    if grad.shape != (expected,):
        raise DimensionError(f"gradient has shape {grad.shape}, curvature expects ({expected},)")
    out, start = [], 0
    for do, di in state.shapes():
        w = grad[start:start + do * di].reshape(do, di)
        start += do * di
        b = grad[start:start + do]
        start += do
        out.append(np.concatenate([w, b[:, None]], axis=1))
    return out


def quadratic_form(state: EkfacState, grad) -> float:
    """``grad^T (G + delta I)^{-1} grad`` with G in EKFAC form."""
    total = 0.0
    for layer, d in zip(state.layers, split_layer_grads(state, grad)):
        c = layer.qg.T @ d @ layer.qa
        total += float(np.sum(c * c / (layer.moments + state.delta)))
    return total


def quadratic_form_factored(state: EkfacState, output_grads, inputs) -> np.ndarray:
    """Quadratic forms of rank-one layer gradients ``g a~^T``.

    ``output_grads[l]`` has shape ``(..., d_out)`` and ``inputs[l]`` shape
    ``(..., d_in + 1)`` broadcastable against it; the sum over layers is
    returned with the broadcast leading shape.
    """
    total = 0.0
    for layer, g, a in zip(state.layers, output_grads, inputs):
        u = g @ layer.qg
        v = a @ layer.qa
        inv = 1.0 / (layer.moments + state.delta)
        total = total + np.sum(((u * u) @ inv) * (v * v), axis=-1)
    return total


def dense_ekfac(state: EkfacState) -> np.ndarray:
    """Materialize the EKFAC matrix in flat coordinates (small models only)."""
    blocks = []
    for layer in state.layers:
        do, di = layer.qg.shape[0], layer.qa.shape[0]
        basis = np.kron(layer.qg, layer.qa)  # row-major [W | b] coordinates
        mat = (basis * layer.moments.ravel()) @ basis.T
        # reorder [W | b] row-major into canonical weight-then-bias order
        perm = np.concatenate([
            (np.arange(do)[:, None] * di + np.arange(di - 1)[None, :]).ravel(),
            np.arange(do) * di + di - 1,
        ])
        blocks.append(mat[np.ix_(perm, perm)])
    size = sum(b.shape[0] for b in blocks)
    out = np.zeros((size, size))
    start = 0
    for b in blocks:
        out[start:start + len(b), start:start + len(b)] = b
        start += len(b)
    return out
