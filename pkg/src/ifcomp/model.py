"""ReLU multilayer perceptron with temperature-scaled softmax outputs.

Parameters are stored per layer as ``(weight, bias)`` with ``weight`` of
shape ``(d_out, d_in)``. The canonical flat parameter vector is layer-major;
within a layer the weight comes first (row-major) followed by the bias.
Curvature and influence code address parameters in exactly this order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError

PROB_FLOOR = 1e-30
PARAMS_FORMAT = "ifcomp.mlp"
PARAMS_VERSION = 1


def check_beta(beta: float) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0.0:
        raise ConfigurationError(f"inverse temperature must be finite and > 0, got {beta}")
    return beta


@dataclass(frozen=True)
class MlpParams:
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        layers = tuple(
            (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
            for w, b in self.layers
        )
        if not layers:
            raise DimensionError("an MLP needs at least one layer")
        for i, (w, b) in enumerate(layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != layers[i - 1][0].shape[0]:
                raise DimensionError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer gives "
                    f"{layers[i - 1][0].shape[0]}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[1],) + tuple(w.shape[0] for w, _ in self.layers)

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """Flat-vector slices of (weight, bias) for every layer."""
        out, start = [], 0
        for w, b in self.layers:
            ws = slice(start, start + w.size)
            start += w.size
            bs = slice(start, start + b.size)
            start += b.size
            out.append((ws, bs))
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def unflatten(self, flat) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise DimensionError(f"expected {self.num_params} parameters, got {flat.shape}")
        layers = []
        for (w, _), (ws, bs) in zip(self.layers, self.layer_slices()):
            layers.append((flat[ws].reshape(w.shape).copy(), flat[bs].copy()))
        return MlpParams(tuple(layers))

    def to_dict(self) -> dict:
        return {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "sizes": list(self.sizes),
            "layers": [
                {"weight": w.ravel().tolist(), "bias": b.tolist()} for w, b in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        if d.get("format") != PARAMS_FORMAT or d.get("version") != PARAMS_VERSION:
            raise FormatError(
                f"not an {PARAMS_FORMAT} v{PARAMS_VERSION} file "
                f"(format={d.get('format')!r}, version={d.get('version')!r})"
            )
        sizes = d["sizes"]
        if len(d["layers"]) != len(sizes) - 1:
            raise FormatError("layer count does not match sizes")
        layers = []
        for i, entry in enumerate(d["layers"]):
            w = np.asarray(entry["weight"], dtype=np.float64)
            if w.size != sizes[i + 1] * sizes[i]:
                raise FormatError(f"layer {i} weight has {w.size} entries")
            layers.append((w.reshape(sizes[i + 1], sizes[i]), np.asarray(entry["bias"])))
        return cls(tuple(layers))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MlpParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_mlp(sizes: Sequence[int], seed: int) -> MlpParams:
    """He-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / d_in)
        layers.append((rng.uniform(-bound, bound, size=(d_out, d_in)), np.zeros(d_out)))
    return MlpParams(tuple(layers))


@dataclass(frozen=True)
class ForwardTrace:
    """Cached quantities of a (batched) forward pass.

    ``inputs[l]`` is the input to layer ``l`` (without the bias column) and
    ``preacts[l]`` its pre-activation; ``preacts[-1]`` are the logits.
    """

    inputs: tuple[np.ndarray, ...]
    preacts: tuple[np.ndarray, ...]

    @property
    def logits(self) -> np.ndarray:
        return self.preacts[-1]


def forward(params: MlpParams, x) -> ForwardTrace:
    """Forward pass for one example ``(d,)`` or a batch ``(n, d)``."""
    h = np.asarray(x, dtype=np.float64)
    d_in = params.sizes[0]
    if h.shape[-1:] != (d_in,) or h.ndim > 2:
        raise DimensionError(f"input has shape {h.shape}, model expects {d_in} features")
    inputs, preacts = [], []
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ w.T + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return ForwardTrace(tuple(inputs), tuple(preacts))


def softmax_temp(logits, beta: float) -> np.ndarray:
    beta = check_beta(beta)
    z = beta * np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax_temp(logits, beta: float) -> np.ndarray:
    beta = check_beta(beta)
    z = beta * np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _check_label(y, k: int) -> None:
    y = np.asarray(y)
    if y.dtype.kind not in "iu" or np.any(y < 0) or np.any(y >= k):
        raise ConfigurationError(f"class index out of range for {k} classes: {y}")


def energy(params: MlpParams, x, y, beta: float):
    """Temperature-scaled codelength ``-log softmax(beta * f(x))[y]`` in nats."""
    _check_label(y, params.num_classes)
    p = softmax_temp(forward(params, x).logits, beta)
    py = np.take_along_axis(p, np.asarray(y)[..., None], axis=-1)[..., 0]
    e = -np.log(np.maximum(py, PROB_FLOOR))
    return float(e) if np.ndim(e) == 0 else e


def logit_residual(probs: np.ndarray, y, beta: float) -> np.ndarray:
    """d energy / d logits = beta * (p_beta - e_y)."""
    r = probs.copy()
    np.put_along_axis(r, np.asarray(y)[..., None], np.take_along_axis(r, np.asarray(y)[..., None], -1) - 1.0, -1)
    return beta * r


def all_label_residuals(probs: np.ndarray, beta: float) -> np.ndarray:
    """Logit-space energy gradients for every candidate label.

    Returns shape ``(..., K, K)`` where entry ``[..., y, :]`` is
    ``beta * (p - e_y)``.
    """
    k = probs.shape[-1]
    return beta * (probs[..., None, :] - np.eye(k))


def backprop(params: MlpParams, trace: ForwardTrace, delta: np.ndarray) -> list[np.ndarray]:
    """Backpropagate logit-space gradients to every layer's pre-activation.

    ``delta`` has shape ``(n, *extra, K)`` (or ``(*extra, K)`` for a single
    example trace); the result holds one array per layer with the same leading
    shape and the layer's output width last.
    """
    n_extra = delta.ndim - trace.logits.ndim
    grads = [None] * len(params.layers)
    g = delta
    for l in range(len(params.layers) - 1, -1, -1):
        grads[l] = g
        if l:
            mask = trace.preacts[l - 1] > 0.0
            mask = mask.reshape(mask.shape[:-1] + (1,) * n_extra + mask.shape[-1:])
            g = (g @ params.layers[l][0]) * mask
    return grads


def layer_inputs_with_bias(trace: ForwardTrace) -> list[np.ndarray]:
    """Per-layer inputs with an appended constant-1 bias coordinate."""
    return [np.concatenate([a, np.ones(a.shape[:-1] + (1,))], axis=-1) for a in trace.inputs]


def flat_gradient(output_grads: Sequence[np.ndarray], inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Assemble canonical flat gradients from per-layer output grads and inputs.

    ``output_grads[l]`` has shape ``(..., d_out)`` and ``inputs[l]`` shape
    ``(d_in,)`` for a single example; leading axes of the gradients are kept.
    """
    parts = []
    for g, a in zip(output_grads, inputs):
        w = g[..., :, None] * a
        parts.append(w.reshape(g.shape[:-1] + (-1,)))
        parts.append(g)
    return np.concatenate(parts, axis=-1)


def grad_energy(params: MlpParams, x, y: int, beta: float) -> np.ndarray:
    """Gradient of the temperature-scaled energy w.r.t. the flat parameters."""
    beta = check_beta(beta)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("grad_energy takes a single example")
    _check_label(np.asarray(y), params.num_classes)
    trace = forward(params, x)
    p = softmax_temp(trace.logits, beta)
    grads = backprop(params, trace, logit_residual(p, y, beta))
    return flat_gradient(grads, trace.inputs)


def kl_temp(p_logits, q_logits, beta: float):
    """KL(softmax(beta p) || softmax(beta q)) along the last axis."""
    p_logits = np.asarray(p_logits, dtype=np.float64)
    q_logits = np.asarray(q_logits, dtype=np.float64)
    if p_logits.shape != q_logits.shape:
        raise DimensionError(f"logit shapes differ: {p_logits.shape} vs {q_logits.shape}")
    lp = log_softmax_temp(p_logits, beta)
    lq = log_softmax_temp(q_logits, beta)
    kl = np.sum(np.exp(lp) * (lp - lq), axis=-1)
    kl = np.maximum(kl, 0.0)
    return float(kl) if np.ndim(kl) == 0 else kl
