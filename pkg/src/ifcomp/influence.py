"""Boltzmann influence functions and the gradient-norm baseline.

For one input, a single forward pass is shared by every candidate label;
each label then costs one backward pass of the logit residual
``beta * (p - e_y)`` plus a projection into the curvature eigenbasis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .curvature import DEFAULT_DELTA, EkfacState, ExactFisher, quadratic_form_factored
from .errors import ConfigurationError
from .model import (
    MlpParams,
    all_label_residuals,
    backprop,
    check_beta,
    flat_gradient,
    forward,
    layer_inputs_with_bias,
    logit_residual,
    softmax_temp,
)

Curvature = Union[EkfacState, ExactFisher]


@dataclass(frozen=True)
class BifVector:
    values: np.ndarray
    beta: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ConfigurationError(f"BIF values must be finite and >= 0: {v}")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


def _check_beta_match(curv: Curvature, beta: float) -> float:
    beta = check_beta(beta)
    if curv.beta != beta:
        raise ConfigurationError(f"curvature was fit at beta={curv.beta}, request uses beta={beta}")
    return beta


def _label_value(curv: Curvature, params: MlpParams, trace, probs, y: int, beta: float, delta: Optional[float]) -> float:
    grads = backprop(params, trace, logit_residual(probs, y, beta))
    if isinstance(curv, EkfacState):
        inputs = layer_inputs_with_bias(trace)
        return float(quadratic_form_factored(curv, grads, inputs))
    flat = flat_gradient(grads, trace.inputs)
    return curv.quadratic_form(flat, DEFAULT_DELTA if delta is None else delta)


def _single(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigurationError("expected a single feature vector")
    return x


def bif(curv: Curvature, params: MlpParams, x, y: int, beta: float, delta: Optional[float] = None) -> float:
    """Damped inverse-Fisher quadratic form of the tempered energy gradient.

    ``delta`` only applies to an :class:`ExactFisher`; an EKFAC state carries
    its own damping.
    """
    beta = _check_beta_match(curv, beta)
    trace = forward(params, _single(x))
    probs = softmax_temp(trace.logits, beta)
    if not 0 <= int(y) < params.num_classes:
        raise ConfigurationError(f"label {y} out of range")
    return _label_value(curv, params, trace, probs, int(y), beta, delta)


def self_influence(curv: Curvature, params: MlpParams, x, y: int, delta: Optional[float] = None) -> float:
    """Classical self-influence: the BIF at unit inverse temperature."""
    return bif(curv, params, x, y, 1.0, delta)


def bif_all_labels(curv: Curvature, params: MlpParams, x, beta: float, delta: Optional[float] = None) -> BifVector:
    beta = _check_beta_match(curv, beta)
    trace = forward(params, _single(x))
    probs = softmax_temp(trace.logits, beta)
    values = [_label_value(curv, params, trace, probs, y, beta, delta) for y in range(params.num_classes)]
    return BifVector(np.array(values), beta)


def bif_batch(curv: EkfacState, params: MlpParams, x, beta: float, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Per-label BIFs ``(n, K)`` and tempered probabilities ``(n, K)`` for many inputs."""
    beta = _check_beta_match(curv, beta)
    if not isinstance(curv, EkfacState):
        raise ConfigurationError("bif_batch needs an EKFAC state")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    values, probs_all = [], []
    for start in range(0, len(x), chunk):
        trace = forward(params, x[start:start + chunk])
        probs = softmax_temp(trace.logits, beta)
        grads = backprop(params, trace, all_label_residuals(probs, beta))
        inputs = [a[:, None, :] for a in layer_inputs_with_bias(trace)]
        values.append(quadratic_form_factored(curv, grads, inputs))
        probs_all.append(probs)
    return np.concatenate(values), np.concatenate(probs_all)


def grad_norm(params: MlpParams, x, beta: float) -> float:
    """Mean over candidate labels of the energy-gradient L2 norm."""
    beta = check_beta(beta)
    trace = forward(params, _single(x))
    probs = softmax_temp(trace.logits, beta)
    inputs = layer_inputs_with_bias(trace)
    norms = []
    for y in range(params.num_classes):
        grads = backprop(params, trace, logit_residual(probs, y, beta))
        sq = sum(float(g @ g) * float(a @ a) for g, a in zip(grads, inputs))
        norms.append(np.sqrt(sq))
    return float(np.mean(norms))


def grad_norm_batch(params: MlpParams, x, beta: float) -> np.ndarray:
    beta = check_beta(beta)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    trace = forward(params, x)
    probs = softmax_temp(trace.logits, beta)
    grads = backprop(params, trace, all_label_residuals(probs, beta))
    inputs = layer_inputs_with_bias(trace)
    sq = sum(np.sum(g * g, axis=-1) * np.sum(a * a, axis=-1)[:, None] for g, a in zip(grads, inputs))
    return np.sqrt(sq).mean(axis=1)


def self_influence_batch(curv: EkfacState, params: MlpParams, x, y) -> np.ndarray:
    values, _ = bif_batch(curv, params, x, 1.0)
    return values[np.arange(len(values)), np.asarray(y)]
