"""Base-model training and the two hindsight retraining oracles.

``train_base`` minimizes the mean cross-entropy with minibatch SGD.
``retrain_unrestricted`` trains from scratch on the training set plus one
extra point; ``bpbo_finetune`` refits a trained model to one extra point
while penalizing movement in function space (tempered KL to the base
outputs over the whole training set) and in weight space (L2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError, OracleFailure
from .model import (
    MlpParams,
    backprop,
    check_beta,
    forward,
    init_mlp,
    log_softmax_temp,
    logit_residual,
    softmax_temp,
)

EpochCallback = Callable[[int, MlpParams, float, float], None]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.0
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError(f"invalid training config: {self}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigurationError(f"invalid training config: {self}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class BpboConfig:
    beta: float = 1.0
    lam: Optional[float] = None  # defaults to 1e-3 * n
    steps: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    epsilon_weight: Optional[float] = None  # defaults to 1 / n
    method: str = "sgd"

    def __post_init__(self):
        check_beta(self.beta)
        if self.steps < 0 or (self.lam is not None and self.lam < 0) or self.lr <= 0:
            raise ConfigurationError(f"invalid BPBO config: {self}")
        if self.method not in ("sgd", "lbfgs"):
            raise ConfigurationError(f"unknown BPBO method {self.method!r}")

    def resolved_lambda(self, n: int) -> float:
        return 1e-3 * n if self.lam is None else float(self.lam)

    def resolved_epsilon(self, n: int) -> float:
        return 1.0 / n if self.epsilon_weight is None else float(self.epsilon_weight)


def _batch_grad(params: MlpParams, x: np.ndarray, y: np.ndarray, weights: np.ndarray):
    """Gradient of sum_i w_i * CE_i (beta = 1) plus that loss value."""
    trace = forward(params, x)
    p = softmax_temp(trace.logits, 1.0)
    logp = log_softmax_temp(trace.logits, 1.0)
    loss = -float(np.sum(weights * logp[np.arange(len(y)), y]))
    delta = logit_residual(p, y, 1.0) * weights[:, None]
    grads = backprop(params, trace, delta)
    flat = []
    for g, a in zip(grads, trace.inputs):
        flat.append((g.T @ a).ravel())
        flat.append(g.sum(axis=0))
    return np.concatenate(flat), loss


def mean_energy(params: MlpParams, x, y, beta: float = 1.0) -> float:
    logp = log_softmax_temp(forward(params, x).logits, beta)
    return -float(np.mean(logp[np.arange(len(y)), y]))


def accuracy(params: MlpParams, x, y) -> float:
    return float(np.mean(np.argmax(forward(params, x).logits, axis=1) == np.asarray(y)))


def _sgd(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    extra: Optional[tuple[np.ndarray, int, float]] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> MlpParams:
    n = len(y)
    rng = np.random.default_rng([config.seed, 1])
    theta = params.flatten()
    velocity = np.zeros_like(theta)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            current = params.unflatten(theta)
            w = np.full(len(idx), 1.0 / len(idx))
            grad, loss = _batch_grad(current, x[idx], y[idx], w)
            if extra is not None and extra[2] != 0.0:
                gz, lz = _batch_grad(current, extra[0][None, :], np.array([extra[1]]), np.array([extra[2]]))
                grad = grad + gz
                loss += lz
            if config.weight_decay:
                grad = grad + config.weight_decay * theta
            epoch_loss += loss * len(idx)
            velocity = config.momentum * velocity + grad
            theta = theta - config.lr * velocity
        if not np.isfinite(epoch_loss) or not np.all(np.isfinite(theta)):
            raise DivergenceError(f"training diverged at epoch {epoch}", epoch=epoch)
        if on_epoch is not None:
            current = params.unflatten(theta)
            on_epoch(epoch + 1, current, epoch_loss / n, accuracy(current, x, y))
    return params.unflatten(theta)


def _check_dataset(dataset) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(dataset.features, dtype=np.float64)
    y = np.asarray(dataset.labels)
    if len(y) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    if np.any(y < 0) or np.any(y >= dataset.num_classes):
        raise ConfigurationError("labels out of range")
    return x, y


def initial_params(dataset, config: TrainConfig) -> MlpParams:
    sizes = (dataset.features.shape[1],) + config.hidden + (dataset.num_classes,)
    return init_mlp(sizes, seed=config.seed)


def train_base(
    dataset,
    config: TrainConfig,
    init: Optional[MlpParams] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> MlpParams:
    """Fit the base model by minibatch SGD with momentum on mean cross-entropy."""
    x, y = _check_dataset(dataset)
    params = initial_params(dataset, config) if init is None else init
    return _sgd(params, x, y, config, on_epoch=on_epoch)


def retrain_unrestricted(
    dataset,
    z: tuple[np.ndarray, int],
    epsilon: Optional[float],
    config: TrainConfig,
    on_epoch: Optional[EpochCallback] = None,
) -> MlpParams:
    """Train from scratch on the training set plus ``z``.

    The objective is ``mean_i CE_i + epsilon * CE_z``; with ``epsilon = 1/n``
    the extra point carries the weight of one training example. The extra
    term is added to every minibatch so the data order matches
    ``train_base`` exactly.
    """
    x, y = _check_dataset(dataset)
    eps = 1.0 / len(y) if epsilon is None else float(epsilon)
    if eps < 0:
        raise ConfigurationError("epsilon must be >= 0")
    zx, zy = np.asarray(z[0], dtype=np.float64), int(z[1])
    return _sgd(initial_params(dataset, config), x, y, config, extra=(zx, zy, eps), on_epoch=on_epoch)


@dataclass
class BpboResult:
    params: MlpParams
    objective: list[float] = field(default_factory=list)
    kl_term: float = 0.0
    distance_sq: float = 0.0
    prob_before: float = 0.0
    prob_after: float = 0.0


class BpboObjective:
    """Tempered proximal objective for one query point and label.

    ``value(theta) = eps_scale * E_beta(x, y) + sum_i KL(p_theta(.|x_i) || p_base(.|x_i))
    + lam / 2 * ||theta - theta_base||^2`` where ``eps_scale = epsilon * n``
    (one for the default ``epsilon = 1/n``).
    """

    def __init__(self, base: MlpParams, x_train, zx, zy: int, beta: float, lam: float, eps_scale: float = 1.0):
        self.base = base
        self.theta0 = base.flatten()
        self.x = np.asarray(x_train, dtype=np.float64)
        self.zx = np.asarray(zx, dtype=np.float64)[None, :]
        self.zy = np.array([int(zy)])
        self.beta = check_beta(beta)
        self.lam = float(lam)
        self.eps_scale = float(eps_scale)
        self.base_logq = log_softmax_temp(forward(base, self.x).logits, self.beta)

    def terms(self, theta: np.ndarray) -> tuple[float, float, float]:
        params = self.base.unflatten(theta)
        lz = log_softmax_temp(forward(params, self.zx).logits, self.beta)
        e = -float(lz[0, self.zy[0]])
        lp = log_softmax_temp(forward(params, self.x).logits, self.beta)
        kl = float(np.sum(np.exp(lp) * (lp - self.base_logq)))
        dist = float(np.sum((theta - self.theta0) ** 2))
        return e, kl, dist

    def value(self, theta: np.ndarray) -> float:
        e, kl, dist = self.terms(theta)
        return self.eps_scale * e + kl + 0.5 * self.lam * dist

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        params = self.base.unflatten(theta)
        beta = self.beta
        # query term
        tz = forward(params, self.zx)
        pz = softmax_temp(tz.logits, beta)
        e = -float(np.log(max(pz[0, self.zy[0]], 1e-300)))
        gz = backprop(params, tz, self.eps_scale * logit_residual(pz, self.zy, beta))
        # function-space proximity: d KL / d logits = beta * p * (log p - log q - KL)
        tr = forward(params, self.x)
        lp = log_softmax_temp(tr.logits, beta)
        p = np.exp(lp)
        diff = lp - self.base_logq
        kl_each = np.sum(p * diff, axis=1, keepdims=True)
        gk = backprop(params, tr, beta * p * (diff - kl_each))
        parts = []
        for l in range(len(params.layers)):
            parts.append((gz[l].T @ tz.inputs[l] + gk[l].T @ tr.inputs[l]).ravel())
            parts.append(gz[l].sum(axis=0) + gk[l].sum(axis=0))
        step = theta - self.theta0
        grad = np.concatenate(parts) + self.lam * step
        value = self.eps_scale * e + float(np.sum(kl_each)) + 0.5 * self.lam * float(step @ step)
        return value, grad


def bpbo_finetune(base: MlpParams, dataset, z: tuple[np.ndarray, int], cfg: BpboConfig) -> BpboResult:
    """Approximate the tempered hindsight-optimal model for query ``z``.

    ``method="sgd"`` takes ``cfg.steps`` full-batch proximal momentum steps
    on the objective divided by ``n``; ``method="lbfgs"`` runs scipy's L-BFGS-B for
    at most ``cfg.steps`` iterations on the same objective.
    """
    x = np.asarray(dataset.features, dtype=np.float64)
    n = len(x)
    zx, zy = np.asarray(z[0], dtype=np.float64), int(z[1])
    obj = BpboObjective(base, x, zx, zy, cfg.beta, cfg.resolved_lambda(n), cfg.resolved_epsilon(n) * n)
    theta = obj.theta0.copy()
    trace: list[float] = []
    value0, grad = obj.value_and_grad(theta)
    trace.append(value0)

    if cfg.method == "sgd":
        # Momentum on the smooth terms, exact proximal step on the L2 term,
        # which keeps the iteration stable for arbitrarily large lambda.
        lam = cfg.resolved_lambda(n)
        shrink = 1.0 / (1.0 + cfg.lr * lam / n)
        velocity = np.zeros_like(theta)
        for _ in range(cfg.steps):
            smooth = grad - lam * (theta - obj.theta0)
            velocity = cfg.momentum * velocity + smooth / n
            theta = obj.theta0 + shrink * (theta - cfg.lr * velocity - obj.theta0)
            value, grad = obj.value_and_grad(theta)
            if not np.isfinite(value) or value > 10.0 * abs(value0) + 1e-12:
                raise OracleFailure(f"BPBO objective diverged ({value:.3e} from {value0:.3e})")
            trace.append(value)
    elif cfg.steps > 0:
        from scipy.optimize import minimize

        def fun(t):
            v, g = obj.value_and_grad(t)
            return v / n, g / n

        def record(t):
            trace.append(obj.value(t))

        res = minimize(fun, theta, jac=True, method="L-BFGS-B", callback=record,
                       options={"maxiter": cfg.steps, "gtol": 1e-12, "ftol": 1e-15})
        theta = res.x
        if not np.all(np.isfinite(theta)):
            raise OracleFailure("BPBO L-BFGS produced non-finite parameters")

    params = base.unflatten(theta)
    _, kl, dist = obj.terms(theta)
    before = float(softmax_temp(forward(base, zx).logits, cfg.beta)[zy])
    after = float(softmax_temp(forward(params, zx).logits, cfg.beta)[zy])
    return BpboResult(params, trace, kl, dist, before, after)


def lambda_sweep(base: MlpParams, dataset, z, lambdas: Sequence[float], cfg: BpboConfig) -> list[BpboResult]:
    """Run the BPBO oracle once per proximity weight."""
    from dataclasses import replace

    return [bpbo_finetune(base, dataset, z, replace(cfg, lam=float(lam))) for lam in lambdas]
