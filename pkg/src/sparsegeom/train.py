"""Full-batch gradient descent on polynomial-filter GNNs with squared loss."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import GnnModel, filter_matrices, forward


class ActivationContractError(ValueError):
    """An activation without a Lipschitz derivative was passed to training."""


class TrainingDivergence(FloatingPointError):
    def __init__(self, epoch: int, which: str):
        super().__init__(f"non-finite {which} loss at epoch {epoch}")
        self.epoch = epoch
        self.which = which


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 0.01
    weight_decay: float = 0.0
    grad_clip_norm: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr >= 0:
            raise ValueError("learning rate must be nonnegative")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ValueError("clip threshold must be positive")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Per-epoch losses and dense/sparse parameter gaps.

    Row ``t`` describes the parameters after ``t`` updates, so row 0 is the
    shared initialization.
    """

    loss_dense: np.ndarray
    loss_sparse: np.ndarray
    rel_param_gap: np.ndarray
    layer_gaps: np.ndarray  # (T+1, K) absolute Frobenius gap per layer

    @property
    def epochs(self) -> int:
        return len(self.loss_dense) - 1

    @property
    def final_gap(self) -> float:
        return float(self.rel_param_gap[-1])


def one_hot(labels, num_classes: Optional[int] = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    C = int(labels.max()) + 1 if num_classes is None else num_classes
    Y = np.zeros((labels.size, C))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def targets_from_labels(labels, mode: str = "one_hot") -> np.ndarray:
    if mode != "one_hot":
        raise ValueError(f"unsupported target mode {mode!r}")
    return one_hot(labels)


def require_smooth(model: GnnModel) -> None:
    for k, layer in enumerate(model.layers):
        if not layer.activation.smooth:
            raise ActivationContractError(
                f"layer {k} uses {layer.activation.tag!r}, whose derivative is not Lipschitz"
            )


def loss(model: GnnModel, S, X, Y, *, filters=None) -> float:
    """``0.5 * ||F(model; S) - Y||_F^2``."""
    Z = forward(model, S, X, filters=filters)[-1]
    return 0.5 * float(np.sum((Z - Y) ** 2))


def loss_and_gradient(model: GnnModel, S, X, Y, *, filters=None):
    require_smooth(model)
    S = getattr(S, "matrix", S)
    if filters is None:
        filters = filter_matrices(model, S)
    H = [np.asarray(X, dtype=float)]
    U = []
    for layer, P in zip(model.layers, filters):
        U.append(P @ H[-1] @ layer.weight)
        H.append(layer.activation(U[-1]))
    delta = H[-1] - Y
    with np.errstate(over="ignore"):  # divergence is reported by the caller
        value = 0.5 * float(np.sum(delta**2))
    grads = [None] * model.depth
    for k in range(model.depth - 1, -1, -1):
        layer = model.layers[k]
        G = delta * layer.activation.derivative(U[k])
        PtG = filters[k].T @ G
        grads[k] = H[k].T @ PtG
        if k:
            delta = PtG @ layer.weight.T
    return value, grads


def gradient(model: GnnModel, S, X, Y, *, filters=None) -> list:
    """Analytic per-layer gradients of the squared loss.

    Back-propagated state gradients follow::

        D_K = H_K - Y
        G_k = D_{k+1} * sigma_k'(U_k)
        grad W_k = H_k^T P_k^T G_k
        D_k = P_k^T G_k W_k^T

    where ``P_k = p_k(S)`` and ``U_k = P_k H_k W_k`` is cached from the
    forward pass.
    """
    return loss_and_gradient(model, S, X, Y, filters=filters)[1]


def gd_step(model: GnnModel, grads, cfg: TrainConfig) -> GnnModel:
    """``W <- W - lr * (clip(grad) + weight_decay * W)``, global-norm clipping."""
    if cfg.grad_clip_norm is not None:
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if total > cfg.grad_clip_norm:
            factor = cfg.grad_clip_norm / total
            grads = [g * factor for g in grads]
    new = [W - cfg.lr * (g + cfg.weight_decay * W) for W, g in zip(model.weights, grads)]
    return model.with_weights(new)


def param_norm(weights) -> float:
    return math.sqrt(sum(float(np.sum(W * W)) for W in weights))


def train(model: GnnModel, S, X, Y, cfg: TrainConfig):
    """Train on a single operator; returns the final model and loss history."""
    require_smooth(model)
    filters = filter_matrices(model, getattr(S, "matrix", S))
    losses = []
    for epoch in range(cfg.epochs):
        value, grads = loss_and_gradient(model, S, X, Y, filters=filters)
        if not math.isfinite(value):
            raise TrainingDivergence(epoch, "dense")
        losses.append(value)
        model = gd_step(model, grads, cfg)
    losses.append(loss(model, S, X, Y, filters=filters))
    return model, np.array(losses)


def train_pair(model_init: GnnModel, S_dense, S_sparse, X, Y, cfg: TrainConfig) -> TrajectoryRecord:
    """Run matched gradient descent on the dense and sparse operators."""
    require_smooth(model_init)
    X = np.asarray(X, dtype=float)
    F_dense = filter_matrices(model_init, getattr(S_dense, "matrix", S_dense))
    F_sparse = filter_matrices(model_init, getattr(S_sparse, "matrix", S_sparse))
    dense = sparse = model_init
    T = cfg.epochs
    K = model_init.depth
    loss_d = np.empty(T + 1)
    loss_s = np.empty(T + 1)
    gap = np.empty(T + 1)
    layer_gaps = np.empty((T + 1, K))

    for t in range(T + 1):
        ld, gd = loss_and_gradient(dense, S_dense, X, Y, filters=F_dense)
        ls, gs = loss_and_gradient(sparse, S_sparse, X, Y, filters=F_sparse)
        if not math.isfinite(ld):
            raise TrainingDivergence(t, "dense")
        if not math.isfinite(ls):
            raise TrainingDivergence(t, "sparse")
        loss_d[t], loss_s[t] = ld, ls
        diffs = [np.linalg.norm(a - b) for a, b in zip(dense.weights, sparse.weights)]
        layer_gaps[t] = diffs
        norm = param_norm(dense.weights)
        gap[t] = math.sqrt(sum(d * d for d in diffs)) / norm if norm > 0 else 0.0
        if t < T:
            dense = gd_step(dense, gd, cfg)
            sparse = gd_step(sparse, gs, cfg)
    return TrajectoryRecord(loss_d, loss_s, gap, layer_gaps)
