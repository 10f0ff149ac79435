"""Per-node two-layer MLP, PPR-weighted logit aggregation, loss, Adam.

The network maps a feature row to class logits independently of the graph;
graph structure enters only through the fixed aggregation weights, which
receive no gradient. Training arithmetic defaults to float32; pass
``dtype=np.float64`` to ``init_params`` for gradient-check precision.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import os

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def c(self) -> int:
        return self.W2.shape[1]

    def tensors(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m={k: np.zeros_like(t) for k, t in params.tensors().items()},
            v={k: np.zeros_like(t) for k, t in params.tensors().items()},
            step=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    dropout_rate: float = 0.1
    weight_decay: float = 1e-4
    batch_size: int = 512
    epochs: int = 200
    hidden: int = 32
    seed: int = 0

    def validate(self) -> None:
        if not (self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")


def init_params(d: int, hidden: int, c: int, seed: int, dtype=np.float32) -> ModelParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d + hidden))
    lim2 = np.sqrt(6.0 / (hidden + c))
    return ModelParams(
        W1=rng.uniform(-lim1, lim1, size=(d, hidden)).astype(dtype),
        b1=np.zeros(hidden, dtype=dtype),
        W2=rng.uniform(-lim2, lim2, size=(hidden, c)).astype(dtype),
        b2=np.zeros(c, dtype=dtype),
    )


@dataclass
class DropoutMasks:
    """Inverted-scaling dropout masks: ``input_values`` multiplies the nnz
    values of the sparse feature rows, ``hidden`` the post-ReLU matrix."""

    input_values: np.ndarray | None = None
    hidden: np.ndarray | None = None


def make_dropout_masks(feature_nnz: int, hidden_shape, rate: float, rng) -> DropoutMasks:
    if rate <= 0.0:
        return DropoutMasks()
    scale = 1.0 / (1.0 - rate)
    return DropoutMasks(
        input_values=(rng.random(feature_nnz) >= rate) * scale,
        hidden=(rng.random(hidden_shape) >= rate) * scale,
    )


def forward_local(params: ModelParams, features, masks: DropoutMasks | None = None):
    """Logits H = relu(X W1 + b1) W2 + b2, row per input node.

    ``features`` is a scipy CSR matrix (or dense array) of width d.
    Dropout masks are applied only when supplied (training mode).
    """
    if features.shape[1] != params.d:
        raise ConfigError(
            f"feature width {features.shape[1]} != model input width {params.d}"
        )
    X = features
    if masks is not None and masks.input_values is not None:
        if not sp.issparse(X):
            raise ConfigError("input dropout mask requires sparse features")
        X = X.copy()
        X.data = X.data * masks.input_values.astype(X.data.dtype)
    A1 = X @ params.W1 + params.b1
    A1 = np.asarray(A1)
    Z1 = np.maximum(A1, 0)
    if masks is not None and masks.hidden is not None:
        Z1 = Z1 * masks.hidden.astype(Z1.dtype)
    H = Z1 @ params.W2 + params.b2
    if not np.isfinite(H).all():
        raise DataError("non-finite logits in forward pass")
    return H


def aggregate(weights: np.ndarray, H_rows: np.ndarray) -> np.ndarray:
    """Weighted sum of logit rows for one node's top-k neighborhood."""
    weights = np.asarray(weights)
    if len(weights) != H_rows.shape[0]:
        raise ConfigError(
            f"{len(weights)} weights for {H_rows.shape[0]} logit rows"
        )
    return weights.astype(H_rows.dtype) @ H_rows


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _aggregation_matrix(batch, num_unique: int, dtype):
    data = batch.slot_weights.astype(dtype)
    return sp.csr_matrix(
        (data, batch.slot_unique, batch.row_indptr),
        shape=(len(batch.labels), num_unique),
    )


def loss_and_grad(
    params: ModelParams,
    batch,
    features,
    config: TrainConfig,
    masks: DropoutMasks | None = None,
):
    """Mean softmax cross-entropy over the batch plus L2 weight decay on
    W1/W2; returns (loss, grads dict). Aggregation weights are constants.

    ``batch`` provides row_indptr / slot_unique / slot_weights / labels
    (see train.Batch); ``features`` holds the gathered rows for the
    batch's unique nodes.
    """
    b = len(batch.labels)
    if b == 0:
        raise ConfigError("empty batch")
    if (np.diff(batch.row_indptr) < 1).any():
        row = int(np.argmax(np.diff(batch.row_indptr) < 1))
        raise DataError(f"batch row {row} has no top-k entries")
    labels = np.asarray(batch.labels)
    if labels.min() < 0 or labels.max() >= params.c:
        raise DataError("label out of range")

    dtype = params.W1.dtype
    X = features
    if masks is not None and masks.input_values is not None:
        if not sp.issparse(X):
            raise ConfigError("input dropout mask requires sparse features")
        X = X.copy()
        X.data = X.data * masks.input_values.astype(X.data.dtype)
    A1 = np.asarray(X @ params.W1 + params.b1)
    Z1 = np.maximum(A1, 0)
    if masks is not None and masks.hidden is not None:
        Z1 = Z1 * masks.hidden.astype(dtype)
    H = Z1 @ params.W2 + params.b2

    agg = _aggregation_matrix(batch, features.shape[0], dtype)
    Z = np.asarray(agg @ H)
    P = softmax(Z)

    log_probs = Z - Z.max(axis=1, keepdims=True)
    log_probs = log_probs - np.log(np.exp(log_probs).sum(axis=1, keepdims=True))
    data_loss = -log_probs[np.arange(b), labels].mean()
    reg = 0.5 * config.weight_decay * (
        float((params.W1.astype(np.float64) ** 2).sum())
        + float((params.W2.astype(np.float64) ** 2).sum())
    )
    loss = float(data_loss) + reg
    if not np.isfinite(loss):
        raise DataError("non-finite loss")

    dZ = P.copy()
    dZ[np.arange(b), labels] -= 1
    dZ /= b
    dH = np.asarray(agg.T @ dZ)
    dW2 = Z1.T @ dH + config.weight_decay * params.W2
    db2 = dH.sum(axis=0)
    dZ1 = dH @ params.W2.T
    if masks is not None and masks.hidden is not None:
        dZ1 = dZ1 * masks.hidden.astype(dtype)
    dA1 = dZ1 * (A1 > 0)
    dW1 = np.asarray(X.T @ dA1) + config.weight_decay * params.W1
    db1 = dA1.sum(axis=0)

    grads = {"W1": dW1.astype(dtype), "b1": db1.astype(dtype),
             "W2": dW2.astype(dtype), "b2": db2.astype(dtype)}
    return loss, grads


def adam_step(
    params: ModelParams,
    grads: dict,
    state: AdamState,
    learning_rate: float,
) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, theta in params.tensors().items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ConfigError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        update = learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.isfinite(update).all():
            raise DataError(f"non-finite Adam update for {name}")
        theta -= update.astype(theta.dtype)
    return params, state


def save_checkpoint(params: ModelParams, path_dir: str, meta: dict | None = None):
    """Write model.json (shapes, hyperparams) + params.f32 (W1,b1,W2,b2)."""
    os.makedirs(path_dir, exist_ok=True)
    info = {
        "d": int(params.d),
        "hidden": int(params.hidden),
        "c": int(params.c),
        "tensor_order": ["W1", "b1", "W2", "b2"],
    }
    if meta:
        info.update(meta)
    with open(os.path.join(path_dir, "model.json"), "w") as fh:
        json.dump(info, fh, indent=2)
        fh.write("\n")
    flat = np.concatenate([t.ravel() for t in params.tensors().values()])
    flat.astype("<f4").tofile(os.path.join(path_dir, "params.f32"))


def load_checkpoint(path_dir: str) -> tuple[ModelParams, dict]:
    meta_path = os.path.join(path_dir, "model.json")
    if not os.path.isfile(meta_path):
        raise DataError(f"{meta_path}: missing file")
    with open(meta_path) as fh:
        info = json.load(fh)
    d, h, c = int(info["d"]), int(info["hidden"]), int(info["c"])
    params_path = os.path.join(path_dir, "params.f32")
    if not os.path.isfile(params_path):
        raise DataError(f"{params_path}: missing file")
    flat = np.fromfile(params_path, dtype="<f4")
    expected = d * h + h + h * c + c
    if len(flat) != expected:
        raise DataError(
            f"{path_dir}/params.f32 has {len(flat)} floats, expected {expected}"
        )
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * c
    params = ModelParams(
        W1=flat[:o1].reshape(d, h).copy(),
        b1=flat[o1:o2].copy(),
        W2=flat[o2:o3].reshape(h, c).copy(),
        b2=flat[o3:].copy(),
    )
    return params, info
