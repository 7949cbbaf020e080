"""Feed-forward binary classifier trained with BCE and Adam.

Plain numpy: ReLU hidden layers, a sigmoid output, inverted dropout
during training, and per-feature input standardization stored with the
model.  `loss_and_grads` is a pure function of the weights so gradients
can be checked against finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .traceio import CLASSIFIER_ARITY

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class MlpParams:
    layers: tuple = (CLASSIFIER_ARITY, 256, 64, 1)
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    dropout: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if len(self.layers) < 2 or self.layers[-1] != 1:
            raise ValueError("layers must end in a single output unit")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")

    def hash(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _init_weights(params: MlpParams, rng: np.random.Generator):
    weights = []
    for fan_in, fan_out in zip(params.layers[:-1], params.layers[1:]):
        scale = np.sqrt(2.0 / fan_in)
        W = rng.standard_normal((fan_in, fan_out)) * scale
        b = np.zeros(fan_out)
        weights.append((W, b))
    return weights


def _forward(weights, X: np.ndarray):
    """Returns (activations per layer, final logits)."""
    acts = [X]
    h = X
    for i, (W, b) in enumerate(weights):
        z = h @ W + b
        if i < len(weights) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return acts, z[:, 0]
    raise AssertionError("unreachable")


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # stable: max(z,0) - z*y + log1p(exp(-|z|))
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def loss_and_grads(weights, X: np.ndarray, y: np.ndarray, dropout_masks=None):
    """Mean BCE and its gradient for every weight matrix and bias."""
    acts = [X]
    h = X
    for i, (W, b) in enumerate(weights[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[i]
        acts.append(h)
    W_out, b_out = weights[-1]
    z = (h @ W_out + b_out)[:, 0]
    loss = _bce_from_logits(z, y)

    n = len(X)
    grads = [None] * len(weights)
    # d loss / d logit for mean BCE
    dz = (1.0 / (1.0 + np.exp(-z)) - y)[:, None] / n
    grads[-1] = (acts[-1].T @ dz, dz.sum(axis=0))
    dh = dz @ W_out.T
    for i in range(len(weights) - 2, -1, -1):
        if dropout_masks is not None:
            dh = dh * dropout_masks[i]
        dzi = dh * (acts[i + 1] > 0.0)
        W, _ = weights[i]
        grads[i] = (acts[i].T @ dzi, dzi.sum(axis=0))
        dh = dzi @ W.T
    return loss, grads


class MlpModel:
    """Trained classifier: weights plus input normalization and metadata."""

    def __init__(self, weights, input_mean: np.ndarray, input_std: np.ndarray,
                 params: MlpParams, loss_curve: list[float]):
        self.weights = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                        for W, b in weights]
        self.input_mean = np.asarray(input_mean, dtype=np.float64)
        self.input_std = np.asarray(input_std, dtype=np.float64)
        self.params = params
        self.loss_curve = list(loss_curve)

    @property
    def n_features(self) -> int:
        return self.weights[0][0].shape[0]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"feature arity mismatch: model expects {self.n_features}, got {X.shape[1]}")
        Xn = (X - self.input_mean) / self.input_std
        _, z = _forward(self.weights, Xn)
        p = 1.0 / (1.0 + np.exp(-z))
        return p[0] if single else p


def predict_stop_prob(model: MlpModel, classifier_input) -> float:
    """Probability that it is safe to stop, for one model-ready input."""
    features = getattr(classifier_input, "features", classifier_input)
    return float(model.predict_proba(np.asarray(features, dtype=np.float64)))


def train_mlp(X: np.ndarray, y: np.ndarray, params: MlpParams = MlpParams()) -> MlpModel:
    """Mini-batch Adam on mean BCE; deterministic under the params seed."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("X must be a nonempty 2-D array")
    if len(X) != len(y):
        raise ValueError("X and y length mismatch")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be binary (0/1)")
    if X.shape[1] != params.layers[0]:
        raise ValueError(
            f"feature arity mismatch: params expect {params.layers[0]}, got {X.shape[1]}")

    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), SIGMA_FLOOR)
    Xn = (X - mean) / std

    rng = np.random.default_rng(params.seed)
    weights = _init_weights(params, rng)
    m_state = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
    v_state = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]

    n = len(Xn)
    step = 0
    loss_curve: list[float] = []
    b1, b2, eps = params.adam_beta1, params.adam_beta2, params.adam_eps
    for _ in range(params.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, params.batch_size):
            idx = perm[lo: lo + params.batch_size]
            Xb, yb = Xn[idx], y[idx]
            masks = None
            if params.dropout > 0.0:
                keep = 1.0 - params.dropout
                masks = [
                    (rng.random((len(idx), w)) < keep) / keep
                    for w in params.layers[1:-1]
                ]
            loss, grads = loss_and_grads(weights, Xb, yb, masks)
            step += 1
            new_weights = []
            for li, ((W, b), (gW, gb)) in enumerate(zip(weights, grads)):
                mW, mb = m_state[li]
                vW, vb = v_state[li]
                mW = b1 * mW + (1 - b1) * gW
                mb = b1 * mb + (1 - b1) * gb
                vW = b2 * vW + (1 - b2) * gW * gW
                vb = b2 * vb + (1 - b2) * gb * gb
                m_state[li] = (mW, mb)
                v_state[li] = (vW, vb)
                corr1 = 1 - b1 ** step
                corr2 = 1 - b2 ** step
                W = W - params.learning_rate * (mW / corr1) / (np.sqrt(vW / corr2) + eps)
                b = b - params.learning_rate * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
                new_weights.append((W, b))
            weights = new_weights
            epoch_loss += loss
            n_batches += 1
        loss_curve.append(epoch_loss / max(n_batches, 1))

    return MlpModel(weights, mean, std, params, loss_curve)
