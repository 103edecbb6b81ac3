"""Flat-parameter classifiers with analytic gradients.

Two architectures share a single flat float64 parameter layout:

* ``hidden_dim == 0`` -- multinomial softmax regression. The parameters
  are a (P+1) x K weight matrix stored row-major; inputs are augmented
  with a trailing constant 1, so the last row is the bias.
* ``hidden_dim == H > 0`` -- one tanh hidden layer. The parameters are
  the (P+1) x H input block followed by the (H+1) x K output block,
  each row-major with the bias as its last row.

This layout is a stable serialization contract (result files store the
raw vector) and must not change. Labels are 1-based: values in 1..K.

All functions are pure and deterministic: batch reductions happen in
ascending sample order, so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class ModelSpec:
    """Architecture over ``input_dim`` features and ``num_classes`` labels."""

    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim < 0:
            raise ConfigError(f"hidden_dim must be >= 0, got {self.hidden_dim}")

    @property
    def param_count(self) -> int:
        p, h, k = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return (p + 1) * k
        return (p + 1) * h + (h + 1) * k


def _unpack(spec: ModelSpec, w: np.ndarray):
    """Views of the flat vector as weight matrices (no copies)."""
    p, h, k = spec.input_dim, spec.hidden_dim, spec.num_classes
    if w.shape != (spec.param_count,):
        raise ConfigError(
            f"parameter vector has length {w.shape}, expected ({spec.param_count},)"
        )
    if h == 0:
        return (w.reshape(p + 1, k),)
    split = (p + 1) * h
    return w[:split].reshape(p + 1, h), w[split:].reshape(h + 1, k)


def _augment(x: np.ndarray) -> np.ndarray:
    """Append the constant-1 bias feature to each row."""
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


def _check_batch(spec: ModelSpec, x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ConfigError(f"batch shapes disagree: features {x.shape}, labels {y.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != spec.input_dim:
        raise ConfigError(
            f"feature dimension {x.shape[1]} does not match input_dim {spec.input_dim}"
        )
    if y.min() < 1 or y.max() > spec.num_classes:
        raise DataError(
            f"labels must lie in 1..{spec.num_classes}, got range "
            f"[{int(y.min())}, {int(y.max())}]"
        )
    return x, y.astype(np.int64)


def _logits(spec: ModelSpec, w: np.ndarray, x: np.ndarray):
    """Returns (logits, hidden_aug, input_aug); hidden_aug is None when H=0."""
    xa = _augment(x)
    mats = _unpack(spec, w)
    if spec.hidden_dim == 0:
        return xa @ mats[0], None, xa
    hidden = np.tanh(xa @ mats[0])
    ha = _augment(hidden)
    return ha @ mats[1], ha, xa


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(spec: ModelSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Class-probability vector for one feature vector ``x`` of length P."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.input_dim:
        raise ConfigError(
            f"feature vector has shape {x.shape}, expected ({spec.input_dim},)"
        )
    return predict_proba(spec, w, x.reshape(1, -1))[0]


def predict_proba(spec: ModelSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(n, K) softmax probabilities for a feature matrix ``x``."""
    x = np.asarray(x, dtype=np.float64)
    z, _, _ = _logits(spec, w, x)
    return np.exp(_log_softmax(z))


def per_sample_losses(spec: ModelSpec, w: np.ndarray, x, y) -> np.ndarray:
    """Cross-entropy of each sample under ``w``; labels in 1..K."""
    x, y = _check_batch(spec, x, y)
    z, _, _ = _logits(spec, w, x)
    logp = _log_softmax(z)
    return -logp[np.arange(x.shape[0]), y - 1]


def loss_and_grad(spec: ModelSpec, w: np.ndarray, x, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient in ``w``.

    The gradient is the mean of per-sample gradients, reduced in
    ascending sample order.
    """
    x, y = _check_batch(spec, x, y)
    n = x.shape[0]
    z, ha, xa = _logits(spec, w, x)
    logp = _log_softmax(z)
    loss = float(-logp[np.arange(n), y - 1].mean())

    delta = np.exp(logp)  # softmax probabilities
    delta[np.arange(n), y - 1] -= 1.0

    if spec.hidden_dim == 0:
        grad = (xa.T @ delta) / n
        return loss, grad.reshape(-1)

    _, w2 = _unpack(spec, w)
    g2 = (ha.T @ delta) / n
    hidden = ha[:, :-1]
    dh = delta @ w2[:-1, :].T
    da = (1.0 - hidden**2) * dh
    g1 = (xa.T @ da) / n
    return loss, np.concatenate([g1.reshape(-1), g2.reshape(-1)])


def per_sample_grads(spec: ModelSpec, w: np.ndarray, x, y) -> np.ndarray:
    """(n, d) matrix of per-sample loss gradients.

    Row mean equals the gradient from :func:`loss_and_grad` up to
    floating-point reduction noise (< 1e-12).
    """
    x, y = _check_batch(spec, x, y)
    n = x.shape[0]
    z, ha, xa = _logits(spec, w, x)
    delta = np.exp(_log_softmax(z))
    delta[np.arange(n), y - 1] -= 1.0

    if spec.hidden_dim == 0:
        out = np.einsum("ni,nk->nik", xa, delta)
        return out.reshape(n, -1)

    _, w2 = _unpack(spec, w)
    g2 = np.einsum("ni,nk->nik", ha, delta).reshape(n, -1)
    hidden = ha[:, :-1]
    da = (1.0 - hidden**2) * (delta @ w2[:-1, :].T)
    g1 = np.einsum("ni,nk->nik", xa, da).reshape(n, -1)
    return np.concatenate([g1, g2], axis=1)


def finite_diff_grad(spec: ModelSpec, w: np.ndarray, x, y, step: float) -> np.ndarray:
    """Central-difference estimate of the batch-loss gradient (test oracle).

    Deliberately independent of the analytic path: it only evaluates the
    loss. O(2d) loss evaluations, so keep the model small.
    """
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    x, y = _check_batch(spec, x, y)
    w = np.asarray(w, dtype=np.float64)
    grad = np.empty_like(w)
    for j in range(w.size):
        wp = w.copy()
        wp[j] += step
        wm = w.copy()
        wm[j] -= step
        lp = per_sample_losses(spec, wp, x, y).mean()
        lm = per_sample_losses(spec, wm, x, y).mean()
        grad[j] = (lp - lm) / (2.0 * step)
    return grad


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Initial parameter vector: biases zero, weights Glorot-uniform.

    Each layer's non-bias rows are drawn uniformly from [-s, s] with
    s = sqrt(6 / (fan_in + fan_out)).
    """
    p, h, k = spec.input_dim, spec.hidden_dim, spec.num_classes
    w = np.zeros(spec.param_count)
    if h == 0:
        (mat,) = _unpack(spec, w)
        s = np.sqrt(6.0 / (p + k))
        mat[:p, :] = rng.uniform(-s, s, size=(p, k))
    else:
        m1, m2 = _unpack(spec, w)
        s1 = np.sqrt(6.0 / (p + h))
        m1[:p, :] = rng.uniform(-s1, s1, size=(p, h))
        s2 = np.sqrt(6.0 / (h + k))
        m2[:h, :] = rng.uniform(-s2, s2, size=(h, k))
    return w
