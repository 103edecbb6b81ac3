"""Client-side local training and variance probes.

Both trainers run the same schedule: E epochs, each epoch a seeded
shuffle of the shard followed by mini-batch SGD steps (last partial
batch kept). The proximal trainer adds mu * (w - w_anchor) to every
batch gradient, with the anchor fixed at the round-start global model
for all E epochs. With mu = 0 the proximal trainer takes the identical
code path as the plain one, so their outputs are bit-exact.

Variance probes quantify a client's update stability at the round-start
model: gradient variance is the mean squared distance of per-sample
gradients from their mean; loss variance is the population variance of
per-sample cross-entropy losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .models import ModelSpec, loss_and_grad, per_sample_grads, per_sample_losses

PLAIN_SGD = "plain_sgd"
PROX_SGD = "prox_sgd"


@dataclass(frozen=True)
class LocalConfig:
    """Local training hyperparameters for one client run.

    ``eta`` = 0 is permitted (handy for zero-step sanity runs) even
    though real training wants eta > 0. The seed drives the epoch
    shuffles and is normally a per-(client, round) substream seed.
    """

    eta: float
    epochs: int
    batch_size: int
    mu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")


@dataclass(frozen=True)
class ClientReport:
    """One client's round output."""

    client_id: int
    updated_params: np.ndarray
    n_samples: int
    effective_batch: int
    variance: float
    loss_trace: tuple
    path_taken: str


def prox_step(
    w: np.ndarray, grad: np.ndarray, anchor: np.ndarray, eta: float, mu: float
) -> np.ndarray:
    """One proximal SGD step: w - eta * (grad + mu * (w - anchor))."""
    return w - eta * (grad + mu * (w - anchor))


def _run_local(
    spec: ModelSpec,
    w_global: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    cfg: LocalConfig,
    client_id: int,
    proximal: bool,
) -> ClientReport:
    n = int(np.asarray(y).shape[0])
    if n == 0:
        raise ValueError(f"client {client_id}: empty shard")
    use_prox = proximal and cfg.mu > 0
    if use_prox and cfg.eta * cfg.mu >= 2:
        raise ConfigError(
            f"eta * mu = {cfg.eta * cfg.mu} >= 2: the proximal step alone "
            "would diverge; lower eta or mu"
        )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    w = np.array(w_global, dtype=np.float64, copy=True)
    anchor = np.array(w_global, dtype=np.float64, copy=True)

    trace = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            loss, grad = loss_and_grad(spec, w, x[batch], y[batch])
            if use_prox:
                w = prox_step(w, grad, anchor, cfg.eta, cfg.mu)
            else:
                w = w - cfg.eta * grad
            epoch_loss += loss * batch.size
        trace.append(epoch_loss / n)

    return ClientReport(
        client_id=client_id,
        updated_params=w,
        n_samples=n,
        effective_batch=min(cfg.batch_size, n),
        variance=0.0,
        loss_trace=tuple(trace),
        path_taken=PROX_SGD if use_prox else PLAIN_SGD,
    )


def local_sgd(
    spec: ModelSpec,
    w_global: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    cfg: LocalConfig,
    client_id: int = 0,
) -> ClientReport:
    """Plain mini-batch SGD from the received global model."""
    return _run_local(spec, w_global, x, y, cfg, client_id, proximal=False)


def local_prox_sgd(
    spec: ModelSpec,
    w_global: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    cfg: LocalConfig,
    client_id: int = 0,
) -> ClientReport:
    """Proximal mini-batch SGD anchored at the round-start global model."""
    return _run_local(spec, w_global, x, y, cfg, client_id, proximal=True)


def gradient_variance(spec: ModelSpec, w: np.ndarray, x, y) -> float:
    """Mean squared distance of per-sample gradients from their mean."""
    grads = per_sample_grads(spec, w, x, y)
    centered = grads - grads.mean(axis=0)
    return float(np.einsum("nd,nd->n", centered, centered).mean())


def loss_variance(spec: ModelSpec, w: np.ndarray, x, y) -> float:
    """Population variance of per-sample cross-entropy losses."""
    losses = per_sample_losses(spec, w, x, y)
    return float(((losses - losses.mean()) ** 2).mean())
