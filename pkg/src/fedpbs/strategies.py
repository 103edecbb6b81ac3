"""Round-level federated strategies: select, dispatch, aggregate.

All four strategies share one engine and differ in three choices:

==========  =========================  ==========================  ============
kind        selection                  local update                aggregation
==========  =========================  ==========================  ============
fedavg      uniform sample             plain SGD                   sample_weighted
fedprox     uniform sample             proximal SGD (mu)           uniform
fedbs       lowest importance*variance plain SGD                   soft_variance
fedpbs      uniform sample             screened: plain if
                                       batch >= B_th and
                                       variance <= V_th,
                                       else proximal               uniform
==========  =========================  ==========================  ============

Every strategy probes each participating client's variance at the
round-start model (fedbs probes all clients, as its selection demands),
so per-client variances are logged uniformly. Probes draw from their
own (client, round) substream and never perturb training randomness,
which keeps the degenerate-threshold equivalences bit-exact.

Client ids are 0-based. All reductions run in ascending client id, so
results are independent of dispatch or completion order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .client import (
    PROX_SGD,
    ClientReport,
    LocalConfig,
    gradient_variance,
    local_prox_sgd,
    local_sgd,
    loss_variance,
)
from .errors import ConfigError, NumericError
from .models import ModelSpec
from .rng import derive_seed, substream

KINDS = ("fedavg", "fedprox", "fedbs", "fedpbs")
AGGREGATIONS = ("sample_weighted", "uniform", "soft_variance")
VARIANCE_KINDS = ("gradient", "loss")
PROBE_SCOPES = ("batch", "full_shard")

DEFAULT_AGGREGATION = {
    "fedavg": "sample_weighted",
    "fedprox": "uniform",
    "fedbs": "soft_variance",
    "fedpbs": "uniform",
}
DEFAULT_VARIANCE_KIND = {
    "fedavg": "loss",
    "fedprox": "loss",
    "fedbs": "gradient",
    "fedpbs": "loss",
}


def _parse_quantile(rule: str) -> float:
    if rule.startswith("p"):
        try:
            level = int(rule[1:])
        except ValueError:
            level = -1
        if 1 <= level <= 100:
            return level / 100.0
    raise ConfigError(f"quantile rule must look like 'p75' (p1..p100), got '{rule}'")


@dataclass(frozen=True)
class StrategyConfig:
    """Hyperparameters of one federated strategy.

    ``importance`` weights default to each client's sample share N_q/N
    when left as None. ``clients_per_round`` None means full
    participation. ``aggregation`` / ``variance_kind`` None resolve to
    the per-kind defaults in the table above. ``variance_threshold``
    may be the string "calibrate": the simulator then sets it to the
    median round-0 variance across all clients.
    """

    kind: str
    mu: float = 0.1
    tau: float = 1.0
    delta: float | str = "p75"
    batch_threshold: int = 32
    variance_threshold: float | str = "calibrate"
    importance: tuple | None = None
    clients_per_round: int | None = None
    aggregation: str | None = None
    variance_kind: str | None = None
    probe_scope: str = "batch"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"strategy must be one of {KINDS}, got '{self.kind}'")
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if isinstance(self.delta, str):
            _parse_quantile(self.delta)
        elif self.delta < 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if self.batch_threshold < 1:
            raise ConfigError(f"batch_threshold must be >= 1, got {self.batch_threshold}")
        if isinstance(self.variance_threshold, str):
            if self.variance_threshold != "calibrate":
                raise ConfigError(
                    "variance_threshold must be a positive number or 'calibrate', "
                    f"got '{self.variance_threshold}'"
                )
        elif not self.variance_threshold > 0:
            raise ConfigError(
                f"variance_threshold must be > 0, got {self.variance_threshold}"
            )
        if self.importance is not None:
            imp = np.asarray(self.importance, dtype=np.float64)
            if (imp < 0).any() or not (imp > 0).any():
                raise ConfigError(
                    "importance weights must be >= 0 with at least one positive"
                )
        if self.clients_per_round is not None and self.clients_per_round < 1:
            raise ConfigError(
                f"clients_per_round must be >= 1, got {self.clients_per_round}"
            )
        if self.aggregation is not None and self.aggregation not in AGGREGATIONS:
            raise ConfigError(
                f"aggregation must be one of {AGGREGATIONS}, got '{self.aggregation}'"
            )
        if self.variance_kind is not None and self.variance_kind not in VARIANCE_KINDS:
            raise ConfigError(
                f"variance_kind must be one of {VARIANCE_KINDS}, got '{self.variance_kind}'"
            )
        if self.probe_scope not in PROBE_SCOPES:
            raise ConfigError(
                f"probe_scope must be one of {PROBE_SCOPES}, got '{self.probe_scope}'"
            )

    def resolved_aggregation(self) -> str:
        return self.aggregation or DEFAULT_AGGREGATION[self.kind]

    def resolved_variance_kind(self) -> str:
        return self.variance_kind or DEFAULT_VARIANCE_KIND[self.kind]


@dataclass(frozen=True)
class SelectionOutcome:
    """Who participated, who got the proximal pull, and their scores.

    ``hgv_set`` lists the clients whose update actually included the
    proximal term (with mu = 0 the pull is a no-op, so nobody is
    flagged). ``scores`` are importance * variance, aligned with
    ``selected``.
    """

    selected: tuple
    hgv_set: tuple
    scores: tuple


@dataclass(frozen=True)
class RoundResult:
    """Everything one communication round produced."""

    new_params: np.ndarray
    outcome: SelectionOutcome
    variances: tuple
    reports: tuple


@dataclass(frozen=True)
class RoundEnv:
    """Static per-experiment inputs shared by every round."""

    spec: ModelSpec
    shards: tuple  # client id -> (features, labels)
    local: LocalConfig
    strategy: StrategyConfig
    master_seed: int


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def soft_weights(variances, tau: float) -> np.ndarray:
    """Normalized softmax(-tau * variance) aggregation weights.

    Strictly decreasing in variance; tau -> 0 approaches uniform.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    v = np.asarray(variances, dtype=np.float64)
    if v.size == 0:
        raise ValueError("soft_weights needs at least one variance")
    scaled = np.exp(-tau * (v - v.min()))
    return scaled / scaled.sum()


def select_min_score(scores, count: int) -> tuple:
    """The ``count`` client ids with smallest scores (ties: lowest id).

    For a separable sum this bottom-k rule is exactly the minimizer of
    total score over all subsets of that size.
    """
    scores = list(scores)
    if not 1 <= count <= len(scores):
        raise ConfigError(
            f"cannot select {count} clients out of {len(scores)}"
        )
    order = sorted(range(len(scores)), key=lambda i: (scores[i], i))
    return tuple(sorted(order[:count]))


def quantile_threshold(values, level: float) -> float:
    """Sort ascending and take the element at index ceil(level * n) - 1."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    idx = max(math.ceil(level * v.size) - 1, 0)
    return float(v[idx])


def detect_hgv(variances, delta: float | str = "p75") -> tuple:
    """Client ids whose variance strictly exceeds the threshold.

    ``delta`` is either an absolute threshold or a quantile rule like
    "p75", resolved against this round's variances.
    """
    v = np.asarray(variances, dtype=np.float64)
    if v.size == 0:
        return ()
    if not np.isfinite(v).all() or (v < 0).any():
        raise ValueError("variances must be finite and non-negative")
    if isinstance(delta, str):
        threshold = quantile_threshold(v, _parse_quantile(delta))
    else:
        threshold = float(delta)
    return tuple(int(i) for i in np.flatnonzero(v > threshold))


def aggregation_weights(mode: str, sizes, variances, tau: float) -> np.ndarray:
    """Normalized aggregation weights for reports given in client-id order."""
    m = len(sizes)
    if mode == "uniform":
        return np.full(m, 1.0 / m)
    if mode == "sample_weighted":
        s = np.asarray(sizes, dtype=np.float64)
        return s / s.sum()
    if mode == "soft_variance":
        return soft_weights(variances, tau)
    raise ConfigError(f"unknown aggregation mode '{mode}'")


def aggregate_reports(reports, mode: str, tau: float = 1.0) -> np.ndarray:
    """Convex combination of client models, reduced in ascending client id.

    The id-ordered reduction makes the result independent of the order
    reports arrive in.
    """
    if not reports:
        raise ConfigError("nothing to aggregate: no client reports")
    ordered = sorted(reports, key=lambda r: r.client_id)
    weights = aggregation_weights(
        mode,
        [r.n_samples for r in ordered],
        [r.variance for r in ordered],
        tau,
    )
    out = np.zeros_like(ordered[0].updated_params)
    for rep, beta in zip(ordered, weights):
        out = out + beta * rep.updated_params
    return out


# ---------------------------------------------------------------------------
# Round engine
# ---------------------------------------------------------------------------


def _resolve_importance(cfg: StrategyConfig, sizes: np.ndarray) -> np.ndarray:
    if cfg.importance is None:
        return sizes / sizes.sum()
    imp = np.asarray(cfg.importance, dtype=np.float64)
    if imp.shape != sizes.shape:
        raise ConfigError(
            f"importance has {imp.size} entries for {sizes.size} clients"
        )
    return imp


def _probe_variance(env: RoundEnv, w_t: np.ndarray, q: int, round_index: int) -> float:
    x, y = env.shards[q]
    n = y.size
    if n == 0:
        raise ConfigError(f"client {q} has no samples")
    if env.strategy.probe_scope == "batch" and n > env.local.batch_size:
        rng = substream(env.master_seed, "probe", q, round_index)
        idx = np.sort(rng.choice(n, size=env.local.batch_size, replace=False))
        x, y = x[idx], y[idx]
    if env.strategy.resolved_variance_kind() == "gradient":
        return gradient_variance(env.spec, w_t, x, y)
    return loss_variance(env.spec, w_t, x, y)


def probe_all_variances(env: RoundEnv, w_t: np.ndarray, round_index: int, mapper=map):
    """Every client's probe variance at ``w_t`` (used for calibration)."""
    return tuple(
        mapper(lambda q: _probe_variance(env, w_t, q, round_index), range(len(env.shards)))
    )


def _train_one(
    env: RoundEnv, w_t: np.ndarray, q: int, round_index: int, proximal: bool
) -> ClientReport:
    x, y = env.shards[q]
    lcfg = replace(
        env.local,
        mu=env.strategy.mu,
        seed=derive_seed(env.master_seed, "shuffle", q, round_index),
    )
    trainer = local_prox_sgd if proximal else local_sgd
    report = trainer(env.spec, w_t, x, y, lcfg, client_id=q)
    if not np.isfinite(report.updated_params).all():
        raise NumericError(
            f"non-finite parameters at round {round_index} from client {q}"
        )
    return report


def _run_round(
    kind: str,
    env: RoundEnv,
    w_t: np.ndarray,
    round_index: int,
    variance_threshold: float | None,
    mapper,
) -> RoundResult:
    q_total = len(env.shards)
    if q_total == 0:
        raise ConfigError("no clients to run a round over")
    sizes = np.array([shard[1].size for shard in env.shards], dtype=np.int64)
    if (sizes == 0).any():
        empty = int(np.flatnonzero(sizes == 0)[0])
        raise ConfigError(f"client {empty} has no samples; rounds need N_q >= 1")
    cfg = env.strategy
    count = cfg.clients_per_round if cfg.clients_per_round is not None else q_total
    if not 1 <= count <= q_total:
        raise ConfigError(
            f"clients_per_round must lie in [1, {q_total}], got {count}"
        )
    importance = _resolve_importance(cfg, sizes.astype(np.float64))

    def probe(q):
        return _probe_variance(env, w_t, q, round_index)

    if kind == "fedbs":
        all_variances = list(mapper(probe, range(q_total)))
        all_scores = [importance[q] * all_variances[q] for q in range(q_total)]
        selected = select_min_score(all_scores, count)
        variances = tuple(all_variances[q] for q in selected)
    else:
        if count < q_total:
            rng = substream(env.master_seed, "round_sample", round_index)
            chosen = rng.choice(q_total, size=count, replace=False)
            selected = tuple(int(v) for v in np.sort(chosen))
        else:
            selected = tuple(range(q_total))
        variances = tuple(mapper(probe, selected))

    if kind == "fedpbs":
        v_th = _resolve_variance_threshold(cfg, variance_threshold)
        prox_flags = tuple(
            not (min(env.local.batch_size, int(sizes[q])) >= cfg.batch_threshold and v <= v_th)
            for q, v in zip(selected, variances)
        )
    elif kind == "fedprox":
        prox_flags = (True,) * len(selected)
    else:
        prox_flags = (False,) * len(selected)

    def train(i):
        report = _train_one(env, w_t, selected[i], round_index, prox_flags[i])
        return replace(report, variance=variances[i])

    reports = tuple(mapper(train, range(len(selected))))

    new_params = aggregate_reports(reports, cfg.resolved_aggregation(), cfg.tau)
    hgv = tuple(r.client_id for r in reports if r.path_taken == PROX_SGD)
    scores = tuple(float(importance[q] * v) for q, v in zip(selected, variances))
    outcome = SelectionOutcome(selected=selected, hgv_set=hgv, scores=scores)
    return RoundResult(new_params, outcome, variances, reports)


def _resolve_variance_threshold(cfg: StrategyConfig, override: float | None) -> float:
    if override is not None:
        return float(override)
    if cfg.variance_threshold == "calibrate":
        raise ConfigError(
            "variance_threshold 'calibrate' must be resolved before the round: "
            "pass variance_threshold= explicitly (the simulator calibrates it "
            "from the median round-0 variance)"
        )
    return float(cfg.variance_threshold)


def fedavg_round(env: RoundEnv, w_t, round_index: int, mapper=map) -> RoundResult:
    """Uniformly sample clients, run plain SGD, average (Eq.-style N_q/N by default)."""
    return _run_round("fedavg", env, w_t, round_index, None, mapper)


def fedprox_round(env: RoundEnv, w_t, round_index: int, mapper=map) -> RoundResult:
    """Uniformly sample clients, run proximal SGD everywhere, plain-mean aggregate."""
    return _run_round("fedprox", env, w_t, round_index, None, mapper)


def fedbs_round(env: RoundEnv, w_t, round_index: int, mapper=map) -> RoundResult:
    """Probe all clients, keep the most stable ones, soft-weight their updates."""
    return _run_round("fedbs", env, w_t, round_index, None, mapper)


def fedpbs_round(
    env: RoundEnv,
    w_t,
    round_index: int,
    variance_threshold: float | None = None,
    mapper=map,
) -> RoundResult:
    """Screen sampled clients by batch size and variance; route unstable ones to prox."""
    return _run_round("fedpbs", env, w_t, round_index, variance_threshold, mapper)


ROUND_FUNCTIONS = {
    "fedavg": fedavg_round,
    "fedprox": fedprox_round,
    "fedbs": fedbs_round,
    "fedpbs": fedpbs_round,
}
