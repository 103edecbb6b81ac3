"""End-to-end experiment orchestration.

One experiment: load data, Dirichlet-partition the train split, init
the global model, run T communication rounds of the configured
strategy, and evaluate on the global held-out test set every
``eval_every`` rounds (plus once before training and always after the
final round). A record's ``round`` field counts completed rounds, so
round 0 is the freshly initialized model.

Determinism contract: everything is a pure function of the resolved
config. All randomness flows through labelled substreams of the master
seed, client work may fan out to a thread pool, and all reductions are
client-id ordered, so outputs are byte-identical at any worker count.
``wall_ms`` is the one informational exception and is excluded from
serialized results.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import DataConfig, ExperimentConfig, to_flat
from .data import (
    Dataset,
    DirichletSpec,
    dirichlet_partition,
    load_csv,
    load_ucihar,
    standardize,
    synth_clusters,
)
from .errors import ConfigError, DataError, NumericError
from .models import ModelSpec, init_params, per_sample_losses, predict_proba
from .rng import derive_seed, substream
from .strategies import ROUND_FUNCTIONS, RoundEnv, fedpbs_round, probe_all_variances

THREADS_ENV = "FEDPBS_THREADS"


@dataclass(frozen=True)
class RoundRecord:
    """Global metrics at one evaluation point."""

    round: int
    global_loss: float
    global_accuracy: float
    selected: tuple
    hgv: tuple
    per_client_variance: tuple
    wall_ms: float  # informational only, never serialized


@dataclass(frozen=True)
class ExperimentResult:
    records: tuple
    final_model: np.ndarray
    config_echo: dict  # resolved flat key -> value string, canonical order


def threads_from_env() -> int:
    """Worker-count cap from FEDPBS_THREADS (default 1; never affects outputs)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got '{raw}'") from None
    return max(n, 1)


def load_dataset(cfg: DataConfig, master_seed: int) -> tuple[Dataset, Dataset]:
    """(train, test) per the data config; synthetic draws come from seed substreams."""
    if cfg.source == "synth":
        train = synth_clusters(
            cfg.synth_features,
            cfg.synth_classes,
            cfg.synth_per_class,
            cfg.synth_spread,
            derive_seed(master_seed, "synth_train"),
        )
        test = synth_clusters(
            cfg.synth_features,
            cfg.synth_classes,
            max(cfg.synth_per_class // 2, 1),
            cfg.synth_spread,
            derive_seed(master_seed, "synth_test"),
        )
    elif cfg.source == "csv":
        train = load_csv(cfg.csv_path, cfg.label_column)
        test = load_csv(cfg.csv_test_path, cfg.label_column)
        if test.num_classes != train.num_classes or test.label_values != train.label_values:
            raise DataError(
                "train and test CSVs disagree on label values: "
                f"{train.label_values} vs {test.label_values}"
            )
        if test.n_features != train.n_features:
            raise DataError(
                f"train has {train.n_features} features but test has {test.n_features}"
            )
    else:
        train, test = load_ucihar(cfg.data_dir)
    if cfg.standardize:
        train, test = standardize(train, test)
    return train, test


def evaluate(spec: ModelSpec, w: np.ndarray, test: Dataset) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) on ``test``; argmax ties -> lowest class."""
    if test.n_samples == 0:
        raise ValueError("empty evaluation set")
    losses = per_sample_losses(spec, w, test.features, test.labels)
    predicted = predict_proba(spec, w, test.features).argmax(axis=1) + 1
    accuracy = float((predicted == test.labels).mean())
    return float(losses.mean()), accuracy


def _check_eval(loss: float, completed_rounds: int) -> None:
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite evaluation loss after {completed_rounds} rounds"
        )


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    """Run one full experiment deterministically from its config."""
    workers = threads_from_env() if threads is None else max(int(threads), 1)
    train, test = load_dataset(cfg.data, cfg.seed)

    partition = dirichlet_partition(
        train,
        DirichletSpec(cfg.alpha, cfg.clients, derive_seed(cfg.seed, "partition")),
        min_one_sample=cfg.min_one_sample,
    )
    sizes = partition.client_sizes()
    if (sizes == 0).any():
        empty = int(np.flatnonzero(sizes == 0)[0])
        raise ConfigError(
            f"client {empty} received no samples after partitioning; enable "
            "min_one_sample or use larger alpha / fewer clients"
        )
    shards = tuple(
        (train.features[idx], train.labels[idx]) for idx in partition.assignments
    )

    spec = ModelSpec(train.n_features, train.num_classes, cfg.hidden)
    w = init_params(spec, substream(cfg.seed, "init"))
    env = RoundEnv(spec, shards, cfg.local, cfg.strategy, cfg.seed)

    started = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    mapper = (lambda fn, items: list(pool.map(fn, items))) if pool else map
    try:
        v_th = None
        if cfg.strategy.kind == "fedpbs":
            if cfg.strategy.variance_threshold == "calibrate":
                v_th = float(np.median(probe_all_variances(env, w, 0, mapper)))
            else:
                v_th = float(cfg.strategy.variance_threshold)

        loss, acc = evaluate(spec, w, test)
        _check_eval(loss, 0)
        records = [
            RoundRecord(0, loss, acc, (), (), (), (time.perf_counter() - started) * 1e3)
        ]

        for t in range(cfg.rounds):
            if cfg.strategy.kind == "fedpbs":
                result = fedpbs_round(env, w, t, variance_threshold=v_th, mapper=mapper)
            else:
                result = ROUND_FUNCTIONS[cfg.strategy.kind](env, w, t, mapper=mapper)
            w = result.new_params
            if (t + 1) % cfg.eval_every == 0 or t == cfg.rounds - 1:
                loss, acc = evaluate(spec, w, test)
                _check_eval(loss, t + 1)
                records.append(
                    RoundRecord(
                        round=t + 1,
                        global_loss=loss,
                        global_accuracy=acc,
                        selected=result.outcome.selected,
                        hgv=result.outcome.hgv_set,
                        per_client_variance=result.variances,
                        wall_ms=(time.perf_counter() - started) * 1e3,
                    )
                )
    finally:
        if pool:
            pool.shutdown()

    return ExperimentResult(tuple(records), w, to_flat(cfg))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    strategy: str
    seed: int
    final_accuracy: float
    final_loss: float


@dataclass(frozen=True)
class SweepSummary:
    alpha: float
    strategy: str
    mean_accuracy: float
    std_accuracy: float
    mean_loss: float
    std_loss: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    summary: tuple


def sweep(base, alphas, strategies, seeds, threads: int | None = None) -> SweepResult:
    """Full (alpha x strategy x seed) cross-product over a base raw config.

    Each cell re-resolves the config from raw key-value strings so that
    per-strategy defaults (aggregation, variance kind) follow the
    swept strategy. Summary rows use the population std over seeds.
    """
    from .config import resolve_config

    if not alphas or not strategies or not seeds:
        raise ConfigError("sweep needs non-empty alphas, strategies and seeds")

    rows = []
    for alpha in alphas:
        for strategy in strategies:
            for seed in seeds:
                raw = dict(base)
                raw["alpha"] = repr(float(alpha))
                raw["strategy"] = str(strategy)
                raw["seed"] = str(int(seed))
                try:
                    result = run_experiment(resolve_config(raw), threads=threads)
                except (ConfigError, DataError, NumericError) as exc:
                    raise type(exc)(
                        f"sweep cell (alpha={alpha}, strategy={strategy}, "
                        f"seed={seed}): {exc}"
                    ) from exc
                last = result.records[-1]
                rows.append(
                    SweepRow(
                        alpha=float(alpha),
                        strategy=str(strategy),
                        seed=int(seed),
                        final_accuracy=last.global_accuracy,
                        final_loss=last.global_loss,
                    )
                )

    summary = []
    for alpha in alphas:
        for strategy in strategies:
            cell = [
                r
                for r in rows
                if r.alpha == float(alpha) and r.strategy == str(strategy)
            ]
            accs = np.array([r.final_accuracy for r in cell])
            losses = np.array([r.final_loss for r in cell])
            summary.append(
                SweepSummary(
                    alpha=float(alpha),
                    strategy=str(strategy),
                    mean_accuracy=float(accs.mean()),
                    std_accuracy=float(accs.std()),
                    mean_loss=float(losses.mean()),
                    std_loss=float(losses.std()),
                )
            )
    return SweepResult(tuple(rows), tuple(summary))
