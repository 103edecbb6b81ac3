"""Deterministic federated-learning simulation library.

FedAvg, FedProx, FedBS, and the hybrid FedPBS strategy over small
analytic-gradient classifiers, with Dirichlet label-skew partitioning
and fully seeded, byte-reproducible experiment runs.
"""

from .client import (
    PLAIN_SGD,
    PROX_SGD,
    ClientReport,
    LocalConfig,
    gradient_variance,
    local_prox_sgd,
    local_sgd,
    loss_variance,
)
from .config import (
    DataConfig,
    ExperimentConfig,
    parse_config_file,
    parse_config_text,
    resolve_config,
    serialize_config,
    to_flat,
)
from .data import (
    Dataset,
    DirichletSpec,
    Partition,
    dirichlet_partition,
    load_csv,
    load_ucihar,
    partition_report,
    partition_report_csv,
    standardize,
    synth_clusters,
)
from .errors import ConfigError, DataError, NumericError
from .models import (
    ModelSpec,
    finite_diff_grad,
    forward,
    init_params,
    loss_and_grad,
    per_sample_grads,
    per_sample_losses,
    predict_proba,
)
from .rng import derive_seed, substream
from .simulator import (
    ExperimentResult,
    RoundRecord,
    evaluate,
    load_dataset,
    run_experiment,
    sweep,
)
from .strategies import (
    RoundEnv,
    RoundResult,
    SelectionOutcome,
    StrategyConfig,
    aggregate_reports,
    detect_hgv,
    fedavg_round,
    fedbs_round,
    fedpbs_round,
    fedprox_round,
    select_min_score,
    soft_weights,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
