"""Flat key-value experiment configuration.

The on-disk format is one ``key = value`` per line with ``#`` comments.
Every key is optional; defaults follow the UCI-HAR reference setup
(10 clients, 100 rounds, eta 1e-3, batch 64, alpha 0.2, 20 local
epochs). Unknown keys are rejected by name.

``resolve_config`` turns raw strings into a fully concrete
ExperimentConfig: "auto" aggregation / variance_kind become their
per-strategy defaults and ``clients_per_round = all`` becomes the
client count, so serialize -> parse -> resolve round-trips to an
identical config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .client import LocalConfig
from .errors import ConfigError
from .strategies import (
    AGGREGATIONS,
    DEFAULT_AGGREGATION,
    DEFAULT_VARIANCE_KIND,
    KINDS,
    PROBE_SCOPES,
    VARIANCE_KINDS,
    StrategyConfig,
)

DATA_SOURCES = ("synth", "csv", "ucihar")


@dataclass(frozen=True)
class DataConfig:
    """Where the train/test datasets come from."""

    source: str
    data_dir: str = ""
    csv_path: str = ""
    csv_test_path: str = ""
    label_column: str = "label"
    synth_features: int = 20
    synth_classes: int = 6
    synth_per_class: int = 200
    synth_spread: float = 1.0
    standardize: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment: data, partition, model, local, strategy."""

    data: DataConfig
    alpha: float
    clients: int
    min_one_sample: bool
    hidden: int
    local: LocalConfig
    strategy: StrategyConfig
    rounds: int
    eval_every: int
    seed: int

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.clients < 1:
            raise ConfigError(f"clients must be >= 1, got {self.clients}")
        if self.hidden < 0:
            raise ConfigError(f"hidden must be >= 0, got {self.hidden}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


# ---------------------------------------------------------------------------
# Schema: parse / format per key, in canonical file order
# ---------------------------------------------------------------------------


def _p_int(text: str) -> int:
    return int(text)


def _p_float(text: str) -> float:
    return float(text)


def _p_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError("must be 'true' or 'false'")


def _p_enum(options):
    def parse(text: str):
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text

    return parse


def _p_delta(text: str):
    if text.startswith("p"):
        return text  # validated by StrategyConfig
    return float(text)


def _p_variance_threshold(text: str):
    if text == "calibrate":
        return text
    return float(text)


def _p_importance(text: str):
    if text == "":
        return None
    return tuple(float(part) for part in text.split(","))


def _p_clients_per_round(text: str):
    if text == "all":
        return "all"
    return int(text)


def _f_str(value) -> str:
    return str(value)


def _f_float(value) -> str:
    return repr(float(value))


def _f_bool(value) -> str:
    return "true" if value else "false"


def _f_delta(value) -> str:
    return value if isinstance(value, str) else repr(float(value))


def _f_importance(value) -> str:
    return "" if value is None else ",".join(repr(float(v)) for v in value)


@dataclass(frozen=True)
class _Key:
    default: str
    parse: callable
    fmt: callable = _f_str


SCHEMA: dict[str, _Key] = {
    # data
    "data": _Key("synth", _p_enum(DATA_SOURCES)),
    "data_dir": _Key("", str),
    "csv_path": _Key("", str),
    "csv_test_path": _Key("", str),
    "label_column": _Key("label", str),
    "synth_features": _Key("20", _p_int),
    "synth_classes": _Key("6", _p_int),
    "synth_per_class": _Key("200", _p_int),
    "synth_spread": _Key("1.0", _p_float, _f_float),
    "standardize": _Key("false", _p_bool, _f_bool),
    # partition
    "alpha": _Key("0.2", _p_float, _f_float),
    "clients": _Key("10", _p_int),
    "min_one_sample": _Key("true", _p_bool, _f_bool),
    # model
    "hidden": _Key("0", _p_int),
    # local training
    "eta": _Key("0.001", _p_float, _f_float),
    "epochs": _Key("20", _p_int),
    "batch_size": _Key("64", _p_int),
    "mu": _Key("0.1", _p_float, _f_float),
    # strategy
    "strategy": _Key("fedavg", _p_enum(KINDS)),
    "tau": _Key("1.0", _p_float, _f_float),
    "delta": _Key("p75", _p_delta, _f_delta),
    "batch_threshold": _Key("32", _p_int),
    "variance_threshold": _Key("calibrate", _p_variance_threshold, _f_delta),
    "importance": _Key("", _p_importance, _f_importance),
    "clients_per_round": _Key("all", _p_clients_per_round),
    "aggregation": _Key("auto", _p_enum(AGGREGATIONS + ("auto",))),
    "variance_kind": _Key("auto", _p_enum(VARIANCE_KINDS + ("auto",))),
    "probe_scope": _Key("batch", _p_enum(PROBE_SCOPES)),
    # simulator
    "rounds": _Key("100", _p_int),
    "eval_every": _Key("1", _p_int),
    "seed": _Key("0", _p_int),
}


def _reject_unknown(keys) -> None:
    unknown = [k for k in keys if k not in SCHEMA]
    if unknown:
        noun = "key" if len(unknown) == 1 else "keys"
        raise ConfigError(f"unknown config {noun}: {', '.join(sorted(unknown))}")


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines into a raw string mapping."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got '{stripped}'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        _reject_unknown([key])
        if key in raw:
            raise ConfigError(f"{origin}:{lineno}: duplicate key '{key}'")
        raw[key] = value
    return raw


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))


def parse_overrides(pairs) -> dict[str, str]:
    """Parse command-line ``key=value`` override pairs."""
    raw: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got '{pair}'")
        key, _, value = pair.partition("=")
        key = key.strip()
        _reject_unknown([key])
        raw[key] = value.strip()
    return raw


def resolve_config(raw) -> ExperimentConfig:
    """Fill defaults, type-check every key, and build a concrete config."""
    _reject_unknown(raw.keys())
    values = {}
    for key, spec in SCHEMA.items():
        text = raw.get(key, spec.default)
        try:
            values[key] = spec.parse(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config key '{key}': invalid value '{text}' ({exc})") from None

    kind = values["strategy"]
    aggregation = values["aggregation"]
    if aggregation == "auto":
        aggregation = DEFAULT_AGGREGATION[kind]
    variance_kind = values["variance_kind"]
    if variance_kind == "auto":
        variance_kind = DEFAULT_VARIANCE_KIND[kind]
    clients_per_round = values["clients_per_round"]
    if clients_per_round == "all":
        clients_per_round = values["clients"]
    if not 1 <= clients_per_round <= values["clients"]:
        raise ConfigError(
            f"clients_per_round must lie in [1, {values['clients']}], "
            f"got {clients_per_round}"
        )
    if values["importance"] is not None and len(values["importance"]) != values["clients"]:
        raise ConfigError(
            f"importance lists {len(values['importance'])} weights for "
            f"{values['clients']} clients"
        )

    if kind in ("fedprox", "fedpbs") and values["mu"] > 0:
        if values["eta"] * values["mu"] >= 2:
            raise ConfigError(
                f"eta * mu = {values['eta'] * values['mu']} >= 2: the proximal "
                "step alone would diverge; lower eta or mu"
            )

    if values["data"] == "csv" and not (values["csv_path"] and values["csv_test_path"]):
        raise ConfigError("data = csv requires csv_path and csv_test_path")
    if values["data"] == "ucihar" and not values["data_dir"]:
        raise ConfigError("data = ucihar requires data_dir")

    data = DataConfig(
        source=values["data"],
        data_dir=values["data_dir"],
        csv_path=values["csv_path"],
        csv_test_path=values["csv_test_path"],
        label_column=values["label_column"],
        synth_features=values["synth_features"],
        synth_classes=values["synth_classes"],
        synth_per_class=values["synth_per_class"],
        synth_spread=values["synth_spread"],
        standardize=values["standardize"],
    )
    local = LocalConfig(
        eta=values["eta"],
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        mu=values["mu"],
        seed=0,  # per-(client, round) seeds are derived at dispatch time
    )
    strategy = StrategyConfig(
        kind=kind,
        mu=values["mu"],
        tau=values["tau"],
        delta=values["delta"],
        batch_threshold=values["batch_threshold"],
        variance_threshold=values["variance_threshold"],
        importance=values["importance"],
        clients_per_round=clients_per_round,
        aggregation=aggregation,
        variance_kind=variance_kind,
        probe_scope=values["probe_scope"],
    )
    return ExperimentConfig(
        data=data,
        alpha=values["alpha"],
        clients=values["clients"],
        min_one_sample=values["min_one_sample"],
        hidden=values["hidden"],
        local=local,
        strategy=strategy,
        rounds=values["rounds"],
        eval_every=values["eval_every"],
        seed=values["seed"],
    )


def to_flat(cfg: ExperimentConfig) -> dict[str, str]:
    """Canonical flat view of a resolved config (schema key order)."""
    d, s, l = cfg.data, cfg.strategy, cfg.local
    values = {
        "data": d.source,
        "data_dir": d.data_dir,
        "csv_path": d.csv_path,
        "csv_test_path": d.csv_test_path,
        "label_column": d.label_column,
        "synth_features": d.synth_features,
        "synth_classes": d.synth_classes,
        "synth_per_class": d.synth_per_class,
        "synth_spread": d.synth_spread,
        "standardize": d.standardize,
        "alpha": cfg.alpha,
        "clients": cfg.clients,
        "min_one_sample": cfg.min_one_sample,
        "hidden": cfg.hidden,
        "eta": l.eta,
        "epochs": l.epochs,
        "batch_size": l.batch_size,
        "mu": s.mu,
        "strategy": s.kind,
        "tau": s.tau,
        "delta": s.delta,
        "batch_threshold": s.batch_threshold,
        "variance_threshold": s.variance_threshold,
        "importance": s.importance,
        "clients_per_round": s.clients_per_round,
        "aggregation": s.aggregation,
        "variance_kind": s.variance_kind,
        "probe_scope": s.probe_scope,
        "rounds": cfg.rounds,
        "eval_every": cfg.eval_every,
        "seed": cfg.seed,
    }
    return {key: SCHEMA[key].fmt(values[key]) for key in SCHEMA}


def serialize_config(flat: dict[str, str]) -> str:
    """Render a flat config as the on-disk ``key = value`` format."""
    return "".join(f"{key} = {value}\n" for key, value in flat.items())
