"""Command-line front end and result-file writers.

Subcommands::

    fedpbs run              --config cfg --set key=value ... --out DIR
    fedpbs sweep            --config cfg --alphas 0.2,0.5 --strategies fedpbs,fedbs
                            --seeds 1,2,3 --out DIR
    fedpbs partition-report --config cfg --set key=value ... --out FILE

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical
error. All CSV output uses 17-significant-digit floats, a fixed column
order, and LF line endings, so identical runs produce byte-identical
files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (
    parse_config_file,
    parse_overrides,
    resolve_config,
    serialize_config,
)
from .data import dirichlet_partition, DirichletSpec, partition_report, partition_report_csv
from .errors import ConfigError, DataError, NumericError
from .rng import derive_seed
from .simulator import ExperimentResult, load_dataset, run_experiment, sweep


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def rounds_csv(result: ExperimentResult) -> str:
    lines = ["round,global_loss,global_accuracy,n_selected,n_hgv"]
    for rec in result.records:
        lines.append(
            f"{rec.round},{_fmt(rec.global_loss)},{_fmt(rec.global_accuracy)},"
            f"{len(rec.selected)},{len(rec.hgv)}"
        )
    return "\n".join(lines) + "\n"


def result_json(result: ExperimentResult) -> str:
    # wall_ms is deliberately omitted: serialized results are byte-stable.
    payload = {
        "config": result.config_echo,
        "records": [
            {
                "round": rec.round,
                "global_loss": rec.global_loss,
                "global_accuracy": rec.global_accuracy,
                "selected": list(rec.selected),
                "hgv": list(rec.hgv),
                "per_client_variance": list(rec.per_client_variance),
            }
            for rec in result.records
        ],
        "final_model": [float(v) for v in result.final_model],
    }
    return json.dumps(payload, indent=2) + "\n"


def sweep_csv(rows) -> str:
    lines = ["alpha,strategy,seed,final_accuracy,final_loss"]
    for r in rows:
        lines.append(
            f"{_fmt(r.alpha)},{r.strategy},{r.seed},"
            f"{_fmt(r.final_accuracy)},{_fmt(r.final_loss)}"
        )
    return "\n".join(lines) + "\n"


def summary_csv(summary) -> str:
    lines = ["alpha,strategy,mean_accuracy,std_accuracy,mean_loss,std_loss"]
    for r in summary:
        lines.append(
            f"{_fmt(r.alpha)},{r.strategy},{_fmt(r.mean_accuracy)},"
            f"{_fmt(r.std_accuracy)},{_fmt(r.mean_loss)},{_fmt(r.std_loss)}"
        )
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_raw(args) -> dict[str, str]:
    raw = parse_config_file(args.config) if args.config else {}
    raw.update(parse_overrides(args.set or []))
    return raw


def _comma_list(text: str, convert):
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise ConfigError(f"expected a comma-separated list, got '{text}'")
    return [convert(part) for part in items]


def cmd_run(args) -> int:
    raw = _load_raw(args)
    cfg = resolve_config(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg)
    _write(out / "rounds.csv", rounds_csv(result))
    _write(out / "result.json", result_json(result))
    _write(out / "config.resolved", serialize_config(result.config_echo))
    last = result.records[-1]
    print(
        f"{cfg.strategy.kind}: round {last.round} "
        f"accuracy {last.global_accuracy:.4f} loss {last.global_loss:.4f} -> {out}"
    )
    return 0


def cmd_sweep(args) -> int:
    raw = _load_raw(args)
    alphas = _comma_list(args.alphas, float)
    strategies = _comma_list(args.strategies, str)
    seeds = _comma_list(args.seeds, int)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = sweep(raw, alphas, strategies, seeds)
    _write(out / "sweep.csv", sweep_csv(result.rows))
    _write(out / "summary.csv", summary_csv(result.summary))
    for row in result.summary:
        print(
            f"alpha={row.alpha:g} {row.strategy}: "
            f"accuracy {row.mean_accuracy:.4f} +/- {row.std_accuracy:.4f}"
        )
    return 0


def cmd_partition_report(args) -> int:
    raw = _load_raw(args)
    cfg = resolve_config(raw)
    train, _ = load_dataset(cfg.data, cfg.seed)
    partition = dirichlet_partition(
        train,
        DirichletSpec(cfg.alpha, cfg.clients, derive_seed(cfg.seed, "partition")),
        min_one_sample=cfg.min_one_sample,
    )
    matrix = partition_report(partition, train)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    _write(out, partition_report_csv(matrix))
    print(f"wrote {matrix.shape[0]}x{matrix.shape[1]} class-count matrix -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedpbs",
        description="Deterministic federated-learning simulation runner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file (all keys optional)")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )

    p_run = sub.add_parser("run", help="run one experiment")
    common(p_run)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="alpha x strategy x seed cross-product")
    common(p_sweep)
    p_sweep.add_argument("--alphas", required=True, help="comma-separated alphas")
    p_sweep.add_argument("--strategies", required=True, help="comma-separated strategies")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated seeds")
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("partition-report", help="write the client class-count matrix")
    common(p_rep)
    p_rep.add_argument("--out", required=True, help="output CSV path")
    p_rep.set_defaults(func=cmd_partition_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
