"""
Command-line interface.

Usage::

    spherelib [--config CONFIG] [--out DIR] [--json] [--seed N] [-v | -q] COMMAND ...

Commands are ``train``, ``eval``, ``bounds``, ``psi-table`` and ``export-features``.
Exit codes: 0 on success, 2 for usage, configuration or input errors, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from functools import wraps
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ._version import __version__
from .angular import binary_bound_root, bound_table, psi
from .checkpoint import checkpoint_read, checkpoint_save
from .dataio import LabeledBatch, export_features, split_batch
from .embedder import embed, init_model, train
from .evaluation import evaluate
from .exceptions import (
    CheckpointError,
    ConfigError,
    DimensionError,
    DomainError,
    IdxFormatError,
    NonFiniteError,
)
from .file_manager import RunConfig, load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

CHECKPOINT_FILE = "checkpoint.sphm"
HISTORY_FILE = "loss_history.csv"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.json"
FEATURES_FILE = "features.csv"


def _exit_codes(command: Callable[..., int]) -> Callable[..., int]:
    """
    Maps the exceptions of a command to its exit code.
    """

    @wraps(command)
    def wrapper(*args, **kwargs) -> int:
        try:
            return command(*args, **kwargs)
        except NonFiniteError as error:
            logger.error("%s", error)
            return EXIT_NUMERICAL
        except (
            ConfigError,
            DimensionError,
            DomainError,
            IdxFormatError,
            CheckpointError,
            FileNotFoundError,
        ) as error:
            logger.error("%s", error)
            return EXIT_USAGE

    return wrapper


def _versions() -> dict[str, str]:
    versions = {"spherelib": __version__}
    for package in ("numpy", "scipy", "PyYAML"):
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def _split(config: RunConfig, batch: LabeledBatch) -> tuple[LabeledBatch, LabeledBatch]:
    """
    Training part and held-out part of the run data.
    """
    if config.data.holdout_fraction == 0:
        return batch, batch
    return split_batch(batch, 1 - config.data.holdout_fraction, config.data.split_seed)


def _read_checkpoint(file_path: Path):
    if not file_path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {file_path}")
    return checkpoint_read(file_path.read_bytes())


def _embed_checked(state, batch: LabeledBatch) -> np.ndarray:
    if batch.dim != state.config.input_dim:
        raise DimensionError(
            f"The checkpoint expects inputs of width {state.config.input_dim}, "
            f"the data has width {batch.dim}."
        )
    return embed(state, batch.features)


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def write_loss_history(history: np.ndarray, file_path: Path) -> None:
    """
    Writes ``iteration,loss`` rows, iterations starting at 1.
    """
    with open(file_path, "w", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["iteration", "loss"])
        for iteration, loss in enumerate(history, start=1):
            writer.writerow([iteration, f"{loss:.17g}"])


@_exit_codes
def cmd_train(
    config: str | Path,
    out: Optional[str | Path] = None,
    seed: Optional[int] = None,
    loss_kind: Optional[str] = None,
    margin: Optional[int] = None,
    as_json: bool = False,
) -> int:
    """
    Trains an embedder and writes its checkpoint, loss history and run manifest.

    Parameters
    ----------
    config : str or Path
        Configuration file or preset name.
    out : str or Path, optional
        Output directory, overriding ``output_dir``.
    seed : int, optional
        Overrides the embedder and synthetic data seeds.
    loss_kind : str, optional
        Overrides ``train.loss_kind``.
    margin : int, optional
        Overrides ``train.margin.m``.
    as_json : bool
        Prints the manifest as JSON instead of a summary line.

    Returns
    -------
    int
        Exit code.
    """
    run = load_run_config(
        config, {"seed": seed, "output_dir": out, "loss_kind": loss_kind, "m": margin}
    )
    training_set, _ = _split(run, run.data.load())
    if training_set.dim != run.embedder.input_dim:
        raise DimensionError(
            f"embedder.layer_widths starts with {run.embedder.input_dim} but the data has "
            f"width {training_set.dim}."
        )
    state = init_model(run.embedder, training_set.class_count, run.train.margin)
    state, history = train(state, training_set, run.train)

    output_dir = Path(run.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": run.config_hash(),
        "seed": run.embedder.seed,
        "versions": _versions(),
        "iterations": state.iteration,
        "final_loss": float(history[-1]) if history.size else None,
        "config": run.source,
    }
    (output_dir / CHECKPOINT_FILE).write_bytes(
        checkpoint_save(state, {"config_hash": manifest["config_hash"]})
    )
    write_loss_history(history, output_dir / HISTORY_FILE)
    with open(output_dir / MANIFEST_FILE, "w") as file:
        json.dump(manifest, file, indent=2, sort_keys=True)
    if as_json:
        print(json.dumps(manifest, sort_keys=True))
    else:
        print(f"Trained {state.iteration} iterations, outputs written to {output_dir}")
    return EXIT_OK


@_exit_codes
def cmd_eval(
    config: str | Path,
    checkpoint: Optional[str | Path] = None,
    out: Optional[str | Path] = None,
    seed: Optional[int] = None,
    as_json: bool = False,
) -> int:
    """
    Embeds the held-out data with a checkpoint and writes the evaluation report and
    the embedded features.

    Parameters
    ----------
    config : str or Path
        Configuration file or preset name.
    checkpoint : str or Path, optional
        Checkpoint to evaluate. Defaults to the one in the output directory.
    out : str or Path, optional
        Output directory, overriding ``output_dir``.
    seed : int, optional
        Overrides the embedder and synthetic data seeds.
    as_json : bool
        Prints the report as JSON instead of a summary.

    Returns
    -------
    int
        Exit code.
    """
    run = load_run_config(config, {"seed": seed, "output_dir": out})
    output_dir = Path(run.output_dir)
    state, _ = _read_checkpoint(Path(checkpoint) if checkpoint else output_dir / CHECKPOINT_FILE)
    _, held_out = _split(run, run.data.load())
    features = _embed_checked(state, held_out)
    report = evaluate(features, held_out.labels, run.eval)

    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / REPORT_FILE).write_text(report.to_json())
    export_features(features, held_out.labels, output_dir / FEATURES_FILE)
    if as_json:
        print(report.to_json())
    else:
        print(
            f"AFS {report.afs:.4f}  verification {_fmt(report.verification_accuracy)} "
            f"(threshold {_fmt(report.best_threshold)})  rank-1 {_fmt(report.rank1)}"
        )
    return EXIT_OK


@_exit_codes
def cmd_bounds(
    m_max: int = 10, grid_size: int = 10000, k: int = 10, as_json: bool = False
) -> int:
    """
    Prints whether the margin bounds hold for every integer margin up to ``m_max``,
    followed by the real-valued binary bound.
    """
    if m_max < 2:
        raise ConfigError("--m-max", "must be at least 2")
    if grid_size < 10:
        raise ConfigError("--grid-size", "must be at least 10")
    if k < 3:
        raise ConfigError("--k", "must be at least 3")
    rows = bound_table(m_max, grid_size, k)
    root = binary_bound_root()
    if as_json:
        print(json.dumps({"binary_root": root, "k": k, "rows": rows}, sort_keys=True))
        return EXIT_OK
    print(f"{'m':>3} {'near':>6} {'far':>6} {'binary':>7} {'multi(k=' + str(k) + ')':>12}")
    for row in rows:
        print(
            f"{row['m']:>3} {str(row['near_branch_holds']).lower():>6} "
            f"{str(row['far_branch_holds']).lower():>6} {str(row['all_hold']).lower():>7} "
            f"{str(row['multiclass_holds']).lower():>12}"
        )
    print(f"binary root: {root:.6f}")
    return EXIT_OK


@_exit_codes
def cmd_psi_table(m: int = 4, points: int = 181, as_json: bool = False) -> int:
    """
    Prints ``theta,psi,cos`` rows over a uniform grid of [0, pi].
    """
    if m < 1:
        raise ConfigError("--m", "must be at least 1")
    if points < 2:
        raise ConfigError("--points", "must be at least 2")
    theta = np.linspace(0.0, np.pi, points)
    values = psi(theta, m)
    cosines = np.cos(theta)
    if as_json:
        print(
            json.dumps(
                {"m": m, "theta": theta.tolist(), "psi": values.tolist(), "cos": cosines.tolist()}
            )
        )
        return EXIT_OK
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["theta", "psi", "cos"])
    for row in zip(theta, values, cosines):
        writer.writerow([f"{value:.17g}" for value in row])
    return EXIT_OK


@_exit_codes
def cmd_export_features(
    config: str | Path,
    checkpoint: Optional[str | Path] = None,
    output: Optional[str | Path] = None,
    out: Optional[str | Path] = None,
    seed: Optional[int] = None,
) -> int:
    """
    Writes the run data as a feature CSV, embedded by ``checkpoint`` when one is given.
    """
    run = load_run_config(config, {"seed": seed, "output_dir": out})
    batch = run.data.load()
    features = batch.features
    if checkpoint is not None:
        state, _ = _read_checkpoint(Path(checkpoint))
        features = _embed_checked(state, batch)
    destination = Path(output) if output else Path(run.output_dir) / FEATURES_FILE
    destination.parent.mkdir(parents=True, exist_ok=True)
    export_features(features, batch.labels, destination)
    print(f"{len(batch)} features written to {destination}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spherelib",
        description="Angular-margin embeddings: training, evaluation and margin bounds.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--config", default="plain", help="configuration file or preset name (default: plain)"
    )
    parser.add_argument("--out", help="output directory, overrides output_dir")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--seed", type=int, help="overrides the embedder and data seeds")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", help="train an embedder")
    train_parser.add_argument("--loss-kind", choices=("softmax", "modified", "asoftmax"))
    train_parser.add_argument("--margin", type=int, help="margin multiplier m")

    eval_parser = commands.add_parser("eval", help="evaluate a checkpoint")
    eval_parser.add_argument("--checkpoint", help="defaults to OUT/checkpoint.sphm")

    bounds_parser = commands.add_parser("bounds", help="tabulate the margin bounds")
    bounds_parser.add_argument("--m-max", type=int, default=10)
    bounds_parser.add_argument("--grid-size", type=int, default=10000)
    bounds_parser.add_argument("--k", type=int, default=10, help="classes of the multi-class bound")

    psi_parser = commands.add_parser("psi-table", help="tabulate psi over [0, pi]")
    psi_parser.add_argument("--m", type=int, default=4)
    psi_parser.add_argument("--points", type=int, default=181)

    export_parser = commands.add_parser("export-features", help="write features as CSV")
    export_parser.add_argument("--checkpoint", help="embed the data with this checkpoint")
    export_parser.add_argument("--output", help="defaults to OUT/features.csv")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the ``spherelib`` command.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_OK if error.code == 0 else EXIT_USAGE
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "train":
        return cmd_train(
            args.config, args.out, args.seed, args.loss_kind, args.margin, args.json
        )
    if args.command == "eval":
        return cmd_eval(args.config, args.checkpoint, args.out, args.seed, args.json)
    if args.command == "bounds":
        return cmd_bounds(args.m_max, args.grid_size, args.k, args.json)
    if args.command == "psi-table":
        return cmd_psi_table(args.m, args.points, args.json)
    return cmd_export_features(args.config, args.checkpoint, args.output, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
