"""
Run configuration files and named presets.

A run configuration is a YAML (or JSON) mapping with the sections ``data``,
``embedder``, ``train``, ``eval`` and ``output_dir``. Keys missing from a user file are
filled from the packaged ``plain`` preset.
"""

from __future__ import annotations

import hashlib
import json
import logging
from copy import deepcopy
from dataclasses import dataclass, field
from os import listdir, path
from pathlib import Path
from typing import Any, Optional

import yaml
from platformdirs import user_config_dir

from .angular import MarginConfig
from .dataio import LabeledBatch, SyntheticSpec, load_idx, synth_blobs
from .embedder import EmbedderConfig, TrainConfig
from .evaluation import EvalOptions
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

PRESET_SUFFIXES = (".yml", ".yaml", ".json")
DATA_SOURCES = ("synthetic", "idx")
SECTIONS = ("data", "embedder", "train", "eval", "output_dir")


class FileLoader:
    """
    This class implements the loader of named presets. User presets in the
    ``presets`` folder of the user configuration directory take precedence over the
    packaged ones. The user directory is only read.
    """

    def __init__(self, file_name: str) -> None:
        self._config_dir = user_config_dir(appname="spherelib", roaming=True)
        self._file_name = file_name
        self._file_location_defaults = (
            f"{path.dirname(__file__)}/default_configs/{self._file_name}.yml"
        )
        self._file_location_customs = f"{self._config_dir}/presets/{self._file_name}.yml"

    def load(self) -> dict:
        for location in (self._file_location_customs, self._file_location_defaults):
            if path.isfile(location):
                return read_config_file(location)
        raise FileNotFoundError(f"Could not find the preset {self._file_name}.yml.")


def _key_lines(node: Optional[yaml.Node], prefix: str = "") -> dict[str, int]:
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            name = f"{prefix}{key_node.value}"
            lines[name] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, f"{name}."))
    return lines


def read_config_file(file_path: str | Path) -> dict:
    """
    Reads a YAML or JSON configuration file.

    Parameters
    ----------
    file_path : str or Path
        File to read.

    Returns
    -------
    dict
        The configuration. The line of every key is stored under ``"__lines__"``
        (dotted key -> 1-based line).
    """
    with open(file_path, "r") as file:
        text = file.read()
    try:
        info = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text))
    except yaml.YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        raise ConfigError(
            str(file_path),
            getattr(error, "problem", None) or "not valid YAML",
            line=mark.line + 1 if mark is not None else None,
        ) from error
    if not isinstance(info, dict):
        raise ConfigError(
            str(file_path), "the configuration must be a mapping of sections"
        )
    info["__lines__"] = lines
    return info


def fill_missing(user_info: dict, plain_info: dict) -> dict:
    """
    Returns a copy of ``user_info`` where every key and subkey of ``plain_info`` that
    the user did not set takes the plain value. The data sources are alternatives: the
    plain source is only used when the user names neither ``synthetic`` nor ``idx``.
    """
    merged = deepcopy(user_info)
    for key, value in plain_info.items():
        if key == "__lines__":
            continue
        if key not in merged:
            merged[key] = deepcopy(value)
        elif isinstance(value, dict) and isinstance(merged[key], dict):
            user_section = merged[key]
            if key == "data" and any(source in user_section for source in DATA_SOURCES):
                value = {k: v for k, v in value.items() if k not in DATA_SOURCES}
            merged[key] = fill_missing(user_section, value)
    return merged


def get_presets(customs: bool = True, packaged: bool = True) -> list[str]:
    """
    Returns the names of the available presets.

    Parameters
    ----------
    customs : bool
        Whether to include the user presets.
        Default is True.
    packaged : bool
        Whether to include the presets shipped with spherelib.
        Default is True.

    Returns
    -------
    list[str]
        Sorted preset names, without duplicates.
    """
    names = set()
    folders = []
    if customs:
        folders.append(f"{user_config_dir(appname='spherelib', roaming=True)}/presets")
    if packaged:
        folders.append(f"{path.dirname(__file__)}/default_configs")
    for folder in folders:
        if path.isdir(folder):
            names.update(
                path.splitext(file)[0]
                for file in listdir(folder)
                if path.splitext(file)[1] in PRESET_SUFFIXES
            )
    return sorted(names)


@dataclass(frozen=True)
class DataConfig:
    """
    Data source of a run and the seeded train/held-out split.

    Parameters
    ----------
    synthetic : :class:`~spherelib.dataio.SyntheticSpec`, optional
        Synthetic hypersphere blobs.
    idx_images, idx_labels : str, optional
        IDX image and label files.
    holdout_fraction : float
        Share of every class kept out of training and used by ``eval``. 0 trains and
        evaluates on the whole dataset.
    split_seed : int
        Seed of the split.
    """

    synthetic: Optional[SyntheticSpec] = None
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None
    holdout_fraction: float = 0.0
    split_seed: int = 0

    def __post_init__(self) -> None:
        has_idx = self.idx_images is not None or self.idx_labels is not None
        if (self.synthetic is None) == (not has_idx):
            raise ConfigError("data", "exactly one of 'synthetic' or 'idx' must be given")
        if has_idx and (self.idx_images is None or self.idx_labels is None):
            raise ConfigError("data.idx", "both 'images' and 'labels' are required")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("data.holdout_fraction", "must lie in [0, 1)")

    def load(self) -> LabeledBatch:
        if self.synthetic is not None:
            return synth_blobs(self.synthetic)
        for file_path in (self.idx_images, self.idx_labels):
            if not path.isfile(file_path):
                raise FileNotFoundError(f"Data file not found: {file_path}")
        return load_idx(self.idx_images, self.idx_labels)


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a command needs to reproduce a run.
    """

    data: DataConfig
    embedder: EmbedderConfig
    train: TrainConfig
    eval: EvalOptions
    output_dir: str
    source: dict = field(default_factory=dict, compare=False)

    def config_hash(self) -> str:
        """
        SHA-256 of the canonical JSON form of the merged configuration. The output
        directory is left out so that a run moved elsewhere keeps its hash.
        """
        settings = {k: v for k, v in self.source.items() if k != "output_dir"}
        encoded = json.dumps(settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(encoded.encode("utf-8")).hexdigest()


def _section(info: dict, name: str) -> dict:
    section = info.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(name, "must be a mapping")
    return section


def _embedder_section(info: dict, loss_kind: str) -> dict:
    embedder = dict(_section(info, "embedder"))
    # an unset classifier follows the loss: the softmax baseline keeps biases
    if embedder.get("classifier") is None:
        embedder["classifier"] = "affine" if loss_kind == "softmax" else "angular"
    elif loss_kind != "softmax" and embedder["classifier"] != "angular":
        raise ConfigError(
            "embedder.classifier", f"the {loss_kind!r} loss needs the angular classifier"
        )
    return embedder


def _build(info: dict) -> RunConfig:
    unknown = set(info) - set(SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown section, expected one of {SECTIONS}")
    data = _section(info, "data")
    unknown = set(data) - {"synthetic", "idx", "holdout_fraction", "split_seed"}
    if unknown:
        raise ConfigError(f"data.{sorted(unknown)[0]}", "unknown key")
    idx = data.get("idx") or {}
    synthetic = data.get("synthetic")
    try:
        train = dict(_section(info, "train"))
        margin = MarginConfig(**(train.pop("margin", None) or {}))
        embedder = _embedder_section(info, train.get("loss_kind", "asoftmax"))
        return RunConfig(
            data=DataConfig(
                synthetic=SyntheticSpec(**synthetic) if synthetic is not None else None,
                idx_images=idx.get("images"),
                idx_labels=idx.get("labels"),
                holdout_fraction=float(data.get("holdout_fraction", 0.0)),
                split_seed=int(data.get("split_seed", 0)),
            ),
            embedder=EmbedderConfig(**embedder),
            train=TrainConfig(margin=margin, **train),
            eval=EvalOptions(**_section(info, "eval")),
            output_dir=str(info.get("output_dir", ".")),
            source=info,
        )
    except TypeError as error:
        # dataclass constructors reject unknown keys with a TypeError
        raise ConfigError("config", str(error)) from error


def _with_line(error: ConfigError, lines: dict[str, int]) -> ConfigError:
    if error.line is not None:
        return error
    candidates = [error.field]
    if error.field.startswith("synthetic."):
        candidates.insert(0, f"data.{error.field}")
    if error.field.startswith("margin."):
        candidates.insert(0, f"train.{error.field}")
    for candidate in candidates:
        if candidate in lines:
            return ConfigError(error.field, error.message, line=lines[candidate])
    return error


def build_run_config(info: dict, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """
    Validates a configuration mapping and applies command-line overrides.

    Parameters
    ----------
    info : dict
        Configuration, as returned by :func:`read_config_file`.
    overrides : dict, optional
        ``seed`` (embedder and synthetic data seeds), ``output_dir``, ``loss_kind`` and
        ``m``. ``None`` values are ignored.

    Returns
    -------
    :class:`RunConfig`

    Raises
    ------
    :class:`~spherelib.exceptions.ConfigError`
        With the offending field and, when known, its line in the file.
    """
    lines = info.get("__lines__", {})
    plain = FileLoader("plain").load()
    merged = fill_missing({k: v for k, v in info.items() if k != "__lines__"}, plain)
    merged.pop("__lines__", None)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "seed" in overrides:
        merged["embedder"]["seed"] = overrides["seed"]
        if isinstance(merged["data"].get("synthetic"), dict):
            merged["data"]["synthetic"]["seed"] = overrides["seed"]
    if "output_dir" in overrides:
        merged["output_dir"] = str(overrides["output_dir"])
    if "loss_kind" in overrides:
        merged["train"]["loss_kind"] = overrides["loss_kind"]
    if "m" in overrides:
        merged["train"].setdefault("margin", {})["m"] = overrides["m"]
    try:
        return _build(merged)
    except ConfigError as error:
        raise _with_line(error, lines) from error


def load_run_config(source: str | Path, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """
    Loads a run configuration from a file path or a preset name.

    Parameters
    ----------
    source : str or Path
        Path of a YAML/JSON file, or the name of a preset (see :func:`get_presets`).
    overrides : dict, optional
        See :func:`build_run_config`.

    Returns
    -------
    :class:`RunConfig`
    """
    if path.isfile(source):
        info = read_config_file(source)
    elif Path(source).suffix in PRESET_SUFFIXES or path.sep in str(source):
        raise FileNotFoundError(f"Configuration file not found: {source}")
    else:
        info = FileLoader(str(source)).load()
    logger.debug("Loaded configuration from %s", source)
    return build_run_config(info, overrides)
