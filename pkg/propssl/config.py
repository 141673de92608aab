"""Experiment configuration.

A config file holds ``key = value`` lines below ``[section]`` headers::

    [split]
    gamma = 10
    beta = 0.02

    [sweep]
    lambdas = 0.25, 0.5, 1.0

Values are resolved in this order, later wins: built-in defaults, the
file, ``--set section.key=value`` overrides, the dedicated ``--out`` and
``--seeds`` flags.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .constants import (
    DATA_SOURCES,
    ENCODING,
    LONGTAIL_GRID,
    METHODS,
    PROPORTION_BRANCHES,
    UNLABELED_PROFILES,
)
from .exceptions import ConfigError
from .ltdata import SplitSpec, parse_cell
from .schema import get_jsonschema_validator
from .trainer import TrainConfig
from .utils import format_value, parse_key_values, parse_list

# keys of the dataclasses that come from elsewhere (seeds from the sweep)
_EXCLUDED = {"seed"}
_TYPE_KINDS = {int: "int", float: "float", bool: "bool", str: "str"}


def _dataclass_settings(cls, overrides: dict = None) -> Dict[str, Tuple[str, Any]]:
    result = {}
    for f in dataclasses.fields(cls):
        if f.name in _EXCLUDED:
            continue
        result[f.name] = (_TYPE_KINDS[f.type], f.default)
    result.update(overrides or {})
    return result


# section -> key -> (kind, default)
SETTINGS: Dict[str, Dict[str, Tuple[str, Any]]] = {
    "split": _dataclass_settings(SplitSpec),
    "data": {
        "source": ("str", "synthetic"),
        "path": ("str", ""),
        "label_column": ("str", "label"),
        "feature_columns": ("strs", []),
        "n_features": ("int", 20),
        "separation": ("float", 3.0),
    },
    "train": _dataclass_settings(TrainConfig, {"lambda_prop": ("float", 1.0)}),
    "sweep": {
        "methods": ("strs", ["baseline", "prop_hg"]),
        "lambdas": ("floats", [0.25, 0.5, 1.0]),
        "seeds": ("ints", [1]),
        "cells": ("strs", []),
        "workers": ("int", 1),
    },
    "output": {
        "dir": ("str", "out"),
        "checkpoints": ("bool", True),
    },
    "report": {
        "runs": ("strs", []),
    },
    "sample_hg": {
        "population": ("ints", [2, 2]),
        "n": ("int", 2),
        "draws": ("int", 1000),
        "seed": ("int", 0),
        "max_pmf_rows": ("int", 10000),
    },
}

SCHEMA = {
    "type": "object",
    "properties": {
        "split": {
            "type": "object",
            "properties": {
                "n_classes": {"type": "integer", "minimum": 2},
                "n_max": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "minimum": 1},
                "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "val_per_class": {"type": "integer", "minimum": 0},
                "test_per_class": {"type": "integer", "minimum": 0},
                "unlabeled_profile": {"enum": list(UNLABELED_PROFILES)},
            },
        },
        "data": {
            "type": "object",
            "properties": {
                "source": {"enum": list(DATA_SOURCES)},
                "n_features": {"type": "integer", "minimum": 2},
                "separation": {"type": "number", "minimum": 0},
            },
        },
        "train": {
            "type": "object",
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "iters_per_epoch": {"type": "integer", "minimum": 0},
                "labeled_batch": {"type": "integer", "minimum": 1},
                "mu": {"type": "integer", "minimum": 1},
                "hidden_units": {"type": "integer", "minimum": 1},
                "lr0": {"type": "number", "minimum": 0},
                "momentum": {"type": "number", "minimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "minimum": 0, "maximum": 1},
                "lambda_u": {"type": "number", "minimum": 0},
                "lambda_prop": {"type": "number", "minimum": 0},
                "epsilon": {"type": "number", "minimum": 0},
                "weak_noise_sigma": {"type": "number", "minimum": 0},
                "strong_noise_sigma": {"type": "number", "minimum": 0},
                "strong_dropout_rate": {
                    "type": "number",
                    "minimum": 0,
                    "exclusiveMaximum": 1,
                },
                "proportion_branch": {"enum": list(PROPORTION_BRANCHES)},
            },
        },
        "sweep": {
            "type": "object",
            "properties": {
                "methods": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": list(METHODS)},
                },
                "lambdas": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number", "minimum": 0},
                },
                "seeds": {"type": "array", "minItems": 1},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "sample_hg": {
            "type": "object",
            "properties": {
                "population": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "integer", "minimum": 0},
                },
                "n": {"type": "integer", "minimum": 0},
                "draws": {"type": "integer", "minimum": 0},
                "max_pmf_rows": {"type": "integer", "minimum": 0},
            },
        },
    },
}

_validate = get_jsonschema_validator(SCHEMA)

_BOOLEANS = {
    "true": True,
    "yes": True,
    "on": True,
    "1": True,
    "false": False,
    "no": False,
    "off": False,
    "0": False,
}


def convert_value(kind: str, text: str) -> Any:
    """
    >>> convert_value("floats", "0.25, 0.5"), convert_value("bool", "no")
    ([0.25, 0.5], False)
    """
    text = text.strip()
    if kind == "int":
        return int(text)
    elif kind == "float":
        return float(text)
    elif kind == "bool":
        return _BOOLEANS[text.lower()]
    elif kind == "str":
        return text
    elif kind == "ints":
        return parse_list(text, int)
    elif kind == "floats":
        return parse_list(text, float)
    elif kind == "strs":
        return parse_list(text, str)
    raise NotImplementedError(kind)


def _resolve_key(name: str, location: str) -> Tuple[str, str]:
    """``section.key`` or a bare key that exists in exactly one section."""
    section, sep, key = name.partition(".")
    if sep:
        if section not in SETTINGS:
            raise ConfigError(f"{location}: unknown section {section!r}")
        if key not in SETTINGS[section]:
            raise ConfigError(f"{location}: unknown key {name!r}")
        return section, key
    candidates = [s for s, keys in SETTINGS.items() if name in keys]
    if not candidates:
        raise ConfigError(f"{location}: unknown key {name!r}")
    if len(candidates) > 1:
        options = ", ".join(f"{s}.{name}" for s in candidates)
        raise ConfigError(f"{location}: ambiguous key {name!r}, use one of {options}")
    return candidates[0], name


class ConfigValues:
    """Nested ``section -> key -> value`` with the origin of every value."""

    def __init__(self) -> None:
        self.values = {
            section: {key: default for key, (_kind, default) in keys.items()}
            for section, keys in SETTINGS.items()
        }
        self.locations = {
            (section, key): "default"
            for section, keys in SETTINGS.items()
            for key in keys
        }

    def set(self, section: str, key: str, text: str, location: str) -> None:
        kind = SETTINGS[section][key][0]
        try:
            value = convert_value(kind, text)
        except (ValueError, KeyError):
            raise ConfigError(
                f"{location}: {section}.{key}: expected {kind}, got {text!r}"
            )
        self.values[section][key] = value
        self.locations[(section, key)] = location

    def location(self, section: str, key: str) -> str:
        return self.locations[(section, key)]

    def read_file(self, path: str) -> None:
        if not os.path.isfile(path):
            raise ConfigError(f"{path}: config file not found")
        with open(path, encoding=ENCODING) as file:
            lines = file.read().splitlines()
        section = None
        for lineno, line in enumerate(lines, start=1):
            location = f"{path}:{lineno}"
            line = line.strip()
            if not line or line[0] in "#;":
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SETTINGS:
                    raise ConfigError(f"{location}: unknown section [{section}]")
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{location}: expected key = value, got {line!r}")
            key = key.strip()
            if section is None:
                raise ConfigError(f"{location}: key {key!r} outside of a section")
            if key not in SETTINGS[section]:
                raise ConfigError(f"{location}: unknown key {section}.{key}")
            self.set(section, key, value, location)
        logging.debug("Read config %s", path)

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        for name, value in parse_key_values(overrides).items():
            section, key = _resolve_key(name, "--set")
            self.set(section, key, value, f"--set {name}")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    path: str = ""
    label_column: str = "label"
    feature_columns: Tuple[str, ...] = ()
    n_features: int = 20
    separation: float = 3.0

    def source_options(self) -> dict:
        if self.source == "synthetic":
            return {"n_features": self.n_features, "separation": self.separation}
        elif self.source == "csv":
            return {
                "path": self.path,
                "label_column": self.label_column,
                "feature_columns": tuple(self.feature_columns),
            }
        return {"path": self.path}


@dataclass(frozen=True)
class SweepConfig:
    methods: Tuple[str, ...] = ("baseline", "prop_hg")
    lambdas: Tuple[float, ...] = (0.25, 0.5, 1.0)
    seeds: Tuple[int, ...] = (1,)
    cells: Tuple[str, ...] = ()
    workers: int = 1


@dataclass(frozen=True)
class SampleHgConfig:
    population: Tuple[int, ...] = (2, 2)
    n: int = 2
    draws: int = 1000
    seed: int = 0
    max_pmf_rows: int = 10000


def cell_name(spec: SplitSpec) -> str:
    """
    >>> cell_name(SplitSpec(gamma=10, beta=0.02, n_max=90))
    'gamma10_beta0.02_n90'
    """
    return f"gamma{spec.gamma:g}_beta{spec.beta:g}_n{spec.n_max}"


@dataclass(frozen=True)
class ExperimentConfig:
    split: SplitSpec
    train: TrainConfig
    data: DataConfig
    sweep: SweepConfig
    sample_hg: SampleHgConfig
    output_dir: str
    checkpoints: bool = True
    report_runs: Tuple[str, ...] = ()
    values: Optional[dict] = None

    def cells(self) -> List[Tuple[str, SplitSpec]]:
        """(name, SplitSpec) for each benchmark cell, the split section if none.

        The entry ``grid`` stands for all published cells.
        """
        specs = []
        for cell in self.sweep.cells:
            if cell == "grid":
                specs += [
                    parse_cell(f"{gamma:g}:{beta:g}:{n_max}", self.split)
                    for gamma, beta, n_max in LONGTAIL_GRID
                ]
            else:
                specs.append(parse_cell(cell, self.split))
        specs = specs or [self.split]
        names = [cell_name(s) for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate cells: {list(self.sweep.cells)}")
        return list(zip(names, specs))

    def dumps(self) -> str:
        """Sectioned key=value text of every resolved value."""
        lines = []
        for section, keys in (self.values or {}).items():
            if lines:
                lines.append("")
            lines.append(f"[{section}]")
            for key, value in keys.items():
                lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"


def _check_paths(cv: ConfigValues) -> None:
    data = cv.values["data"]
    if data["source"] == "synthetic":
        return
    path = data["path"]
    if not path:
        raise ConfigError(
            f"missing required key data.path (data.source = {data['source']})"
        )
    location = cv.location("data", "path")
    if data["source"] == "csv" and not os.path.isfile(path):
        raise ConfigError(f"{location}: data.path: file not found: {path}")
    if data["source"] == "split" and not os.path.isdir(path):
        raise ConfigError(f"{location}: data.path: directory not found: {path}")


def _tuples(section: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}


def build_config(cv: ConfigValues) -> ExperimentConfig:
    values = cv.values
    _validate(values)
    _check_paths(cv)
    try:
        split = SplitSpec(**values["split"]).validate()
        train = TrainConfig(**values["train"]).validate()
    except ConfigError as exc:
        raise ConfigError(f"invalid configuration: {exc}")
    data = DataConfig(**_tuples(values["data"]))
    sweep = SweepConfig(**_tuples(values["sweep"]))
    sample_hg = SampleHgConfig(**_tuples(values["sample_hg"]))
    config = ExperimentConfig(
        split=split,
        train=train,
        data=data,
        sweep=sweep,
        sample_hg=sample_hg,
        output_dir=values["output"]["dir"],
        checkpoints=values["output"]["checkpoints"],
        report_runs=tuple(values["report"]["runs"]),
        values=values,
    )
    config.cells()
    lambdas = list(config.sweep.lambdas)
    if len(set(lambdas)) != len(lambdas):
        raise ConfigError(f"sweep.lambdas: duplicate values in {lambdas}")
    return config


def parse_config(
    path: Optional[str] = None,
    overrides: Iterable[str] = (),
    out: Optional[str] = None,
    seeds: Optional[str] = None,
) -> ExperimentConfig:
    """Resolve defaults, the config file at ``path``, overrides and flags."""
    cv = ConfigValues()
    if path:
        cv.read_file(path)
    cv.apply_overrides(overrides)
    if out is not None:
        cv.set("output", "dir", out, "--out")
    if seeds is not None:
        cv.set("sweep", "seeds", seeds, "--seeds")
    return build_config(cv)


def with_values(config: ExperimentConfig, **sections: dict) -> ExperimentConfig:
    """Copy of ``config`` with some values replaced, e.g. ``train={"epochs": 0}``."""
    cv = ConfigValues()
    for section, keys in config.values.items():
        cv.values[section].update(keys)
    for section, keys in sections.items():
        for key, value in keys.items():
            if key not in SETTINGS.get(section, {}):
                raise ConfigError(f"unknown key {section}.{key}")
            cv.values[section][key] = value
    return build_config(cv)
