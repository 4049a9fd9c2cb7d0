"""Declarative experiment configuration loaded from JSON.

Unknown keys are rejected at every nesting level. Dotted ``key=value``
overrides are applied to the raw document before validation, so they are
checked exactly like keys written in the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .archnet import BranchSpec
from .evalbench import METHODS, Protocol
from .exceptions import ConfigurationError, SchemaError
from .taskgen import DEFAULT_FRACTIONS, CsvSchema, TaskFamily, check_fractions
from .trainer import TrainConfig

CONFIG_MODES = ("single", "aux_head", "aux_g_stage", "aux_g_layer", "aux_nas", "symmetric")
SEED_ENV = "AUXNAS_SEED"


@dataclass
class DataConfig:
    family: dict | None = None
    n_samples: int = 4000
    split_fractions: list[float] = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    csv: str | None = None
    schema: dict | None = None


@dataclass
class ProtocolConfig:
    methods: list[str] = field(default_factory=lambda: ["single", "aux_g_layer", "aux_nas"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    match_w_steps: bool = True


@dataclass
class ExperimentConfig:
    mode: str
    primary: BranchSpec
    auxiliaries: list[BranchSpec]
    data: DataConfig
    train: TrainConfig
    window: int = 3
    stage_size: int = 2
    seed: int = 0
    output_dir: str = "out"
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    @property
    def K(self) -> int:
        return len(self.auxiliaries)

    def task_family(self) -> TaskFamily:
        return TaskFamily(**self.data.family)

    def csv_schema(self) -> CsvSchema:
        return CsvSchema.from_dict(self.data.schema)

    def to_protocol(self) -> Protocol:
        return Protocol(
            methods=tuple(self.protocol.methods), seeds=tuple(self.protocol.seeds),
            family=self.data.family, n_samples=self.data.n_samples,
            split_fractions=tuple(self.data.split_fractions),
            csv_path=self.data.csv, csv_schema=self.data.schema,
            primary=self.primary, auxiliaries=list(self.auxiliaries),
            window=self.window, stage_size=self.stage_size, train=self.train,
            match_w_steps=self.protocol.match_w_steps)


def _strict(cls, doc: Any, path: str, exclude: tuple[str, ...] = (),
            extra: tuple[str, ...] = ()) -> dict:
    """Check ``doc`` is an object whose keys are fields of ``cls``."""
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path or 'config'}: expected an object")
    allowed = ({f.name for f in fields(cls)} | set(extra)) - set(exclude)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigurationError(f"unknown config key {where}{unknown[0]}")
    return doc


def _build(cls, doc: dict, path: str):
    try:
        return cls(**doc)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def _branch(doc: Any, path: str) -> BranchSpec:
    doc = _strict(BranchSpec, doc, path)
    if "layer_widths" not in doc:
        raise ConfigurationError(f"{path}.layer_widths is required")
    return _build(BranchSpec, doc, path)


def _base_dir(base: Path | None, p: str) -> str:
    if base is None or os.path.isabs(p):
        return p
    return str(base / p)


def from_dict(doc: dict, base: Path | None = None) -> ExperimentConfig:
    """Validate a raw config document; relative file paths resolve against ``base``."""
    _strict(ExperimentConfig, doc, "", extra=("K",))
    for key in ("mode", "primary", "data"):
        if key not in doc:
            raise ConfigurationError(f"missing required config key {key}")
    mode = doc["mode"]
    if mode not in CONFIG_MODES:
        raise ConfigurationError(f"mode: must be one of {', '.join(CONFIG_MODES)}, got {mode!r}")
    primary = _branch(doc["primary"], "primary")
    auxes_doc = doc.get("auxiliaries", [])
    if not isinstance(auxes_doc, list):
        raise ConfigurationError("auxiliaries: expected a list")
    auxiliaries = [_branch(a, f"auxiliaries[{k}]") for k, a in enumerate(auxes_doc)]
    if mode != "single" and not auxiliaries:
        raise ConfigurationError(f"auxiliaries: mode {mode} needs at least one auxiliary branch")
    if "K" in doc and doc["K"] != len(auxiliaries):
        raise ConfigurationError(f"K: is {doc['K']!r} but {len(auxiliaries)} auxiliaries are configured")

    data_doc = _strict(DataConfig, doc["data"], "data")
    data = _build(DataConfig, data_doc, "data")
    try:
        check_fractions(data.split_fractions)
    except (ConfigurationError, TypeError) as exc:
        raise ConfigurationError(f"data.split_fractions: {exc}") from None
    if (data.family is None) == (data.csv is None):
        raise ConfigurationError("data: give exactly one of data.family or data.csv")
    if data.family is not None:
        _strict(TaskFamily, data.family, "data.family")
        family = _build(TaskFamily, data.family, "data.family")
        if family.n_aux != len(auxiliaries) and mode != "single":
            raise ConfigurationError(
                f"data.family.n_aux is {family.n_aux} but {len(auxiliaries)} auxiliaries are configured")
    else:
        data.csv = _base_dir(base, data.csv)
        if not os.path.isfile(data.csv):
            raise ConfigurationError(f"data.csv: file not found: {data.csv}")
        if data.schema is None:
            raise ConfigurationError("data.schema is required with data.csv")
        _strict(CsvSchema, data.schema, "data.schema")
        schema = CsvSchema.from_dict(data.schema)
        if len(schema.labels) != 1 + len(auxiliaries) and mode != "single":
            raise ConfigurationError("data.schema: need one label group per task")

    train_doc = dict(_strict(TrainConfig, doc.get("train", {}), "train", exclude=("seed",)))
    if "adam_betas" in train_doc:
        train_doc["adam_betas"] = tuple(train_doc["adam_betas"])
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError(f"seed: expected a non-negative integer, got {seed!r}")
    train = _build(TrainConfig, {**train_doc, "seed": seed}, "train")

    proto = _build(ProtocolConfig, _strict(ProtocolConfig, doc.get("protocol", {}), "protocol"),
                   "protocol")
    unknown = [m for m in proto.methods if m not in METHODS]
    if unknown:
        raise ConfigurationError(f"protocol.methods: unknown method {unknown[0]}")

    window, stage_size = doc.get("window", 3), doc.get("stage_size", 2)
    for name, value in (("window", window), ("stage_size", stage_size)):
        if not isinstance(value, int) or value < 1:
            raise ConfigurationError(f"{name}: expected a positive integer, got {value!r}")
    return ExperimentConfig(mode, primary, auxiliaries, data, train, window, stage_size, seed,
                            doc.get("output_dir", "out"), proto)


def parse_value(text: str) -> Any:
    """JSON scalar or literal string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` assignments; list entries are addressed by index."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node = doc
        for part in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError):
                    raise ConfigurationError(f"override {key}: no list entry {part}") from None
            else:
                node = node.setdefault(part, {})
            if not isinstance(node, (dict, list)):
                raise ConfigurationError(f"override {key}: {part} is not an object")
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = parse_value(raw)
            except (ValueError, IndexError):
                raise ConfigurationError(f"override {key}: no list entry {last}") from None
        else:
            node[last] = parse_value(raw)
    return doc


def load(path, overrides: list[str] | None = None, env: dict | None = None) -> ExperimentConfig:
    """Read, override and validate a config file.

    ``AUXNAS_SEED`` in ``env`` (default ``os.environ``) replaces the seed.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    doc = apply_overrides(doc, overrides or [])
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            doc["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer") from None
    return from_dict(doc, path.parent)
