"""This module contains the experiment configuration: its JSON blocks, loading
with dotted overrides, validation against the filesystem and the profile
registry, and the JSON schema generated from the dataclasses.
"""

import copy
import dataclasses
import json
import logging
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from .classifier import TrainConfig
from .common import ConfigError, CrossOffenseError, EncoderError, default_output_root, read_json
from .corpus import DatasetProfile, get_profile
from .encoder import DEFAULT_MAX_LEN, MiniEncoderConfig
from .evaluation import REFERENCE_ROWS, ReferenceRow, canonical_language
from .transfer import TransferStrategy, check_full_transfer, read_checkpoint_header

logger = logging.getLogger(__name__)


def _from_dict(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"invalid {where}: {e}") from None


@dataclass
class DataSource:
    """A dataset file and the profile it is read with."""

    path: str
    profile: str

    @property
    def dataset_profile(self) -> DatasetProfile:
        return get_profile(self.profile)


@dataclass
class DataConfig:
    """Training data, optional test data, and text normalization."""

    train: DataSource
    test: Optional[DataSource] = None
    lowercase: bool = False

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "DataConfig":
        d = dict(d) if isinstance(d, dict) else d
        if isinstance(d, dict):
            if "train" not in d:
                raise ConfigError("data.train is required")
            d["train"] = _from_dict(DataSource, d["train"], "data.train")
            if d.get("test") is not None:
                d["test"] = _from_dict(DataSource, d["test"], "data.test")
        return _from_dict(cls, d, "data")


@dataclass
class HeadConfig:
    """Classification head options."""

    bias: bool = True


@dataclass
class TransferConfig:
    """Source checkpoint and transfer strategy.

    Attributes:
        checkpoint (str): The source checkpoint path.
        strategy (str): "full" or "encoder_only". Defaults to "full".
        class_map (Dict[str, str], optional): Source class name to target class
            name, for the full strategy.
    """

    checkpoint: str
    strategy: str = TransferStrategy.FULL.value
    class_map: Optional[Dict[str, str]] = None


@dataclass
class EvaluationConfig:
    """Evaluation and reporting options.

    Attributes:
        language (str): The language section of comparison tables; selects the
            sort key and the reference rows. Defaults to the training profile's
            language.
        references (bool): Add the published reference rows. Defaults to True.
        normalize_heatmap (bool): Row-normalize the heat map. Defaults to False.
        batch_size (int): Texts per forward pass. Defaults to 32.
    """

    language: str = ""
    references: bool = True
    normalize_heatmap: bool = False
    batch_size: int = 32


@dataclass
class ExperimentConfig:
    """A complete experiment: data, encoder, head, training, transfer, evaluation.

    The ``train.seed`` defaults to ``seed`` when absent.
    """

    name: str
    data: DataConfig
    seed: int = 0
    output_dir: Optional[str] = None
    encoder: Dict[str, Any] = field(default_factory=lambda: {"kind": "mini"})
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    transfer: Optional[TransferConfig] = None
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ExperimentConfig":
        """Builds a config from its JSON form.

        Raises:
            ConfigError: On unknown keys, missing required keys or invalid values.
        """
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        d = copy.deepcopy(d)
        for key in ("name", "data"):
            if key not in d:
                raise ConfigError(f"{key} is required")
        seed = d.get("seed", 0)
        d["data"] = DataConfig.from_dict(d["data"])
        d["head"] = _from_dict(HeadConfig, d.get("head") or {}, "head")
        train = dict(d.get("train") or {})
        train.setdefault("seed", seed)
        try:
            d["train"] = TrainConfig.from_dict(train)
        except TypeError as e:
            raise ConfigError(f"invalid train: {e}") from None
        if d.get("transfer") is not None:
            d["transfer"] = _from_dict(TransferConfig, d["transfer"], "transfer")
        d["evaluation"] = _from_dict(EvaluationConfig, d.get("evaluation") or {}, "evaluation")
        if "encoder" in d and not isinstance(d["encoder"], dict):
            raise ConfigError("encoder must be an object")
        return _from_dict(cls, d, "experiment config")

    def to_dict(self) -> Dict[str, Any]:
        """The resolved config, as written to a run directory."""
        return dataclasses.asdict(self)

    @property
    def run_dir(self) -> str:
        """The run directory: ``output_dir``, or ``<output root>/<name>``."""
        return self.output_dir or os.path.join(default_output_root(), self.name)

    @property
    def train_profile(self) -> DatasetProfile:
        return self.data.train.dataset_profile

    @property
    def language(self) -> str:
        return canonical_language(self.evaluation.language or self.train_profile.language)

    @property
    def reference_rows(self) -> List[ReferenceRow]:
        if not self.evaluation.references:
            return []
        return list(REFERENCE_ROWS.get(self.language, []))

    def encoder_config(self) -> Dict[str, Any]:
        """The encoder block with defaults filled in."""
        enc = dict(self.encoder)
        kind = enc.setdefault("kind", "mini")
        if kind == "mini":
            return MiniEncoderConfig.from_dict(enc).validate().to_dict()
        if kind == "pretrained":
            unknown = set(enc) - {"kind", "model_name", "max_len"}
            if unknown:
                raise ConfigError(f"unknown keys in encoder: {sorted(unknown)}")
            if not enc.get("model_name"):
                raise ConfigError("encoder.model_name is required for pretrained encoders")
            enc.setdefault("max_len", DEFAULT_MAX_LEN)
            return enc
        raise ConfigError(f"unknown encoder kind {kind!r}; use 'mini' or 'pretrained'")

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        """Checks the config against the profile registry and the filesystem.

        With the full transfer strategy, the source checkpoint header must hold
        a head whose class count equals the training profile's. All of this
        runs before any training starts.

        Args:
            check_paths (bool, optional): Require referenced files to exist.
                Defaults to True.

        Raises:
            ConfigError: On invalid values, unknown profiles or missing files.
            CheckpointError: If the source checkpoint does not fit the strategy.
        """
        if not self.name:
            raise ConfigError("name must be non-empty")
        try:
            self.encoder_config()
        except EncoderError as e:
            raise ConfigError(f"invalid encoder: {e}") from None
        self.train.validate()
        if self.evaluation.batch_size < 1:
            raise ConfigError("evaluation.batch_size must be >= 1")

        sources = [("data.train", self.data.train)]
        if self.data.test is not None:
            sources.append(("data.test", self.data.test))
        profiles = {}
        for where, source in sources:
            try:
                profiles[where] = source.dataset_profile
            except CrossOffenseError as e:
                raise ConfigError(f"{where}.profile: {e}") from None
            if check_paths and not os.path.isfile(source.path):
                raise ConfigError(f"{where}.path does not exist: {source.path}")
        train_scheme = profiles["data.train"].scheme
        if "data.test" in profiles and profiles["data.test"].scheme != train_scheme:
            raise ConfigError(
                f"test profile {self.data.test.profile!r} uses scheme "
                f"{profiles['data.test'].scheme.name!r}, training uses {train_scheme.name!r}"
            )

        if self.transfer is not None:
            try:
                strategy = TransferStrategy(self.transfer.strategy)
            except ValueError:
                raise ConfigError(
                    f"transfer.strategy must be one of {[s.value for s in TransferStrategy]}, "
                    f"got {self.transfer.strategy!r}"
                ) from None
            if check_paths and not os.path.isfile(self.transfer.checkpoint):
                raise ConfigError(f"transfer.checkpoint does not exist: {self.transfer.checkpoint}")
            if self.transfer.class_map and strategy is not TransferStrategy.FULL:
                raise ConfigError("transfer.class_map applies to the full strategy only")
            if check_paths and strategy is TransferStrategy.FULL:
                header = read_checkpoint_header(self.transfer.checkpoint)
                check_full_transfer(header, train_scheme, self.transfer.checkpoint)
                if self.transfer.class_map:
                    source = set(header["scheme"]["classes"])
                    if set(self.transfer.class_map) != source or set(
                        self.transfer.class_map.values()
                    ) != set(train_scheme.classes):
                        raise ConfigError(
                            f"transfer.class_map must map {sorted(source)} onto "
                            f"{list(train_scheme.classes)}"
                        )
        return self


def parse_override(item: str):
    """Splits ``a.b.c=value`` into a key path and a value.

    The value is parsed as JSON when it parses, else taken as a string.
    """
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key.path=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(d: Dict[str, Any], overrides: Sequence[str] = ()) -> Dict[str, Any]:
    """Returns a copy of a config dictionary with dotted overrides applied.

    Args:
        d (dict): The config dictionary.
        overrides (Sequence[str], optional): Items such as ``train.epochs=5``.
            Defaults to ().

    Raises:
        ConfigError: If an override is malformed or descends into a non-object.

    Returns:
        dict: The updated copy.
    """
    d = copy.deepcopy(d)
    for item in overrides:
        path, value = parse_override(item)
        node = d
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {item!r}: {part!r} is not an object")
            node = child
        node[path[-1]] = value
    return d


def load_config(
    filepath: str, overrides: Sequence[str] = (), validate: bool = True
) -> ExperimentConfig:
    """Reads an experiment config file.

    Args:
        filepath (str): The JSON config path.
        overrides (Sequence[str], optional): Dotted overrides. Defaults to ().
        validate (bool, optional): Run ``ExperimentConfig.validate``. Defaults to True.

    Raises:
        ConfigError: If the file is missing, not JSON, or invalid.
        CheckpointError: If a full-transfer source checkpoint does not fit.

    Returns:
        ExperimentConfig: The config.
    """
    if not os.path.isfile(filepath):
        raise ConfigError(f"config file not found: {filepath}")
    try:
        raw = read_json(filepath)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{filepath} is not valid JSON: {e}") from None
    cfg = ExperimentConfig.from_dict(apply_overrides(raw, overrides))
    if validate:
        cfg.validate()
    logger.debug("loaded config %s from %s", cfg.name, filepath)
    return cfg


_JSON_TYPES = {str: "string", int: "integer", float: "number", bool: "boolean"}


def _type_schema(tp) -> Dict[str, Any]:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        options = [_type_schema(a) for a in args if a is not type(None)]
        schema = options[0] if len(options) == 1 else {"anyOf": options}
        return {"anyOf": [schema, {"type": "null"}]}
    if origin in (dict, Dict):
        value = args[1] if len(args) == 2 else Any
        return {"type": "object", "additionalProperties": _type_schema(value) if value is not Any else {}}
    if origin in (list, List, tuple):
        return {"type": "array"}
    if dataclasses.is_dataclass(tp):
        return _dataclass_schema(tp)
    if tp in _JSON_TYPES:
        return {"type": _JSON_TYPES[tp]}
    return {}


def _dataclass_schema(cls) -> Dict[str, Any]:
    hints = typing.get_type_hints(cls)
    properties, required = {}, []
    for f in dataclasses.fields(cls):
        properties[f.name] = _type_schema(hints[f.name])
        if f.default is not dataclasses.MISSING:
            properties[f.name]["default"] = f.default
        elif f.default_factory is dataclasses.MISSING:
            required.append(f.name)
    schema = {"type": "object", "properties": properties, "additionalProperties": False}
    if required:
        schema["required"] = required
    if cls.__doc__:
        schema["description"] = cls.__doc__.strip().splitlines()[0]
    return schema


def config_schema() -> Dict[str, Any]:
    """Generates the JSON schema of experiment configs from the dataclasses.

    Returns:
        dict: A JSON schema (draft 2020-12).
    """
    schema = _dataclass_schema(ExperimentConfig)
    mini = _dataclass_schema(MiniEncoderConfig)
    mini["properties"]["kind"] = {"const": "mini"}
    pretrained = {
        "type": "object",
        "properties": {
            "kind": {"const": "pretrained"},
            "model_name": {"type": "string"},
            "max_len": {"type": "integer", "default": DEFAULT_MAX_LEN},
        },
        "required": ["kind", "model_name"],
        "additionalProperties": False,
    }
    schema["properties"]["encoder"] = {"oneOf": [mini, pretrained], "default": {"kind": "mini"}}
    schema["properties"]["transfer"]["anyOf"][0]["properties"]["strategy"]["enum"] = [
        s.value for s in TransferStrategy
    ]
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "CrossOffense experiment",
        **schema,
    }
