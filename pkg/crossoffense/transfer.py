"""This module contains the checkpoint container and the two weight-transfer
strategies.

* Full transfer copies encoder and classification head from a source model,
  for a target task with the same number of classes (e.g. English offensive
  to Hindi hate-offensive).
* Encoder-only transfer copies the encoder and puts a freshly seeded head on
  top, so the class count may change (e.g. English 2-class to Bengali 3-class).

A checkpoint file (``.ckpt``) is laid out as::

    b"XOCKPT\\x00\\x01" | uint32 LE header length | UTF-8 JSON header | payloads

The header lists every tensor with its group (``encoder`` or ``head``), dtype,
shape, byte offset and byte count, so a reader can seek straight to the
tensors it needs.
"""

import datetime
import enum
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from .classifier import ClassificationHead, ClassifierModel, init_head
from .common import CheckpointError, ConfigError, EncoderError, atomic_write, config_fingerprint
from .corpus import LabelScheme
from .encoder import SequenceEncoder, encoder_from_state, encoder_state

logger = logging.getLogger(__name__)

MAGIC = b"XOCKPT\x00\x01"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<I")
_DTYPES = {"float32": "<f4", "int64": "<i8", "bool": "|b1"}


@dataclass
class Checkpoint:
    """Serialized encoder state with an optional classification head.

    Attributes:
        encoder_config (dict): The encoder config, including its ``kind``.
        encoder_state (Dict[str, torch.Tensor]): Encoder tensors by name.
        head_state (Dict[str, torch.Tensor], optional): Head tensors
            (``linear.weight`` and optionally ``linear.bias``).
        scheme (LabelScheme, optional): The head's label scheme; present exactly
            when the head is.
        provenance (dict): Source dataset, train config, seed, creation time
            and encoder fingerprint.
        fingerprint (str): Fingerprint of ``encoder_config``.
        format_version (int): The container version.
    """

    encoder_config: Dict[str, Any]
    encoder_state: Dict[str, torch.Tensor]
    head_state: Optional[Dict[str, torch.Tensor]] = None
    scheme: Optional[LabelScheme] = None
    provenance: Dict[str, Any] = field(default_factory=dict)
    fingerprint: str = ""
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = config_fingerprint(self.encoder_config)

    @property
    def has_head(self) -> bool:
        return self.head_state is not None

    @property
    def hidden_size(self) -> int:
        return int(self.encoder_config["hidden_size"])

    def validate(self) -> "Checkpoint":
        """Checks version, fingerprint and head/scheme consistency.

        Raises:
            CheckpointError: If any check fails.
        """
        if self.format_version != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint version mismatch: expected {FORMAT_VERSION}, got {self.format_version}"
            )
        if self.fingerprint != config_fingerprint(self.encoder_config):
            raise CheckpointError("checkpoint fingerprint does not match its encoder config")
        if self.has_head != (self.scheme is not None):
            raise CheckpointError("checkpoint head and label scheme must be present together")
        if self.has_head:
            weight = self.head_state.get("linear.weight")
            if weight is None or set(self.head_state) - {"linear.weight", "linear.bias"}:
                raise CheckpointError(f"unexpected head tensors {sorted(self.head_state)}")
            if tuple(weight.shape) != (self.scheme.k, self.hidden_size):
                raise CheckpointError(
                    f"head shape {tuple(weight.shape)} does not match "
                    f"k={self.scheme.k}, H={self.hidden_size}"
                )
            bias = self.head_state.get("linear.bias")
            if bias is not None and tuple(bias.shape) != (self.scheme.k,):
                raise CheckpointError(f"head bias shape {tuple(bias.shape)} does not match k")
        return self


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def export_checkpoint(
    model: ClassifierModel, include_head: bool = True, provenance: Optional[Dict[str, Any]] = None
) -> Checkpoint:
    """Captures a model's weights as a checkpoint.

    Args:
        model (ClassifierModel): The model.
        include_head (bool, optional): Store the head and its label scheme.
            Defaults to True.
        provenance (dict, optional): Extra provenance merged over the model's.
            Defaults to None.

    Returns:
        Checkpoint: The checkpoint; tensors are detached copies.
    """
    model.validate()
    encoder = model.encoder
    meta = {**model.provenance, **(provenance or {})}
    meta["created_at"] = _timestamp()
    meta["encoder_fingerprint"] = encoder.fingerprint
    head_state = None
    if include_head:
        head_state = {k: v.detach().clone() for k, v in model.head.state_dict().items()}
    return Checkpoint(
        encoder_config=dict(encoder.config),
        encoder_state=encoder_state(encoder),
        head_state=head_state,
        scheme=model.scheme if include_head else None,
        provenance=meta,
    ).validate()


def _payload(tensor: torch.Tensor) -> Tuple[str, bytes]:
    tensor = tensor.detach().cpu()
    if tensor.is_floating_point():
        dtype = "float32"
    elif tensor.dtype == torch.bool:
        dtype = "bool"
    else:
        dtype = "int64"
    data = tensor.numpy().astype(_DTYPES[dtype], copy=False)
    return dtype, np.ascontiguousarray(data).tobytes()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serializes a checkpoint into the container format."""
    ckpt.validate()
    entries: List[Dict[str, Any]] = []
    payloads: List[bytes] = []
    offset = 0
    groups = [("encoder", ckpt.encoder_state)]
    if ckpt.has_head:
        groups.append(("head", ckpt.head_state))
    for group, state in groups:
        for name, tensor in state.items():
            dtype, data = _payload(tensor)
            entries.append(
                {
                    "name": name,
                    "group": group,
                    "dtype": dtype,
                    "shape": list(tensor.shape),
                    "offset": offset,
                    "nbytes": len(data),
                }
            )
            payloads.append(data)
            offset += len(data)
    header = {
        "format_version": ckpt.format_version,
        "fingerprint": ckpt.fingerprint,
        "encoder_config": ckpt.encoder_config,
        "scheme": ckpt.scheme.to_dict() if ckpt.scheme is not None else None,
        "provenance": ckpt.provenance,
        "tensors": entries,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    raw = raw.encode("utf-8")
    return b"".join([MAGIC, _LENGTH.pack(len(raw)), raw, *payloads])


def save_checkpoint(ckpt: Checkpoint, filepath: str) -> str:
    """Writes a checkpoint file atomically.

    Args:
        ckpt (Checkpoint): The checkpoint.
        filepath (str): The output path.

    Returns:
        str: The output path.
    """
    try:
        return atomic_write(filepath, checkpoint_bytes(ckpt))
    except OSError as e:
        raise CheckpointError(f"failed to write checkpoint {filepath}: {e}") from e


def _read_header(f: BinaryIO, filepath: str) -> Tuple[Dict[str, Any], int]:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"{filepath} is not a checkpoint file")
    raw_length = f.read(_LENGTH.size)
    if len(raw_length) != _LENGTH.size:
        raise CheckpointError(f"truncated checkpoint header in {filepath}")
    (length,) = _LENGTH.unpack(raw_length)
    raw = f.read(length)
    if len(raw) != length:
        raise CheckpointError(f"truncated checkpoint header in {filepath}")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {filepath}: {e}") from e
    missing = {"format_version", "fingerprint", "encoder_config", "scheme", "provenance", "tensors"}
    missing -= set(header)
    if missing:
        raise CheckpointError(f"checkpoint header of {filepath} lacks {sorted(missing)}")
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch in {filepath}: expected {FORMAT_VERSION}, "
            f"got {header['format_version']}"
        )
    if header["fingerprint"] != config_fingerprint(header["encoder_config"]):
        raise CheckpointError(f"fingerprint mismatch in {filepath}: encoder config was altered")
    return header, len(MAGIC) + _LENGTH.size + length


def read_checkpoint_header(filepath: str) -> Dict[str, Any]:
    """Reads and checks a checkpoint header without touching tensor payloads.

    Args:
        filepath (str): The checkpoint path.

    Raises:
        CheckpointError: If the file is missing, malformed, of another version,
            or its fingerprint does not match its encoder config.

    Returns:
        dict: The header.
    """
    if not os.path.isfile(filepath):
        raise CheckpointError(f"checkpoint not found: {filepath}")
    with open(filepath, "rb") as f:
        return _read_header(f, filepath)[0]


def _read_tensor(f: BinaryIO, start: int, entry: Dict[str, Any], filepath: str) -> torch.Tensor:
    dtype = _DTYPES.get(entry["dtype"])
    if dtype is None:
        raise CheckpointError(f"unsupported tensor dtype {entry['dtype']!r} in {filepath}")
    shape = tuple(int(s) for s in entry["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
    if entry["nbytes"] != expected:
        raise CheckpointError(f"tensor {entry['name']!r} in {filepath} has a wrong byte count")
    f.seek(start + entry["offset"])
    data = f.read(entry["nbytes"])
    if len(data) != entry["nbytes"]:
        raise CheckpointError(f"truncated payload of tensor {entry['name']!r} in {filepath}")
    array = np.frombuffer(data, dtype=dtype).reshape(shape)
    native = array.astype(array.dtype.newbyteorder("="), copy=True)
    return torch.from_numpy(native)


def load_checkpoint(filepath: str, include_head: bool = True) -> Checkpoint:
    """Reads a checkpoint file.

    Args:
        filepath (str): The checkpoint path.
        include_head (bool, optional): Read the head. When False the head
            payload is never read and the result carries no head or scheme.
            Defaults to True.

    Raises:
        CheckpointError: If the file is missing, malformed or inconsistent.

    Returns:
        Checkpoint: The checkpoint.
    """
    if not os.path.isfile(filepath):
        raise CheckpointError(f"checkpoint not found: {filepath}")
    with open(filepath, "rb") as f:
        header, start = _read_header(f, filepath)
        encoder_tensors: Dict[str, torch.Tensor] = {}
        head_tensors: Dict[str, torch.Tensor] = {}
        for entry in header["tensors"]:
            if entry["group"] == "encoder":
                encoder_tensors[entry["name"]] = _read_tensor(f, start, entry, filepath)
            elif entry["group"] == "head":
                if include_head:
                    head_tensors[entry["name"]] = _read_tensor(f, start, entry, filepath)
            else:
                raise CheckpointError(f"unknown tensor group {entry['group']!r} in {filepath}")

    scheme = None
    if include_head and header["scheme"] is not None:
        scheme = LabelScheme.from_dict(header["scheme"])
    ckpt = Checkpoint(
        encoder_config=header["encoder_config"],
        encoder_state=encoder_tensors,
        head_state=head_tensors if scheme is not None else None,
        scheme=scheme,
        provenance=header["provenance"],
        fingerprint=header["fingerprint"],
        format_version=header["format_version"],
    )
    return ckpt.validate()


def _rebuild_encoder(ckpt: Checkpoint) -> SequenceEncoder:
    try:
        return encoder_from_state(ckpt.encoder_config, ckpt.encoder_state)
    except EncoderError as e:
        raise CheckpointError(f"checkpoint encoder does not fit its config: {e}") from e


def _class_permutation(
    source: LabelScheme, target: LabelScheme, class_map: Dict[str, str]
) -> List[int]:
    if set(class_map) != set(source.classes) or set(class_map.values()) != set(target.classes):
        raise ConfigError(
            f"class_map must map every class of {source.classes} onto exactly one of "
            f"{target.classes}, got {class_map}"
        )
    inverse = {t: s for s, t in class_map.items()}
    return [source.index(inverse[name]) for name in target.classes]


def import_full(
    ckpt: Checkpoint,
    target_scheme: Optional[LabelScheme] = None,
    class_map: Optional[Dict[str, str]] = None,
) -> ClassifierModel:
    """Builds a model whose encoder and head equal the checkpoint's.

    Args:
        ckpt (Checkpoint): A checkpoint with a head.
        target_scheme (LabelScheme, optional): The target task's scheme; its
            class count must equal the checkpoint's. Defaults to the
            checkpoint's scheme.
        class_map (Dict[str, str], optional): Source class name to target
            class name, a bijection. Head rows are reordered to follow it.
            Without it classes are aligned by position. Defaults to None.

    Raises:
        CheckpointError: If the head is missing or the class counts differ.
        ConfigError: If ``class_map`` is not a bijection between the schemes.

    Returns:
        ClassifierModel: The model, labelled with the target scheme.
    """
    ckpt.validate()
    if not ckpt.has_head:
        raise CheckpointError("checkpoint has no classification head (missing head)")
    scheme = ckpt.scheme
    rows = list(range(scheme.k))
    if target_scheme is not None:
        if target_scheme.k != scheme.k:
            raise CheckpointError(
                f"class-count mismatch: checkpoint head has k={scheme.k}, "
                f"target scheme {target_scheme.name!r} has k={target_scheme.k}"
            )
        if class_map:
            rows = _class_permutation(scheme, target_scheme, class_map)
        elif target_scheme != scheme:
            logger.warning(
                "aligning classes %s to %s by position; declare a class_map to make it explicit",
                scheme.classes,
                target_scheme.classes,
            )
        scheme = target_scheme

    encoder = _rebuild_encoder(ckpt)
    head = init_head(ckpt.hidden_size, scheme.k, bias="linear.bias" in ckpt.head_state)
    state = {k: v[rows].clone() for k, v in ckpt.head_state.items()}
    head.load_state_dict(state)
    return ClassifierModel(encoder, head, scheme, provenance=dict(ckpt.provenance)).eval()


def import_encoder_only(
    ckpt: Checkpoint, target_scheme: LabelScheme, seed: int = 0, bias: bool = True
) -> ClassifierModel:
    """Builds a model with the checkpoint's encoder and a fresh head.

    Any head stored in the checkpoint is ignored.

    Args:
        ckpt (Checkpoint): The checkpoint.
        target_scheme (LabelScheme): The target scheme; its class count may
            differ from the source's.
        seed (int, optional): The head initialization seed. Defaults to 0.
        bias (bool, optional): Give the head a bias vector. Defaults to True.

    Returns:
        ClassifierModel: The model.
    """
    ckpt.validate()
    encoder = _rebuild_encoder(ckpt)
    head = init_head(encoder.hidden_size, target_scheme.k, seed=seed, bias=bias)
    provenance = {"encoder_source": dict(ckpt.provenance), "head_seed": seed}
    return ClassifierModel(encoder, head, target_scheme, provenance=provenance).eval()


class TransferStrategy(str, enum.Enum):
    """How a target model is initialized from a source checkpoint."""

    FULL = "full"
    ENCODER_ONLY = "encoder_only"


def initialize_from_checkpoint(
    filepath: str,
    strategy: Union[TransferStrategy, str],
    target_scheme: LabelScheme,
    seed: int = 0,
    class_map: Optional[Dict[str, str]] = None,
    bias: bool = True,
) -> ClassifierModel:
    """Initializes a target model from a checkpoint file.

    Reads only what the strategy needs: the encoder-only strategy never reads
    head payloads, and the full strategy checks the class count from the header
    before loading any tensor.

    Args:
        filepath (str): The checkpoint path.
        strategy (TransferStrategy | str): "full" or "encoder_only".
        target_scheme (LabelScheme): The target task's scheme.
        seed (int, optional): Head seed for the encoder-only strategy. Defaults to 0.
        class_map (Dict[str, str], optional): Class mapping for the full strategy.
            Defaults to None.
        bias (bool, optional): Head bias for the encoder-only strategy. Defaults to True.

    Returns:
        ClassifierModel: The initialized model; its provenance names the parent
            checkpoint and the strategy.
    """
    try:
        strategy = TransferStrategy(strategy)
    except ValueError:
        raise ConfigError(
            f"unknown transfer strategy {strategy!r}; use one of {[s.value for s in TransferStrategy]}"
        ) from None

    if strategy is TransferStrategy.FULL:
        check_full_transfer(read_checkpoint_header(filepath), target_scheme, filepath)
        model = import_full(load_checkpoint(filepath), target_scheme, class_map)
    else:
        model = import_encoder_only(
            load_checkpoint(filepath, include_head=False), target_scheme, seed, bias
        )
    model.provenance.update({"parent_checkpoint": str(filepath), "strategy": strategy.value})
    logger.info("initialized %s model from %s (%s)", target_scheme.name, filepath, strategy.value)
    return model


def check_full_transfer(header: Dict[str, Any], target_scheme: LabelScheme, filepath: str = "") -> None:
    """Raises CheckpointError unless a header has a head with the target's class count."""
    if header.get("scheme") is None:
        raise CheckpointError(f"full transfer needs a checkpoint with a head; {filepath} has none")
    k = len(header["scheme"]["classes"])
    if k != target_scheme.k:
        raise CheckpointError(
            f"class-count mismatch: {filepath} has a {k}-class head, "
            f"target scheme {target_scheme.name!r} has {target_scheme.k} classes"
        )
