"""The common module contains common functions and classes used by the other modules.
"""

import contextlib
import hashlib
import json
import logging
import os
import shutil
import tempfile
from typing import Any, Dict, Iterator, Optional, Union

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CROSSOFFENSE_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class CrossOffenseError(Exception):
    """Base class for all errors raised by crossoffense."""

    exit_code = 1


class ConfigError(CrossOffenseError, ValueError):
    """An experiment or training configuration is invalid."""

    exit_code = 2


class DatasetError(CrossOffenseError, ValueError):
    """A dataset file or dataset value violates its profile or constraints.

    Args:
        message (str): The error message.
        path (str, optional): The offending file. Defaults to None.
        row_id (str, optional): The offending row id. Defaults to None.
    """

    exit_code = 3

    def __init__(
        self, message: str, path: Optional[str] = None, row_id: Optional[str] = None
    ):
        context = []
        if path is not None:
            context.append(f"file {path}")
        if row_id is not None:
            context.append(f"row {row_id!r}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.path = path
        self.row_id = row_id


class CheckpointError(CrossOffenseError, ValueError):
    """A checkpoint is unreadable, tampered, or incompatible with its use."""

    exit_code = 4


class EncoderError(CrossOffenseError, ValueError):
    """An encoder received invalid input or holds an inconsistent state."""

    exit_code = 1


class TrainingError(CrossOffenseError, RuntimeError):
    """Training diverged (non-finite loss)."""

    exit_code = 1


def setup_logging(verbosity: int = 1) -> logging.Logger:
    """Attaches a stream handler to the package logger.

    Args:
        verbosity (int, optional): 0 for WARNING, 1 for INFO, 2 or more for DEBUG.
            Defaults to 1.

    Returns:
        logging.Logger: The configured ``crossoffense`` logger.
    """
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    root = logging.getLogger("crossoffense")
    root.setLevel(level)
    # rebind to the current stderr, which may have been swapped since the last call
    for old in [h for h in root.handlers if getattr(h, "_crossoffense", False)]:
        root.removeHandler(old)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._crossoffense = True
    root.addHandler(handler)
    return root


def canonical_json(obj: Any) -> str:
    """Serializes an object to JSON with sorted keys and compact separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_fingerprint(config: Dict[str, Any]) -> str:
    """Computes the fingerprint of an architecture configuration.

    Args:
        config (dict): A JSON-serializable configuration.

    Returns:
        str: The hex SHA-256 digest of the canonical JSON form.
    """
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def read_json(filepath: str) -> Any:
    """Reads a UTF-8 JSON file."""
    with open(filepath, "r", encoding="utf-8") as f:
        return json.load(f)


def write_json(obj: Any, filepath: str, indent: Optional[int] = 2) -> str:
    """Writes an object as UTF-8 JSON, atomically.

    Args:
        obj (Any): A JSON-serializable object.
        filepath (str): The output file path.
        indent (int, optional): Indentation. Defaults to 2.

    Returns:
        str: The output file path.
    """
    text = json.dumps(obj, indent=indent, sort_keys=True, ensure_ascii=False)
    return atomic_write(filepath, text + "\n")


def atomic_write(filepath: str, data: Union[str, bytes]) -> str:
    """Writes data to a temp file next to ``filepath`` and renames it into place.

    Args:
        filepath (str): The output file path.
        data (str | bytes): The content; strings are encoded as UTF-8.

    Returns:
        str: The absolute output file path.
    """
    filepath = os.path.abspath(filepath)
    out_dir = os.path.dirname(filepath)
    os.makedirs(out_dir, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, filepath)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(tmp)
        raise
    return filepath


@contextlib.contextmanager
def staged_directory(out_dir: str) -> Iterator[str]:
    """Stages a directory's content and renames it into place on success.

    The staging directory is a sibling of ``out_dir``; an existing ``out_dir``
    is replaced only after the body completes without raising.

    Args:
        out_dir (str): The final directory.

    Yields:
        str: The staging directory to write into.
    """
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(dir=parent, prefix=f".{os.path.basename(out_dir)}-")
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if os.path.isdir(out_dir):
        retired = staging + ".old"
        os.replace(out_dir, retired)
        os.replace(staging, out_dir)
        shutil.rmtree(retired, ignore_errors=True)
    else:
        os.replace(staging, out_dir)


def default_output_root() -> str:
    """Returns the root directory for run outputs."""
    return os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)


@contextlib.contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Seeds torch inside the block and restores the previous RNG state after it.

    Args:
        seed (int): The seed.
    """
    import torch

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield
