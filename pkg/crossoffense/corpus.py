"""This module contains functions to load, validate, label-map, and split the
shared-task offensive language datasets, and the majority-class baseline.

Datasets are tab-separated files in the canonical ``id, text, label`` layout.
Each dataset profile in the registry (``crossoffense/data/profiles.json``)
declares its column positions, raw label vocabulary, and label scheme.
"""

import csv
import math
import os
import unicodedata
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .common import DatasetError, read_json

PROFILES_PATH = os.path.join(os.path.dirname(__file__), "data", "profiles.json")
REGISTRY_VERSION = 1
SOURCES = ("twitter", "facebook")


@dataclass(frozen=True)
class LabelScheme:
    """An ordered set of class names defining a classification task.

    The index of a class is its position in ``classes``.

    Attributes:
        name (str): The scheme identifier, e.g. "offensive".
        classes (Tuple[str, ...]): The class names, at least two.
    """

    name: str
    classes: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.name:
            raise ValueError("LabelScheme name must be non-empty.")
        if len(self.classes) < 2:
            raise ValueError(
                f"LabelScheme {self.name!r} needs at least 2 classes, got {len(self.classes)}."
            )
        if any(not isinstance(c, str) or not c for c in self.classes):
            raise ValueError(f"LabelScheme {self.name!r} has an empty class name.")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"LabelScheme {self.name!r} has duplicate class names.")

    @property
    def k(self) -> int:
        """The number of classes."""
        return len(self.classes)

    def index(self, class_name: str) -> int:
        """Returns the index of a class name."""
        try:
            return self.classes.index(class_name)
        except ValueError:
            raise ValueError(
                f"{class_name!r} is not a class of scheme {self.name!r}."
            ) from None

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "LabelScheme":
        return cls(name=d["name"], classes=tuple(d["classes"]))


@dataclass(frozen=True)
class LabeledInstance:
    """One text with its gold label index.

    Attributes:
        id (str): The instance id, unique within its dataset.
        text (str): The normalized text, non-empty.
        label (int): The class index under the dataset's scheme.
    """

    id: str
    text: str
    label: int

    def __post_init__(self):
        if not self.text.strip():
            raise DatasetError("instance text is empty", row_id=self.id)


@dataclass(frozen=True)
class Dataset:
    """An immutable labeled dataset.

    Attributes:
        scheme (LabelScheme): The label scheme of every instance.
        instances (Tuple[LabeledInstance, ...]): The instances.
        source (str): The platform, "twitter" or "facebook".
        language (str): The language tag.
        name (str): A human readable name used in provenance and reports.
    """

    scheme: LabelScheme
    instances: Tuple[LabeledInstance, ...]
    source: str = "twitter"
    language: str = "unknown"
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.source not in SOURCES:
            raise DatasetError(f"unknown source tag {self.source!r}")
        seen = set()
        for inst in self.instances:
            if not 0 <= inst.label < self.scheme.k:
                raise DatasetError(
                    f"label {inst.label} out of range for scheme {self.scheme.name!r}",
                    row_id=inst.id,
                )
            if inst.id in seen:
                raise DatasetError("duplicate instance id", row_id=inst.id)
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[LabeledInstance]:
        return iter(self.instances)

    @property
    def ids(self) -> List[str]:
        return [inst.id for inst in self.instances]

    @property
    def texts(self) -> List[str]:
        return [inst.text for inst in self.instances]

    @property
    def labels(self) -> np.ndarray:
        return np.array([inst.label for inst in self.instances], dtype=np.int64)

    def label_counts(self) -> np.ndarray:
        """Returns the number of instances per class index."""
        return np.bincount(self.labels, minlength=self.scheme.k)

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        """Returns a dataset holding the instances at the given positions.

        Args:
            indices (Sequence[int]): Positions into ``instances``.
            name (str, optional): The new dataset name. Defaults to this name.

        Returns:
            Dataset: The subset.
        """
        return Dataset(
            scheme=self.scheme,
            instances=tuple(self.instances[int(i)] for i in indices),
            source=self.source,
            language=self.language,
            name=name or self.name,
        )


@dataclass(frozen=True)
class DatasetProfile:
    """The file layout and label vocabulary of one shared-task dataset.

    Attributes:
        name (str): The profile name, e.g. "olid-en".
        language (str): The language tag.
        source (str): The platform tag.
        scheme (LabelScheme): The label scheme.
        labels (Dict[str, str]): Raw label string to class name, a bijection.
        columns (Dict[str, int]): Positions of the "id", "text" and "label" columns.
        n_columns (int): The number of columns of every row.
        header (bool): Whether files carry a header row.
    """

    name: str
    language: str
    source: str
    scheme: LabelScheme
    labels: Dict[str, str]
    columns: Dict[str, int] = field(
        default_factory=lambda: {"id": 0, "text": 1, "label": 2}
    )
    n_columns: int = 3
    header: bool = False

    def __post_init__(self):
        if sorted(self.labels.values()) != sorted(self.scheme.classes):
            raise DatasetError(
                f"profile {self.name!r} label vocabulary does not map one-to-one "
                f"onto scheme {self.scheme.name!r}"
            )
        if set(self.columns) != {"id", "text", "label"}:
            raise DatasetError(f"profile {self.name!r} must declare id, text, label columns")
        if any(not 0 <= c < self.n_columns for c in self.columns.values()):
            raise DatasetError(f"profile {self.name!r} column position out of range")

    def label_index(self, raw: str) -> int:
        """Maps a raw label string to its class index."""
        return self.scheme.index(self.labels[raw])

    def raw_label(self, index: int) -> str:
        """Maps a class index back to its raw label string."""
        class_name = self.scheme.classes[index]
        for raw, name in self.labels.items():
            if name == class_name:
                return raw
        raise KeyError(index)

    @classmethod
    def from_dict(cls, name: str, d: Dict[str, Any]) -> "DatasetProfile":
        return cls(
            name=name,
            language=d["language"],
            source=d["source"],
            scheme=LabelScheme.from_dict(d["scheme"]),
            labels=dict(d["labels"]),
            columns=dict(d.get("columns", {"id": 0, "text": 1, "label": 2})),
            n_columns=int(d.get("n_columns", 3)),
            header=bool(d.get("header", False)),
        )


def load_profiles(filepath: Optional[str] = None) -> Dict[str, DatasetProfile]:
    """Reads the dataset-profile registry.

    Args:
        filepath (str, optional): The registry file. Defaults to the registry
            shipped with the package.

    Returns:
        Dict[str, DatasetProfile]: Profiles by name.
    """
    filepath = filepath or PROFILES_PATH
    registry = read_json(filepath)
    if registry.get("version") != REGISTRY_VERSION:
        raise DatasetError(
            f"unsupported profile registry version {registry.get('version')!r}",
            path=filepath,
        )
    return {
        name: DatasetProfile.from_dict(name, d)
        for name, d in registry["profiles"].items()
    }


def get_profile(name: str, filepath: Optional[str] = None) -> DatasetProfile:
    """Looks up a dataset profile by name.

    Args:
        name (str): The profile name, e.g. "hasoc-hi".
        filepath (str, optional): The registry file. Defaults to the shipped registry.

    Returns:
        DatasetProfile: The profile.
    """
    profiles = load_profiles(filepath)
    if name not in profiles:
        raise DatasetError(
            f"unknown dataset profile {name!r}; known profiles: {', '.join(sorted(profiles))}"
        )
    return profiles[name]


def normalize_text(text: str, lowercase: bool = False) -> str:
    """Applies NFC normalization and whitespace trimming, optionally lowercasing."""
    text = unicodedata.normalize("NFC", text).strip()
    return text.lower() if lowercase else text


def _read_rows(filepath: str, profile: DatasetProfile, header: bool) -> pd.DataFrame:
    def reject(fields: List[str]):
        raise DatasetError(
            f"malformed row: expected {profile.n_columns} columns, found {len(fields)}",
            path=filepath,
            row_id=fields[profile.columns["id"]] if fields else None,
        )

    try:
        df = pd.read_csv(
            filepath,
            sep="\t",
            header=None,
            skiprows=1 if header else 0,
            dtype=str,
            quoting=csv.QUOTE_NONE,
            keep_default_na=False,
            skip_blank_lines=True,
            engine="python",
            on_bad_lines=reject,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=range(profile.n_columns), dtype=str)
    except UnicodeDecodeError as e:
        raise DatasetError(f"file is not valid UTF-8: {e}", path=filepath) from e

    if df.shape[1] != profile.n_columns:
        raise DatasetError(
            f"malformed row: expected {profile.n_columns} columns, found {df.shape[1]}",
            path=filepath,
            row_id=str(df.iat[0, 0]),
        )
    short = df.isna().any(axis=1)
    if short.any():
        first = df[short].iloc[0]
        raise DatasetError(
            f"malformed row: expected {profile.n_columns} columns, found "
            f"{int(first.notna().sum())}",
            path=filepath,
            row_id=str(first.iloc[profile.columns["id"]]),
        )
    return df


def load_dataset(
    filepath: str,
    profile: Union[str, DatasetProfile],
    lowercase: bool = False,
    skip_header: Optional[bool] = None,
    name: Optional[str] = None,
) -> Dataset:
    """Loads a shared-task dataset file under a dataset profile.

    Args:
        filepath (str): The UTF-8 TSV file.
        profile (str | DatasetProfile): The profile or its name, e.g. "olid-en".
        lowercase (bool, optional): Lowercase all texts. Defaults to False.
        skip_header (bool, optional): Skip the first row. Defaults to the
            profile's ``header`` flag.
        name (str, optional): The dataset name. Defaults to the profile name.

    Raises:
        DatasetError: If the file is missing, a row has the wrong column count,
            a label string is unknown, a text is empty, or ids repeat.

    Returns:
        Dataset: The dataset with raw labels mapped to class indices.
    """
    if isinstance(profile, str):
        profile = get_profile(profile)
    if not os.path.isfile(filepath):
        raise DatasetError("dataset file not found", path=filepath)

    header = profile.header if skip_header is None else skip_header
    df = _read_rows(filepath, profile, header)

    id_col = profile.columns["id"]
    text_col = profile.columns["text"]
    label_col = profile.columns["label"]
    instances = []
    for row in df.itertuples(index=False, name=None):
        row_id = str(row[id_col]).strip()
        raw = str(row[label_col]).strip()
        if raw not in profile.labels:
            raise DatasetError(
                f"unknown label {raw!r} for profile {profile.name!r}",
                path=filepath,
                row_id=row_id,
            )
        text = normalize_text(str(row[text_col]), lowercase=lowercase)
        if not text:
            raise DatasetError("instance text is empty", path=filepath, row_id=row_id)
        instances.append(LabeledInstance(row_id, text, profile.label_index(raw)))

    try:
        return Dataset(
            scheme=profile.scheme,
            instances=tuple(instances),
            source=profile.source,
            language=profile.language,
            name=name or profile.name,
        )
    except DatasetError as e:
        raise DatasetError(str(e), path=filepath) from e


def save_dataset(dataset: Dataset, filepath: str, profile: Union[str, DatasetProfile]) -> str:
    """Writes a dataset in a profile's layout with raw label strings.

    Args:
        dataset (Dataset): The dataset.
        filepath (str): The output TSV file.
        profile (str | DatasetProfile): The profile or its name.

    Returns:
        str: The output file path.
    """
    if isinstance(profile, str):
        profile = get_profile(profile)
    if dataset.scheme != profile.scheme:
        raise DatasetError(
            f"dataset scheme {dataset.scheme.name!r} does not match profile {profile.name!r}"
        )
    rows = []
    for inst in dataset:
        row = [""] * profile.n_columns
        row[profile.columns["id"]] = inst.id
        row[profile.columns["text"]] = inst.text.replace("\t", " ").replace("\n", " ")
        row[profile.columns["label"]] = profile.raw_label(inst.label)
        rows.append(row)
    out_dir = os.path.dirname(os.path.abspath(filepath))
    os.makedirs(out_dir, exist_ok=True)
    pd.DataFrame(rows).to_csv(
        filepath,
        sep="\t",
        header=profile.header,
        index=False,
        quoting=csv.QUOTE_NONE,
        encoding="utf-8",
    )
    return filepath


def split_dataset(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Shuffles a dataset with a seeded permutation and cuts it in two.

    The split is not stratified. The first ``floor(ratio * n)`` permuted
    instances form the training part.

    Args:
        dataset (Dataset): The dataset to split.
        ratio (float, optional): The training fraction, 0 < ratio < 1. Defaults to 0.8.
        seed (int, optional): The shuffle seed. Defaults to 0.

    Raises:
        DatasetError: If the dataset is empty or the ratio is out of range.

    Returns:
        Tuple[Dataset, Dataset]: The training and validation datasets.
    """
    if not 0 < ratio < 1:
        raise DatasetError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(dataset)
    if n == 0:
        raise DatasetError(f"cannot split empty dataset {dataset.name!r}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratio * n)
    train = dataset.subset(order[:n_train], name=f"{dataset.name}:train")
    validation = dataset.subset(order[n_train:], name=f"{dataset.name}:validation")
    return train, validation


def majority_label(dataset: Dataset) -> int:
    """Returns the most frequent label; ties go to the lowest class index."""
    if len(dataset) == 0:
        raise DatasetError(f"dataset {dataset.name!r} is empty")
    return int(np.argmax(dataset.label_counts()))


def majority_baseline(train: Dataset, eval: Dataset):
    """Evaluates the majority-class baseline.

    Every evaluation instance is predicted as the most frequent training label.

    Args:
        train (Dataset): The dataset the majority label is counted on.
        eval (Dataset): The dataset to evaluate on.

    Raises:
        DatasetError: If the two datasets have different label schemes.

    Returns:
        EvaluationReport: The full evaluation report.
    """
    from .evaluation import evaluate

    if train.scheme != eval.scheme:
        raise DatasetError(
            f"scheme mismatch: {train.scheme.name!r} vs {eval.scheme.name!r}"
        )
    label = majority_label(train)
    pred = np.full(len(eval), label, dtype=np.int64)
    return evaluate(
        eval.labels,
        pred,
        eval.scheme,
        label="majority baseline",
        provenance={"train_dataset": train.name, "eval_dataset": eval.name, "label": label},
    )
