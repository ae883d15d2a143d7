"""This module contains the softmax classification head over the [CLS]
representation and the loop that fine-tunes encoder and head jointly.

The model predicts ``p(c | h) = softmax(W h + b)``, where ``h`` is the final
hidden state of the first token, and is trained by minimizing the negative
log-probability of the gold label.
"""

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .common import ConfigError, DatasetError, TrainingError, atomic_write, seeded
from .corpus import Dataset, LabelScheme, split_dataset
from .encoder import SequenceEncoder, check_token_ids, encode, pad_batch

logger = logging.getLogger(__name__)

LOG_EPSILON = 1e-12
OPTIMIZERS = ("adam", "sgd")
SELECTIONS = ("final", "best")


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tuning hyperparameters.

    Attributes:
        learning_rate (float): The step size. 0 runs without updating. Defaults to 1e-5.
        epochs (int): Passes over the training data. Defaults to 3.
        batch_size (int): Instances per step. Defaults to 8.
        seed (int): Seed of the split and of the batch order. Defaults to 0.
        split_ratio (float): Training fraction of the train/validation split.
            Defaults to 0.8.
        optimizer (str): "adam" or "sgd" (plain gradient descent). Defaults to "adam".
        hold_out (bool): Split off a validation part. When False, train on all
            data and record no validation scores. Defaults to True.
        select (str): Keep the "final" epoch's weights or the "best" epoch's
            by validation macro F1. Defaults to "final".
        max_len (int): The maximum token sequence length. Defaults to 512.
    """

    learning_rate: float = 1e-5
    epochs: int = 3
    batch_size: int = 8
    seed: int = 0
    split_ratio: float = 0.8
    optimizer: str = "adam"
    hold_out: bool = True
    select: str = "final"
    max_len: int = 512

    def __post_init__(self):
        self.validate()

    def validate(self) -> "TrainConfig":
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.split_ratio < 1:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.select not in SELECTIONS:
            raise ConfigError(f"select must be one of {SELECTIONS}, got {self.select!r}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train settings: {sorted(unknown)}")
        return cls(**d)


class ClassificationHead(nn.Module):
    """The task-specific matrix W (k x H) with an optional bias.

    Args:
        hidden_size (int): The encoder hidden size H.
        num_classes (int): The number of classes k.
        bias (bool, optional): Include a bias vector. Defaults to True.
    """

    def __init__(self, hidden_size: int, num_classes: int, bias: bool = True):
        super().__init__()
        self.linear = nn.Linear(hidden_size, num_classes, bias=bias)

    @property
    def hidden_size(self) -> int:
        return self.linear.in_features

    @property
    def num_classes(self) -> int:
        return self.linear.out_features

    @property
    def has_bias(self) -> bool:
        return self.linear.bias is not None

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.linear(h)


def init_head(hidden_size: int, num_classes: int, seed: int = 0, bias: bool = True) -> ClassificationHead:
    """Builds a freshly initialized head without touching the global RNG state.

    Args:
        hidden_size (int): The encoder hidden size.
        num_classes (int): The number of classes.
        seed (int, optional): The initialization seed. Defaults to 0.
        bias (bool, optional): Include a bias vector. Defaults to True.

    Returns:
        ClassificationHead: The head.
    """
    with seeded(seed):
        return ClassificationHead(hidden_size, num_classes, bias=bias)


def zero_head(hidden_size: int, num_classes: int, bias: bool = True) -> ClassificationHead:
    """Builds a head whose weights and bias are all zero (uniform predictions)."""
    head = ClassificationHead(hidden_size, num_classes, bias=bias)
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    return head


class ClassifierModel(nn.Module):
    """An encoder with a softmax classification head over its [CLS] state.

    Args:
        encoder (SequenceEncoder): The encoder.
        head (ClassificationHead): The head.
        scheme (LabelScheme): The label scheme, with ``scheme.k`` equal to the
            head's class count.
        provenance (dict, optional): Where the weights came from. Defaults to {}.
    """

    def __init__(
        self,
        encoder: SequenceEncoder,
        head: ClassificationHead,
        scheme: LabelScheme,
        provenance: Optional[Dict[str, Any]] = None,
    ):
        super().__init__()
        self.encoder = encoder
        self.head = head
        self.scheme = scheme
        self.provenance = dict(provenance or {})
        self.validate()

    def validate(self) -> "ClassifierModel":
        """Raises ValueError unless encoder, head and scheme dimensions agree."""
        if self.head.hidden_size != self.encoder.hidden_size:
            raise ValueError(
                f"dimension mismatch: head expects H={self.head.hidden_size}, "
                f"encoder has H={self.encoder.hidden_size}"
            )
        if self.head.num_classes != self.scheme.k:
            raise ValueError(
                f"dimension mismatch: head has k={self.head.num_classes}, "
                f"scheme {self.scheme.name!r} has k={self.scheme.k}"
            )
        return self

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(input_ids, attention_mask))


def build_classifier(
    encoder: SequenceEncoder, scheme: LabelScheme, seed: int = 0, bias: bool = True
) -> ClassifierModel:
    """Puts a freshly seeded head sized for ``scheme`` on top of an encoder."""
    return ClassifierModel(encoder, init_head(encoder.hidden_size, scheme.k, seed, bias), scheme)


def softmax(logits: Iterable[float]) -> np.ndarray:
    """Computes a float64 softmax with max-logit subtraction.

    Args:
        logits (array-like): A 1-D vector of finite logits.

    Returns:
        np.ndarray: The probability vector.
    """
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict_proba(model: ClassifierModel, text: str, max_len: Optional[int] = None) -> np.ndarray:
    """Predicts the class distribution of one text.

    Args:
        model (ClassifierModel): The model.
        text (str): The text.
        max_len (int, optional): The maximum sequence length. Defaults to the
            encoder's.

    Raises:
        ValueError: If the model's dimensions disagree.

    Returns:
        np.ndarray: ``softmax(W h + b)``, float64, length k.
    """
    model.validate()
    h = encode(model.encoder, model.encoder.tokenize(text, max_len))
    with torch.no_grad():
        logits = model.head(h[None])[0]
    return softmax(logits.double().numpy())


def predict(model: ClassifierModel, text: str, max_len: Optional[int] = None) -> int:
    """Predicts the class index of one text; ties go to the lowest index."""
    return int(np.argmax(predict_proba(model, text, max_len)))


def predict_proba_batch(
    model: ClassifierModel,
    texts: Sequence[str],
    batch_size: int = 32,
    max_len: Optional[int] = None,
) -> np.ndarray:
    """Predicts class distributions for many texts.

    Args:
        model (ClassifierModel): The model.
        texts (Sequence[str]): The texts.
        batch_size (int, optional): Texts per forward pass. Defaults to 32.
        max_len (int, optional): The maximum sequence length. Defaults to the
            encoder's.

    Returns:
        np.ndarray: Probabilities, shape (len(texts), k), float64.
    """
    model.validate()
    model.encoder.check_shapes()
    out = np.zeros((len(texts), model.scheme.k), dtype=np.float64)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                chunk = texts[start : start + batch_size]
                ids, mask = pad_batch(
                    model.encoder, [model.encoder.tokenize(t, max_len) for t in chunk]
                )
                check_token_ids(model.encoder, ids)
                logits = model(ids, mask).double()
                out[start : start + len(chunk)] = torch.softmax(logits, dim=-1).numpy()
    finally:
        model.train(was_training)
    return out


def predict_batch(
    model: ClassifierModel,
    texts: Sequence[str],
    batch_size: int = 32,
    max_len: Optional[int] = None,
) -> np.ndarray:
    """Predicts class indices for many texts; ties go to the lowest index."""
    proba = predict_proba_batch(model, texts, batch_size, max_len)
    return np.argmax(proba, axis=1).astype(np.int64) if len(texts) else np.zeros(0, np.int64)


def loss(proba: Iterable[float], gold: int) -> float:
    """Negative log-probability of the gold label.

    Args:
        proba (array-like): A probability vector.
        gold (int): The gold class index.

    Raises:
        ValueError: If ``proba`` is not a distribution or ``gold`` is out of range.

    Returns:
        float: ``-log(max(proba[gold], 1e-12))``.
    """
    p = np.asarray(proba, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.isfinite(p).all() or (p < 0).any():
        raise ValueError("proba must be a 1-D vector of nonnegative probabilities")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"proba must sum to 1, sums to {p.sum()}")
    if not 0 <= gold < p.size:
        raise ValueError(f"gold label {gold} out of range for {p.size} classes")
    return float(-np.log(max(p[gold], LOG_EPSILON))) + 0.0


def head_gradient(proba: Iterable[float], h: Iterable[float], gold: int) -> np.ndarray:
    """Analytic gradient of ``loss`` with respect to W: ``(p - onehot(gold)) h^T``."""
    p = np.asarray(proba, dtype=np.float64)
    delta = p.copy()
    delta[gold] -= 1.0
    return np.outer(delta, np.asarray(h, dtype=np.float64))


@dataclass(frozen=True)
class EpochRecord:
    """Scores of one training epoch."""

    epoch: int
    train_loss: float
    validation_macro_f1: Optional[float]
    validation_weighted_f1: Optional[float]
    wall_time: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainHistory:
    """Per-epoch training records."""

    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def best_epoch(self) -> Optional[int]:
        """The epoch with the highest validation macro F1; ties go to the earliest."""
        scored = [r for r in self.records if r.validation_macro_f1 is not None]
        if not scored:
            return None
        return max(scored, key=lambda r: (r.validation_macro_f1, -r.epoch)).epoch

    @property
    def train_losses(self) -> List[float]:
        return [r.train_loss for r in self.records]

    def write_jsonl(self, filepath: str) -> str:
        """Writes one JSON object per epoch."""
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        return atomic_write(filepath, "".join(line + "\n" for line in lines))

    @classmethod
    def read_jsonl(cls, filepath: str) -> "TrainHistory":
        with open(filepath, "r", encoding="utf-8") as f:
            return cls([EpochRecord(**json.loads(line)) for line in f if line.strip()])


def make_optimizer(cfg: TrainConfig, parameters: Iterable[nn.Parameter]) -> torch.optim.Optimizer:
    """Builds the optimizer named by ``cfg.optimizer``."""
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(parameters, lr=cfg.learning_rate)
    return torch.optim.Adam(parameters, lr=cfg.learning_rate)


def train(
    model: ClassifierModel,
    data: Dataset,
    cfg: Optional[TrainConfig] = None,
    validation: Optional[Dataset] = None,
) -> Tuple[ClassifierModel, TrainHistory]:
    """Fine-tunes encoder and head jointly by mini-batch gradient descent.

    The input model is not modified. Unless ``validation`` is given or
    ``cfg.hold_out`` is False, ``data`` is split by ``cfg.split_ratio`` and the
    validation part is scored after every epoch. Results are a deterministic
    function of the model, the data and ``cfg``.

    Args:
        model (ClassifierModel): The initial model.
        data (Dataset): The training data; its scheme must equal the model's.
        cfg (TrainConfig, optional): Hyperparameters. Defaults to TrainConfig().
        validation (Dataset, optional): An explicit validation set. Defaults to None.

    Raises:
        DatasetError: On a scheme mismatch or empty training data.
        TrainingError: If a batch loss is not finite.

    Returns:
        Tuple[ClassifierModel, TrainHistory]: The trained model and its history.
    """
    from .evaluation import evaluate_model

    cfg = (cfg or TrainConfig()).validate()
    if data.scheme != model.scheme:
        raise DatasetError(
            f"scheme mismatch: data {data.scheme.name!r} {data.scheme.classes} vs "
            f"model {model.scheme.name!r} {model.scheme.classes}"
        )
    if validation is not None and validation.scheme != model.scheme:
        raise DatasetError("scheme mismatch between validation data and model")

    model = copy.deepcopy(model).validate()
    if validation is None and cfg.hold_out:
        train_set, validation = split_dataset(data, cfg.split_ratio, cfg.seed)
    else:
        train_set = data
    if len(train_set) == 0:
        raise DatasetError(f"no training instances in {data.name!r}")
    if cfg.learning_rate == 0:
        logger.warning("learning_rate is 0; parameters will not be updated")

    sequences = [model.encoder.tokenize(t, cfg.max_len) for t in train_set.texts]
    labels = torch.as_tensor(train_set.labels, dtype=torch.long)
    ids_of = train_set.ids
    optimizer = make_optimizer(cfg, model.parameters())
    history = TrainHistory()
    best_state = None

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        model.train()
        generator = torch.Generator().manual_seed(cfg.seed + epoch)
        order = torch.randperm(len(sequences), generator=generator).tolist()
        total = 0.0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            input_ids, attention_mask = pad_batch(model.encoder, [sequences[i] for i in idx])
            logits = model(input_ids, attention_mask)
            batch_loss = F.cross_entropy(logits, labels[idx])
            if not torch.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss {batch_loss.item()} at epoch {epoch}, batch {batch_no} "
                    f"(instances {[ids_of[i] for i in idx[:5]]}, learning rate "
                    f"{cfg.learning_rate})"
                )
            optimizer.zero_grad()
            batch_loss.backward()
            if cfg.learning_rate > 0:
                optimizer.step()
            total += batch_loss.item() * len(idx)

        macro = weighted = None
        if validation is not None and len(validation):
            report = evaluate_model(model, validation, max_len=cfg.max_len)
            macro, weighted = report.macro_f1, report.weighted_f1
        record = EpochRecord(
            epoch=epoch,
            train_loss=total / len(order),
            validation_macro_f1=macro,
            validation_weighted_f1=weighted,
            wall_time=round(time.perf_counter() - started, 3),
        )
        history.append(record)
        logger.info(
            "epoch %d/%d train_loss=%.4f validation_macro_f1=%s wall_time=%.1fs",
            epoch,
            cfg.epochs,
            record.train_loss,
            "n/a" if macro is None else f"{macro:.4f}",
            record.wall_time,
        )
        if cfg.select == "best" and history.best_epoch() == epoch:
            best_state = copy.deepcopy(model.state_dict())

    selected = cfg.epochs
    if cfg.select == "best" and best_state is not None:
        model.load_state_dict(best_state)
        selected = history.best_epoch()

    model.eval()
    model.provenance = {
        **model.provenance,
        "source_dataset": data.name,
        "language": data.language,
        "train_config": cfg.to_dict(),
        "seed": cfg.seed,
        "selected_epoch": selected,
    }
    return model, history
