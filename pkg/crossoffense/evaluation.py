"""This module contains the evaluation metrics (per-class precision, recall and
F1, macro F1, weighted F1), confusion matrices, heat-map emission, and the
per-language comparison tables.

A class whose precision and recall are both zero gets F1 = 0, as in the
scoring tools of the shared tasks.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from .common import read_json, write_json
from .corpus import Dataset, LabelScheme

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts of (gold, predicted) label pairs.

    Attributes:
        counts (np.ndarray): k x k int64 counts; rows are gold classes,
            columns predicted classes.
        scheme (LabelScheme): The label scheme.
    """

    counts: np.ndarray
    scheme: LabelScheme

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.scheme.k, self.scheme.k):
            raise ValueError(
                f"confusion counts must be {self.scheme.k}x{self.scheme.k}, got {counts.shape}"
            )
        if (counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        """Gold instances per class (row sums)."""
        return self.counts.sum(axis=1)

    @property
    def predicted(self) -> np.ndarray:
        """Predicted instances per class (column sums)."""
        return self.counts.sum(axis=0)

    def scores(self):
        """Per-class precision, recall and F1 as three float64 arrays."""
        k = self.scheme.k
        if self.total == 0:
            return np.zeros(k), np.zeros(k), np.zeros(k)
        # expand the counts back into (gold, predicted) pairs
        pairs = np.repeat(np.arange(k * k), self.counts.ravel())
        gold, pred = np.divmod(pairs, k)
        precision, recall, f1, _ = precision_recall_fscore_support(
            gold, pred, labels=list(range(k)), zero_division=0
        )
        return (
            precision.astype(np.float64),
            recall.astype(np.float64),
            f1.astype(np.float64),
        )

    def precision(self) -> np.ndarray:
        return self.scores()[0]

    def recall(self) -> np.ndarray:
        return self.scores()[1]

    def f1(self) -> np.ndarray:
        return self.scores()[2]

    def normalized(self) -> np.ndarray:
        """Row-normalized counts; rows without gold instances stay zero."""
        return _safe_divide(self.counts.astype(np.float64), self.support[:, None])

    def to_frame(self, normalize: bool = False) -> pd.DataFrame:
        """Returns the matrix as a DataFrame labelled with class names."""
        values = self.normalized() if normalize else self.counts
        df = pd.DataFrame(
            values,
            index=pd.Index(self.scheme.classes, name="gold"),
            columns=pd.Index(self.scheme.classes, name="predicted"),
        )
        return df


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.broadcast_to(np.asarray(den, dtype=np.float64), num.shape)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def confusion(gold: Sequence[int], pred: Sequence[int], scheme: LabelScheme) -> ConfusionMatrix:
    """Counts (gold, predicted) pairs.

    Args:
        gold (Sequence[int]): Gold class indices.
        pred (Sequence[int]): Predicted class indices.
        scheme (LabelScheme): The label scheme.

    Raises:
        ValueError: If the lengths differ or a label is out of range.

    Returns:
        ConfusionMatrix: ``counts[g][p] = |{i : gold_i = g, pred_i = p}|``.
    """
    gold = np.asarray(gold, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if gold.shape != pred.shape:
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted labels")
    k = scheme.k
    for name, labels in (("gold", gold), ("predicted", pred)):
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"invalid {name} label for scheme {scheme.name!r} (k={k})")
    if gold.size == 0:
        logger.warning("confusion matrix built from empty label lists; scores will be 0")
        counts = np.zeros((k, k), dtype=np.int64)
    else:
        counts = confusion_matrix(gold, pred, labels=list(range(k)))
    return ConfusionMatrix(counts, scheme)


def macro_f1(m: ConfusionMatrix) -> float:
    """Unweighted mean of the per-class F1 scores."""
    return float(m.f1().mean())


def weighted_f1(m: ConfusionMatrix) -> float:
    """Mean of the per-class F1 scores weighted by gold support."""
    if m.total == 0:
        return 0.0
    return float((m.support / m.total * m.f1()).sum())


@dataclass(frozen=True)
class EvaluationReport:
    """A confusion matrix with its per-class and averaged scores."""

    matrix: ConfusionMatrix
    precision: tuple
    recall: tuple
    f1: tuple
    macro_f1: float
    weighted_f1: float
    n: int
    label: str = ""
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def scheme(self) -> LabelScheme:
        return self.matrix.scheme

    def per_class(self) -> pd.DataFrame:
        """Per-class precision, recall, F1 and support."""
        return pd.DataFrame(
            {
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "support": self.matrix.support,
            },
            index=pd.Index(self.scheme.classes, name="class"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "n": self.n,
            "scheme": self.scheme.to_dict(),
            "confusion": self.matrix.counts.tolist(),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "EvaluationReport":
        matrix = ConfusionMatrix(np.array(d["confusion"]), LabelScheme.from_dict(d["scheme"]))
        return _report(matrix, d.get("label", ""), d.get("provenance") or {})

    def write_json(self, filepath: str) -> str:
        return write_json(self.to_dict(), filepath)

    @classmethod
    def read_json(cls, filepath: str) -> "EvaluationReport":
        return cls.from_dict(read_json(filepath))


def _report(matrix: ConfusionMatrix, label: str, provenance: Dict[str, Any]) -> EvaluationReport:
    precision, recall, f1 = matrix.scores()
    return EvaluationReport(
        matrix=matrix,
        precision=tuple(float(x) for x in precision),
        recall=tuple(float(x) for x in recall),
        f1=tuple(float(x) for x in f1),
        macro_f1=macro_f1(matrix),
        weighted_f1=weighted_f1(matrix),
        n=matrix.total,
        label=label,
        provenance=dict(provenance),
    )


def evaluate(
    gold: Sequence[int],
    pred: Sequence[int],
    scheme: LabelScheme,
    label: str = "",
    provenance: Optional[Dict[str, Any]] = None,
) -> EvaluationReport:
    """Scores predicted labels against gold labels.

    Args:
        gold (Sequence[int]): Gold class indices.
        pred (Sequence[int]): Predicted class indices.
        scheme (LabelScheme): The label scheme.
        label (str, optional): The model/run label shown in tables. Defaults to "".
        provenance (dict, optional): Extra metadata. Defaults to None.

    Returns:
        EvaluationReport: The report.
    """
    return _report(confusion(gold, pred, scheme), label, provenance or {})


def evaluate_model(
    model,
    dataset: Dataset,
    batch_size: int = 32,
    label: str = "",
    max_len: Optional[int] = None,
) -> EvaluationReport:
    """Predicts every instance of a dataset and scores the predictions.

    Args:
        model (ClassifierModel): The model.
        dataset (Dataset): The evaluation data; its scheme must match the model's.
        batch_size (int, optional): Texts per forward pass. Defaults to 32.
        label (str, optional): The model/run label. Defaults to "".
        max_len (int, optional): The maximum sequence length. Defaults to the
            encoder's.

    Returns:
        EvaluationReport: The report.
    """
    from .classifier import predict_batch

    if dataset.scheme.k != model.scheme.k:
        raise ValueError(
            f"scheme mismatch: dataset has k={dataset.scheme.k}, model has k={model.scheme.k}"
        )
    pred = predict_batch(model, dataset.texts, batch_size=batch_size, max_len=max_len)
    return evaluate(
        dataset.labels,
        pred,
        dataset.scheme,
        label=label,
        provenance={"dataset": dataset.name, "model": dict(model.provenance)},
    )


def emit_heatmap(
    m: ConfusionMatrix,
    out_path: str,
    normalize: bool = False,
    cmap: str = "Blues",
    title: Optional[str] = None,
    figsize=(6.4, 4.8),
) -> Dict[str, Optional[str]]:
    """Writes a confusion matrix as CSV and as a rendered heat map.

    The CSV is written first; a rendering failure is logged and leaves the CSV
    in place.

    Args:
        m (ConfusionMatrix): The matrix.
        out_path (str): The output path; its extension is replaced by ".csv"
            and ".png".
        normalize (bool, optional): Show row-normalized values. Defaults to False.
        cmap (str, optional): The matplotlib colormap. Defaults to "Blues".
        title (str, optional): The plot title. Defaults to None.
        figsize (tuple, optional): Figure size. Defaults to (6.4, 4.8).

    Returns:
        Dict[str, Optional[str]]: Paths under "csv" and "image" (None when
            rendering failed).
    """
    stem = os.path.splitext(out_path)[0]
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    csv_path = stem + ".csv"
    m.to_frame(normalize=normalize).to_csv(csv_path, encoding="utf-8")

    image_path = stem + ".png"
    try:
        _render_heatmap(m, image_path, normalize, cmap, title, figsize)
    except Exception as e:
        logger.error("heat map rendering failed, keeping %s: %s", csv_path, e)
        image_path = None
    return {"csv": csv_path, "image": image_path}


def _render_heatmap(m, image_path, normalize, cmap, title, figsize):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import seaborn as sns

    frame = m.to_frame(normalize=normalize)
    vmax = 1.0 if normalize else max(int(m.counts.max()), 1)
    fig, ax = plt.subplots(figsize=figsize)
    try:
        sns.heatmap(
            frame,
            annot=True,
            fmt=".2f" if normalize else "d",
            cmap=cmap,
            vmin=0.0,
            vmax=vmax,
            cbar_kws={"label": "Share of gold class" if normalize else "Instances"},
            ax=ax,
        )
        ax.set_xlabel("Predicted")
        ax.set_ylabel("Gold")
        plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(image_path, dpi=150)
    finally:
        plt.close(fig)


@dataclass(frozen=True)
class ReferenceRow:
    """A published score row shown next to computed results."""

    language: str
    model: str
    macro_f1: Optional[float] = None
    weighted_f1: Optional[float] = None


REFERENCE_ROWS: Dict[str, List[ReferenceRow]] = {
    "bengali": [
        ReferenceRow("bengali", "XLM-R with English transfer, reported", 0.8415, 0.8423),
        ReferenceRow("bengali", "TRAC-2 best: bagged BERT", 0.8219, None),
        ReferenceRow("bengali", "BERT-m with English transfer, reported", 0.8197, 0.8231),
        ReferenceRow("bengali", "XLM-R, reported", 0.8142, 0.8188),
        ReferenceRow("bengali", "BERT-m, reported", 0.8132, 0.8157),
        ReferenceRow("bengali", "Majority baseline, reported", 0.2498, 0.4491),
    ],
    "hindi": [
        ReferenceRow("hindi", "XLM-R with English transfer, reported", 0.8568, 0.8580),
        ReferenceRow("hindi", "BERT-m with English transfer, reported", 0.8211, 0.8220),
        ReferenceRow("hindi", "HASOC 2019 best: CNN", 0.8149, 0.8202),
        ReferenceRow("hindi", "XLM-R, reported", 0.8061, 0.8072),
        ReferenceRow("hindi", "BERT-m, reported", 0.8025, 0.8030),
        ReferenceRow("hindi", "Majority baseline, reported", 0.3510, 0.3798),
    ],
    "spanish": [
        ReferenceRow("spanish", "XLM-R with English transfer, reported", 0.7513, 0.7591),
        ReferenceRow("spanish", "BERT-m with English transfer, reported", 0.7319, 0.7385),
        ReferenceRow("spanish", "HatEval 2019 top system: SVM (1)", None, 0.7300),
        ReferenceRow("spanish", "HatEval 2019 top system: SVM (2)", None, 0.7300),
        ReferenceRow("spanish", "XLM-R, reported", 0.7224, 0.7265),
        ReferenceRow("spanish", "BERT-m, reported", 0.7215, 0.7234),
        ReferenceRow("spanish", "Majority baseline, reported", 0.3700, 0.4348),
    ],
}

SORT_KEYS = {"bengali": "macro_f1", "hindi": "weighted_f1", "spanish": "weighted_f1"}
LANGUAGE_ALIASES = {"bn": "bengali", "hi": "hindi", "es": "spanish", "en": "english"}


def canonical_language(language: str) -> str:
    """Maps a language code or name to its lowercase name."""
    language = language.strip().lower()
    return LANGUAGE_ALIASES.get(language, language)


def sort_key(language: str) -> str:
    """The score column tables are ordered by: macro F1 for Bengali, weighted
    F1 for Hindi and Spanish, macro F1 otherwise."""
    return SORT_KEYS.get(canonical_language(language), "macro_f1")


def comparison_table(
    reports: Sequence[EvaluationReport],
    references: Optional[Sequence[ReferenceRow]] = None,
    language: str = "",
) -> pd.DataFrame:
    """Builds a comparison table of computed and reference rows.

    Args:
        reports (Sequence[EvaluationReport]): Computed reports.
        references (Sequence[ReferenceRow], optional): Reference rows. Defaults to None.
        language (str, optional): The language section, selecting the sort key.
            Defaults to "".

    Returns:
        pd.DataFrame: Columns model, macro_f1, weighted_f1, kind; sorted in
            descending order of the language's key, missing scores last.
    """
    rows = [
        {"model": r.label or f"run {i + 1}", "macro_f1": r.macro_f1,
         "weighted_f1": r.weighted_f1, "kind": "computed"}
        for i, r in enumerate(reports)
    ]
    rows += [
        {"model": ref.model, "macro_f1": ref.macro_f1,
         "weighted_f1": ref.weighted_f1, "kind": "reference"}
        for ref in references or ()
    ]
    df = pd.DataFrame(rows, columns=["model", "macro_f1", "weighted_f1", "kind"])
    df[["macro_f1", "weighted_f1"]] = df[["macro_f1", "weighted_f1"]].astype(float)
    key = sort_key(language)
    df = df.sort_values(key, ascending=False, na_position="last", kind="mergesort")
    return df.reset_index(drop=True)


def emit_comparison(
    reports: Sequence[EvaluationReport],
    references: Optional[Sequence[ReferenceRow]] = None,
    language: str = "",
    out_path: str = "comparison.txt",
) -> Dict[str, str]:
    """Writes a comparison table as aligned plain text and as CSV.

    Args:
        reports (Sequence[EvaluationReport]): Computed reports of one language section.
        references (Sequence[ReferenceRow], optional): Reference rows. Defaults to None.
        language (str, optional): The language section. Defaults to "".
        out_path (str, optional): The output path; its extension is replaced by
            ".txt" and ".csv". Defaults to "comparison.txt".

    Returns:
        Dict[str, str]: Paths under "text" and "csv".
    """
    df = comparison_table(reports, references, language)
    stem = os.path.splitext(out_path)[0]
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    text_path, csv_path = stem + ".txt", stem + ".csv"
    header = f"Results ordered by {sort_key(language).replace('_', ' ')}"
    if language:
        header += f" ({canonical_language(language)})"
    body = df.to_string(index=False, na_rep="", float_format=lambda x: f"{x:.4f}")
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(header + "\n" + body + "\n")
    df.to_csv(csv_path, index=False, float_format="%.4f", encoding="utf-8")
    return {"text": text_path, "csv": csv_path}
