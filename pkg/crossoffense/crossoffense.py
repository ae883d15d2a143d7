"""Main module."""

import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .classifier import *
from .common import *
from .config import *
from .corpus import *
from .encoder import *
from .evaluation import *
from .synthetic import *
from .transfer import *

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.ckpt"
EXPORT_FILE = "export.ckpt"
ENCODER_EXPORT_FILE = "encoder.ckpt"
CONFIG_FILE = "config.json"
HISTORY_FILE = "history.jsonl"
REPORT_FILE = "report.json"
EVALUATION_DIR = "evaluation"
BASELINE_DIR = "baseline"


class Experiment:
    """
    Runs the steps of one experiment config and keeps their artifacts in one
    run directory::

        <run_dir>/config.json
        <run_dir>/checkpoint.ckpt
        <run_dir>/history.jsonl
        <run_dir>/evaluation/{report.json, confusion.csv, confusion.png,
                              comparison.txt, comparison.csv}
        <run_dir>/baseline/report.json

    Args:
        config (ExperimentConfig | str): The config or a path to its JSON file.
        overrides (Sequence[str], optional): Dotted overrides applied when
            ``config`` is a path. Defaults to ().
    """

    def __init__(self, config, overrides: Sequence[str] = ()):
        if isinstance(config, (str, os.PathLike)):
            config = load_config(str(config), overrides)
        else:
            config.validate()
        self.config: ExperimentConfig = config

    @property
    def run_dir(self) -> str:
        return self.config.run_dir

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.run_dir, CHECKPOINT_FILE)

    @property
    def scheme(self) -> LabelScheme:
        return self.config.train_profile.scheme

    def load_train_data(self) -> Dataset:
        source = self.config.data.train
        return load_dataset(source.path, source.profile, lowercase=self.config.data.lowercase)

    def load_test_data(self) -> Dataset:
        source = self.config.data.test
        if source is None:
            raise ConfigError("this command needs data.test in the config")
        return load_dataset(source.path, source.profile, lowercase=self.config.data.lowercase)

    def initial_model(self, transfer: bool = False) -> ClassifierModel:
        """Builds the model training starts from.

        Args:
            transfer (bool, optional): Initialize from the configured source
                checkpoint. Defaults to False (fresh encoder and head).

        Returns:
            ClassifierModel: The model.
        """
        cfg = self.config
        if transfer:
            if cfg.transfer is None:
                raise ConfigError("the transfer command needs a transfer block in the config")
            return initialize_from_checkpoint(
                cfg.transfer.checkpoint,
                cfg.transfer.strategy,
                self.scheme,
                seed=cfg.seed,
                class_map=cfg.transfer.class_map,
                bias=cfg.head.bias,
            )
        encoder = build_encoder(cfg.encoder_config(), seed=cfg.seed)
        return build_classifier(encoder, self.scheme, seed=cfg.seed, bias=cfg.head.bias)

    def train(self, transfer: bool = False) -> Tuple[ClassifierModel, TrainHistory]:
        """Trains a model and writes config, checkpoint and history.

        Args:
            transfer (bool, optional): Start from the source checkpoint.
                Defaults to False.

        Returns:
            Tuple[ClassifierModel, TrainHistory]: The trained model and its history.
        """
        cfg = self.config
        if cfg.transfer is not None and not transfer:
            logger.warning("ignoring the transfer block; use the transfer command to apply it")
        data = self.load_train_data()
        model = self.initial_model(transfer)
        logger.info(
            "training %s on %s (%d instances, k=%d)", cfg.name, data.name, len(data), data.scheme.k
        )
        model, history = train(model, data, cfg.train)
        with staged_directory(self.run_dir) as staging:
            write_json(cfg.to_dict(), os.path.join(staging, CONFIG_FILE))
            ckpt = export_checkpoint(model, include_head=True, provenance={"experiment": cfg.name})
            save_checkpoint(ckpt, os.path.join(staging, CHECKPOINT_FILE))
            history.write_jsonl(os.path.join(staging, HISTORY_FILE))
        logger.info("wrote %s", self.run_dir)
        return model, history

    def transfer(self) -> Tuple[ClassifierModel, TrainHistory]:
        """Initializes from the source checkpoint per strategy, then trains."""
        return self.train(transfer=True)

    def load_model(self, checkpoint: Optional[str] = None) -> ClassifierModel:
        """Loads the model to evaluate or predict with.

        Looks in order at ``checkpoint``, the run directory's checkpoint, and
        the configured source checkpoint. A checkpoint without a head gets a
        zero head, which predicts the uniform distribution.

        Args:
            checkpoint (str, optional): An explicit checkpoint path. Defaults to None.

        Raises:
            CheckpointError: If no checkpoint is available.

        Returns:
            ClassifierModel: The model, labelled with the training profile's scheme.
        """
        cfg = self.config
        class_map = None
        path = checkpoint
        if path is None and os.path.isfile(self.checkpoint_path):
            path = self.checkpoint_path
        if path is None and cfg.transfer is not None:
            path = cfg.transfer.checkpoint
            if cfg.transfer.strategy == TransferStrategy.FULL.value:
                class_map = cfg.transfer.class_map
            else:
                return self._zero_head_model(load_checkpoint(path, include_head=False))
        if path is None:
            raise CheckpointError(
                f"no checkpoint: pass one explicitly or train into {self.run_dir} first"
            )
        ckpt = load_checkpoint(path)
        if not ckpt.has_head:
            return self._zero_head_model(ckpt)
        return import_full(ckpt, target_scheme=self.scheme, class_map=class_map)

    def export(
        self,
        out_path: Optional[str] = None,
        include_head: bool = True,
        checkpoint: Optional[str] = None,
    ) -> str:
        """Writes the loaded model as a standalone checkpoint.

        Args:
            out_path (str, optional): The output path. Defaults to
                ``<run_dir>/export.ckpt``, or ``<run_dir>/encoder.ckpt`` without
                the head.
            include_head (bool, optional): Store the head and its label scheme.
                Defaults to True.
            checkpoint (str, optional): The checkpoint to export. Defaults to
                the one ``load_model`` finds.

        Returns:
            str: The absolute output path.
        """
        model = self.load_model(checkpoint)
        if out_path is None:
            name = EXPORT_FILE if include_head else ENCODER_EXPORT_FILE
            out_path = os.path.join(self.run_dir, name)
        ckpt = export_checkpoint(
            model, include_head=include_head, provenance={"exported_from": self.config.name}
        )
        path = save_checkpoint(ckpt, out_path)
        kind = "full" if include_head else "encoder-only"
        logger.info("exported %s checkpoint to %s", kind, path)
        return path

    def _zero_head_model(self, ckpt: Checkpoint) -> ClassifierModel:
        logger.warning("checkpoint has no head; predicting with a zero head (uniform output)")
        model = import_encoder_only(ckpt, self.scheme, seed=self.config.seed)
        model.head = zero_head(model.encoder.hidden_size, self.scheme.k, bias=self.config.head.bias)
        return model

    def evaluate(self, checkpoint: Optional[str] = None) -> EvaluationReport:
        """Evaluates on the test data and writes report, heat map and comparison table.

        Args:
            checkpoint (str, optional): The checkpoint to evaluate. Defaults to
                the run directory's.

        Returns:
            EvaluationReport: The report.
        """
        cfg = self.config
        test = self.load_test_data()
        model = self.load_model(checkpoint)
        report = evaluate_model(
            model,
            test,
            batch_size=cfg.evaluation.batch_size,
            label=cfg.name,
            max_len=cfg.train.max_len,
        )
        logger.info(
            "%s on %s: macro F1 %.4f, weighted F1 %.4f",
            cfg.name,
            test.name,
            report.macro_f1,
            report.weighted_f1,
        )
        reports = [report]
        baseline_path = os.path.join(self.run_dir, BASELINE_DIR, REPORT_FILE)
        if os.path.isfile(baseline_path):
            reports.append(EvaluationReport.read_json(baseline_path))
        with staged_directory(os.path.join(self.run_dir, EVALUATION_DIR)) as staging:
            report.write_json(os.path.join(staging, REPORT_FILE))
            emit_heatmap(
                report.matrix,
                os.path.join(staging, "confusion.png"),
                normalize=cfg.evaluation.normalize_heatmap,
                title=f"{cfg.name} on {test.name}",
            )
            emit_comparison(
                reports,
                cfg.reference_rows,
                cfg.language,
                os.path.join(staging, "comparison.txt"),
            )
        return report

    def baseline(self) -> EvaluationReport:
        """Scores the majority-class baseline of the training data on the test data."""
        report = majority_baseline(self.load_train_data(), self.load_test_data())
        with staged_directory(os.path.join(self.run_dir, BASELINE_DIR)) as staging:
            report.write_json(os.path.join(staging, REPORT_FILE))
        return report

    def predict(
        self, texts: Sequence[str], checkpoint: Optional[str] = None
    ) -> List[Tuple[int, str, np.ndarray]]:
        """Predicts class distributions for raw texts.

        Texts are normalized like the training data.

        Args:
            texts (Sequence[str]): The texts.
            checkpoint (str, optional): The checkpoint. Defaults to the run
                directory's, then the configured source checkpoint.

        Returns:
            List[Tuple[int, str, np.ndarray]]: Class index, class name and
                probabilities per text.
        """
        cfg = self.config
        model = self.load_model(checkpoint)
        texts = [normalize_text(t, lowercase=cfg.data.lowercase) for t in texts]
        proba = predict_proba_batch(
            model, texts, batch_size=cfg.evaluation.batch_size, max_len=cfg.train.max_len
        )
        labels = np.argmax(proba, axis=1) if len(texts) else []
        return [(int(c), model.scheme.classes[int(c)], p) for c, p in zip(labels, proba)]


def report_runs(
    run_dirs: Sequence[str],
    language: str = "",
    out_path: Optional[str] = None,
    references: bool = True,
) -> pd.DataFrame:
    """Builds a comparison table across run directories.

    Every run's evaluation report is a computed row; baseline reports are
    added once per distinct baseline.

    Args:
        run_dirs (Sequence[str]): Run directories holding ``evaluation/report.json``.
        language (str, optional): The language section. Defaults to "".
        out_path (str, optional): Write ``<stem>.txt`` and ``<stem>.csv`` here.
            Defaults to None.
        references (bool, optional): Add the published rows for ``language``.
            Defaults to True.

    Raises:
        ConfigError: If a run directory has no evaluation report.

    Returns:
        pd.DataFrame: The table.
    """
    reports = []
    baselines = {}
    for run_dir in run_dirs:
        path = os.path.join(run_dir, EVALUATION_DIR, REPORT_FILE)
        if not os.path.isfile(path):
            raise ConfigError(f"no evaluation report in {run_dir}; run evaluate first")
        report = EvaluationReport.read_json(path)
        if not report.label:
            report = EvaluationReport.from_dict({**report.to_dict(), "label": os.path.basename(run_dir)})
        reports.append(report)
        baseline_path = os.path.join(run_dir, BASELINE_DIR, REPORT_FILE)
        if os.path.isfile(baseline_path):
            baseline = EvaluationReport.read_json(baseline_path)
            baselines.setdefault((baseline.macro_f1, baseline.weighted_f1), baseline)
    reports.extend(baselines.values())
    rows = REFERENCE_ROWS.get(canonical_language(language), []) if references else []
    if out_path:
        emit_comparison(reports, rows, language, out_path)
    return comparison_table(reports, rows, language)
