#!/usr/bin/env python

"""Tests for `crossoffense.evaluation`."""

import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import pandas as pd
from hypothesis import given, settings
from hypothesis import strategies as st

from crossoffense.corpus import LabelScheme
from crossoffense.evaluation import (
    REFERENCE_ROWS,
    ConfusionMatrix,
    EvaluationReport,
    ReferenceRow,
    comparison_table,
    confusion,
    emit_comparison,
    emit_heatmap,
    evaluate,
    evaluate_model,
    macro_f1,
    sort_key,
    weighted_f1,
)
from crossoffense.synthetic import make_synthetic_dataset

from .helpers import BINARY, TERNARY, tiny_model

SCHEMES = {k: LabelScheme(f"k{k}", tuple(f"c{i}" for i in range(k))) for k in (2, 3, 5)}


def oracle_scores(gold, pred, k):
    """Per-class F1 by direct counting, then macro and support-weighted means."""
    f1s, supports = [], []
    for c in range(k):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        f1s.append(f1)
        supports.append(tp + fn)
    n = len(gold)
    weighted = sum(f * s for f, s in zip(f1s, supports)) / n if n else 0.0
    return sum(f1s) / k, weighted


@st.composite
def labelled_pairs(draw):
    k = draw(st.sampled_from([2, 3, 5]))
    n = draw(st.integers(1, 200))
    labels = st.lists(st.integers(0, k - 1), min_size=n, max_size=n)
    return k, draw(labels), draw(labels)


class TestMetrics(unittest.TestCase):
    def test_worked_example(self):
        report = evaluate([1, 1, 1, 0], [1, 1, 0, 0], BINARY)
        self.assertAlmostEqual(report.macro_f1, 0.7333, places=4)
        self.assertAlmostEqual(report.weighted_f1, 0.7667, places=4)
        self.assertEqual(report.matrix.counts.tolist(), [[1, 0], [1, 2]])
        self.assertEqual(report.n, 4)

    def test_constant_prediction_baseline(self):
        report = evaluate([0, 0, 1, 1], [0, 0, 0, 0], BINARY)
        self.assertAlmostEqual(report.macro_f1, 1 / 3, places=12)
        self.assertAlmostEqual(report.f1[1], 0.0)

    def test_perfect_prediction(self):
        gold = [0, 1, 2, 2, 1]
        report = evaluate(gold, gold, TERNARY)
        self.assertEqual((report.macro_f1, report.weighted_f1), (1.0, 1.0))

    def test_missing_class_scores_zero(self):
        report = evaluate([0, 0, 1], [0, 0, 1], TERNARY)
        self.assertEqual(report.f1[2], 0.0)
        self.assertAlmostEqual(report.macro_f1, 2 / 3)
        self.assertAlmostEqual(report.weighted_f1, 1.0)

    def test_empty_input_warns(self):
        with self.assertLogs("crossoffense.evaluation", level="WARNING"):
            report = evaluate([], [], BINARY)
        self.assertEqual((report.macro_f1, report.weighted_f1, report.n), (0.0, 0.0, 0))

    def test_invalid_input(self):
        with self.assertRaises(ValueError):
            confusion([0, 1], [0], BINARY)
        with self.assertRaises(ValueError):
            confusion([0, 2], [0, 1], BINARY)
        with self.assertRaises(ValueError):
            confusion([0, 1], [0, -1], BINARY)

    @settings(max_examples=1000, deadline=None)
    @given(labelled_pairs())
    def test_matches_direct_counting(self, case):
        k, gold, pred = case
        m = confusion(gold, pred, SCHEMES[k])
        self.assertEqual(m.total, len(gold))
        expected_macro, expected_weighted = oracle_scores(gold, pred, k)
        self.assertLessEqual(abs(macro_f1(m) - expected_macro), 1e-12)
        self.assertLessEqual(abs(weighted_f1(m) - expected_weighted), 1e-12)
        self.assertTrue(0.0 <= macro_f1(m) <= 1.0)

    @settings(max_examples=300, deadline=None)
    @given(labelled_pairs(), st.randoms(use_true_random=False))
    def test_class_relabelling_keeps_scores(self, case, rng):
        k, gold, pred = case
        perm = list(range(k))
        rng.shuffle(perm)
        m = confusion(gold, pred, SCHEMES[k])
        relabelled = confusion([perm[g] for g in gold], [perm[p] for p in pred], SCHEMES[k])
        for c in range(k):
            self.assertAlmostEqual(relabelled.f1()[perm[c]], m.f1()[c], places=12)
        self.assertLessEqual(abs(macro_f1(relabelled) - macro_f1(m)), 1e-12)
        self.assertLessEqual(abs(weighted_f1(relabelled) - weighted_f1(m)), 1e-12)

    def test_normalized_rows(self):
        m = ConfusionMatrix(np.array([[2, 2, 0], [0, 0, 0], [1, 0, 3]]), TERNARY)
        normalized = m.normalized()
        np.testing.assert_allclose(normalized.sum(axis=1), [1.0, 0.0, 1.0])
        frame = m.to_frame(normalize=True)
        self.assertEqual(list(frame.index), list(TERNARY.classes))
        self.assertEqual(frame.index.name, "gold")
        self.assertEqual(frame.columns.name, "predicted")

    def test_report_json(self):
        report = evaluate([0, 1, 2, 1], [0, 2, 2, 1], TERNARY, label="run", provenance={"seed": 1})
        with tempfile.TemporaryDirectory() as tmp:
            path = report.write_json(os.path.join(tmp, "report.json"))
            again = EvaluationReport.read_json(path)
        self.assertEqual(again.label, "run")
        self.assertEqual(again.macro_f1, report.macro_f1)
        self.assertEqual(again.matrix.counts.tolist(), report.matrix.counts.tolist())
        self.assertEqual(again.provenance, {"seed": 1})


class TestEvaluateModel(unittest.TestCase):
    def test_scores_a_model(self):
        data = make_synthetic_dataset(40, seed=2)
        report = evaluate_model(tiny_model(), data, batch_size=16, label="tiny")
        self.assertEqual(report.n, 40)
        self.assertEqual(report.label, "tiny")
        self.assertEqual(report.provenance["dataset"], data.name)

    def test_scheme_mismatch(self):
        data = make_synthetic_dataset(9, scheme_kind="aggression")
        with self.assertRaises(ValueError):
            evaluate_model(tiny_model(), data)


class TestHeatmap(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.matrix = confusion([0, 1, 2, 2], [0, 2, 2, 1], TERNARY)

    def tearDown(self):
        self.tmp.cleanup()

    def test_writes_csv_and_image(self):
        paths = emit_heatmap(self.matrix, os.path.join(self.tmp.name, "confusion.png"))
        self.assertTrue(os.path.isfile(paths["csv"]))
        self.assertTrue(os.path.isfile(paths["image"]))
        frame = pd.read_csv(paths["csv"], index_col=0)
        self.assertEqual(frame.values.tolist(), self.matrix.counts.tolist())

    def test_normalized_heatmap(self):
        paths = emit_heatmap(
            self.matrix, os.path.join(self.tmp.name, "normalized.png"), normalize=True, title="t"
        )
        self.assertTrue(os.path.isfile(paths["image"]))
        frame = pd.read_csv(paths["csv"], index_col=0)
        np.testing.assert_allclose(frame.values, self.matrix.normalized())

    def test_rendering_failure_keeps_csv(self):
        with mock.patch(
            "crossoffense.evaluation._render_heatmap", side_effect=RuntimeError("no backend")
        ):
            with self.assertLogs("crossoffense.evaluation", level="ERROR"):
                paths = emit_heatmap(self.matrix, os.path.join(self.tmp.name, "confusion"))
        self.assertIsNone(paths["image"])
        self.assertTrue(os.path.isfile(paths["csv"]))


class TestComparison(unittest.TestCase):
    def test_sort_keys(self):
        self.assertEqual(sort_key("bengali"), "macro_f1")
        self.assertEqual(sort_key("hi"), "weighted_f1")
        self.assertEqual(sort_key("Spanish"), "weighted_f1")
        self.assertEqual(sort_key("klingon"), "macro_f1")

    def test_hindi_references_in_published_order(self):
        table = comparison_table([], REFERENCE_ROWS["hindi"], "hindi")
        self.assertEqual(table["weighted_f1"].tolist(), sorted(table["weighted_f1"], reverse=True))
        self.assertEqual(table["weighted_f1"].iloc[0], 0.8580)
        self.assertEqual(set(table["kind"]), {"reference"})

    def test_missing_values_sort_last(self):
        table = comparison_table([], REFERENCE_ROWS["bengali"], "bengali")
        self.assertTrue(table["macro_f1"].notna().all())
        spanish = comparison_table([], REFERENCE_ROWS["spanish"], "spanish")
        self.assertTrue(spanish["weighted_f1"].notna().all())
        macro_sorted = comparison_table([], REFERENCE_ROWS["spanish"], "bengali")
        self.assertTrue(macro_sorted["macro_f1"].iloc[-2:].isna().all())

    def test_computed_rows_and_stable_ties(self):
        a = evaluate([0, 1], [0, 1], BINARY, label="first")
        b = evaluate([0, 1], [0, 1], BINARY, label="second")
        refs = [ReferenceRow("hindi", "published", 0.5, 0.5)]
        table = comparison_table([a, b], refs, "hindi")
        self.assertEqual(table["model"].tolist(), ["first", "second", "published"])
        self.assertEqual(table["kind"].tolist(), ["computed", "computed", "reference"])

    def test_emit_comparison(self):
        report = evaluate([0, 1, 1], [0, 1, 0], BINARY, label="ours")
        with tempfile.TemporaryDirectory() as tmp:
            paths = emit_comparison(
                [report], REFERENCE_ROWS["spanish"], "es", os.path.join(tmp, "comparison.txt")
            )
            with open(paths["text"], encoding="utf-8") as f:
                text = f.read()
            frame = pd.read_csv(paths["csv"])
        self.assertIn("ours", text)
        self.assertIn("weighted f1", text)
        self.assertEqual(len(frame), 1 + len(REFERENCE_ROWS["spanish"]))


if __name__ == "__main__":
    unittest.main()
