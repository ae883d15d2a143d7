#!/usr/bin/env python

"""Tests for the `crossoffense` console script."""

import json
import os
import tempfile
import unittest

from click.testing import CliRunner

from crossoffense import cli
from crossoffense.synthetic import write_synthetic_corpus
from crossoffense.transfer import read_checkpoint_header

from .helpers import TINY, write_text


def json_line(output):
    """The last line of the output that is a JSON object."""
    for line in reversed(output.strip().splitlines()):
        if line.startswith("{"):
            return json.loads(line)
    raise AssertionError(f"no JSON line in {output!r}")


def split_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    header = read_checkpoint_header(path)
    header["provenance"].pop("created_at")
    length = int.from_bytes(data[8:12], "little")
    return header, data[12 + length :]


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = self.tmp.name
        self.paths = write_synthetic_corpus(
            os.path.join(self.root, "data"), n_source=60, n_target=20, n_test=30, seed=1
        )
        self.runner = CliRunner()

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, name, train_split, test_split, profile, **extra):
        d = {
            "name": name,
            "seed": 0,
            "output_dir": os.path.join(self.root, "runs", name),
            "data": {
                "train": {"path": self.paths[train_split], "profile": profile},
                "test": {"path": self.paths[test_split], "profile": profile},
            },
            "encoder": TINY.to_dict(),
            "train": {"learning_rate": 0.01, "epochs": 2, "batch_size": 8, "max_len": 16},
            "evaluation": {"language": "hindi"},
        }
        d.update(extra)
        return write_text(self.root, f"{name}.json", json.dumps(d))

    def source_config(self):
        return self.config("source", "source-train", "target-test", "synthetic-offense")

    def invoke(self, *args, input=None):
        return self.runner.invoke(cli.main, ["-q", *args], input=input)

    def train_source(self):
        result = self.invoke("train", self.source_config())
        self.assertEqual(result.exit_code, 0, result.output)
        return os.path.join(self.root, "runs", "source", "checkpoint.ckpt")

    def test_train_writes_run_directory(self):
        self.train_source()
        run = os.path.join(self.root, "runs", "source")
        self.assertEqual(
            sorted(os.listdir(run)), ["checkpoint.ckpt", "config.json", "history.jsonl"]
        )
        with open(os.path.join(run, "history.jsonl"), encoding="utf-8") as f:
            self.assertEqual(len(f.readlines()), 2)

    def test_training_is_deterministic(self):
        config = self.source_config()
        runs = []
        for i in range(2):
            out = os.path.join(self.root, "repeat", str(i))
            result = self.invoke("train", config, "--set", f"output_dir={out}")
            self.assertEqual(result.exit_code, 0, result.output)
            runs.append(out)
        histories = []
        for out in runs:
            with open(os.path.join(out, "history.jsonl"), encoding="utf-8") as f:
                records = [json.loads(line) for line in f]
            for record in records:
                record.pop("wall_time")
            histories.append(records)
        self.assertEqual(histories[0], histories[1])
        a = split_checkpoint(os.path.join(runs[0], "checkpoint.ckpt"))
        b = split_checkpoint(os.path.join(runs[1], "checkpoint.ckpt"))
        self.assertEqual(a, b)

    def test_evaluate_baseline_and_report(self):
        config = self.source_config()
        self.train_source()
        result = self.invoke("baseline", config)
        self.assertEqual(result.exit_code, 0, result.output)
        result = self.invoke("evaluate", config)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("macro F1", result.output)
        evaluation = os.path.join(self.root, "runs", "source", "evaluation")
        for name in ("report.json", "confusion.csv", "confusion.png", "comparison.txt", "comparison.csv"):
            self.assertTrue(os.path.isfile(os.path.join(evaluation, name)), name)
        with open(os.path.join(evaluation, "comparison.txt"), encoding="utf-8") as f:
            text = f.read()
        self.assertIn("majority baseline", text)
        self.assertIn("HASOC 2019 best", text)

        out = os.path.join(self.root, "tables", "hindi.txt")
        result = self.invoke(
            "report", os.path.join(self.root, "runs", "source"), "--language", "hi", "--out", out
        )
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("source", result.output)
        self.assertTrue(os.path.isfile(os.path.join(self.root, "tables", "hindi.csv")))

    def test_transfer_encoder_only_to_three_classes(self):
        source = self.train_source()
        config = self.config(
            "bengali-like",
            "target-aggression-train",
            "target-aggression-test",
            "synthetic-aggression",
            transfer={"checkpoint": source, "strategy": "encoder_only"},
        )
        result = self.invoke("transfer", config)
        self.assertEqual(result.exit_code, 0, result.output)
        header = read_checkpoint_header(
            os.path.join(self.root, "runs", "bengali-like", "checkpoint.ckpt")
        )
        self.assertEqual(len(header["scheme"]["classes"]), 3)
        self.assertEqual(header["provenance"]["strategy"], "encoder_only")

    def test_predict_with_zero_head(self):
        source = self.train_source()
        config = self.config(
            "untrained",
            "target-aggression-train",
            "target-aggression-test",
            "synthetic-aggression",
            transfer={"checkpoint": source, "strategy": "encoder_only"},
        )
        result = self.invoke("predict", config, input="b1 b2 xx1\nb3 yy4\n")
        self.assertEqual(result.exit_code, 0, result.output)
        lines = [line for line in result.output.splitlines() if line.count("\t") == 2]
        self.assertEqual(len(lines), 2)
        for line in lines:
            label, name, proba = line.split("\t")
            self.assertEqual((label, name), ("0", "non aggressive"))
            self.assertEqual(proba, "0.333333,0.333333,0.333333")

    def test_predict_from_file(self):
        config = self.source_config()
        self.train_source()
        path = write_text(self.root, "texts.txt", "a1 a2 xx3\n\na4 a5\n")
        result = self.invoke("predict", config, "--input", path)
        self.assertEqual(result.exit_code, 0, result.output)
        lines = [line for line in result.output.splitlines() if line.count("\t") == 2]
        self.assertEqual(len(lines), 3)
        for line in lines:
            probabilities = [float(p) for p in line.split("\t")[2].split(",")]
            self.assertAlmostEqual(sum(probabilities), 1.0, places=5)

    def test_predict_keeps_blank_lines_aligned(self):
        config = self.source_config()
        self.train_source()
        result = self.invoke("predict", config, input="a1 a2\n\na1 a2\n")
        self.assertEqual(result.exit_code, 0, result.output)
        lines = [line for line in result.output.splitlines() if line.count("\t") == 2]
        self.assertEqual(len(lines), 3)
        self.assertEqual(lines[0], lines[2])
        alone = self.invoke("predict", config, input="\n")
        self.assertEqual(alone.exit_code, 0, alone.output)
        self.assertEqual(alone.output.strip().splitlines()[-1], lines[1])

    def test_export_full_and_encoder_only(self):
        config = self.source_config()
        source = self.train_source()
        result = self.invoke("export", config)
        self.assertEqual(result.exit_code, 0, result.output)
        path = result.output.strip().splitlines()[-1]
        expected = os.path.join(self.root, "runs", "source", "export.ckpt")
        self.assertEqual(path, os.path.abspath(expected))
        exported, trained = split_checkpoint(path), split_checkpoint(source)
        self.assertEqual(exported[1], trained[1])
        self.assertEqual(exported[0]["tensors"], trained[0]["tensors"])
        self.assertEqual(exported[0]["provenance"]["exported_from"], "source")

        out = os.path.join(self.root, "exports", "encoder.ckpt")
        result = self.invoke("export", config, "--no-head", "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        header = read_checkpoint_header(out)
        self.assertIsNone(header["scheme"])
        self.assertEqual({t["group"] for t in header["tensors"]}, {"encoder"})

    def test_export_without_checkpoint(self):
        result = self.invoke("export", self.source_config())
        self.assertEqual(result.exit_code, 4)
        self.assertEqual(json_line(result.output)["error"], "CheckpointError")

    def test_full_transfer_with_mismatched_classes_fails_early(self):
        source = self.train_source()
        config = self.config(
            "mismatch",
            "target-aggression-train",
            "target-aggression-test",
            "synthetic-aggression",
            transfer={"checkpoint": source, "strategy": "full"},
        )
        result = self.invoke("transfer", config)
        self.assertEqual(result.exit_code, 4)
        error = json_line(result.output)
        self.assertEqual(error["error"], "CheckpointError")
        self.assertEqual(error["exit_code"], 4)
        self.assertFalse(os.path.exists(os.path.join(self.root, "runs", "mismatch")))

    def test_config_error_exit_code(self):
        result = self.invoke("train", self.source_config(), "--set", "train.epochs=0")
        self.assertEqual(result.exit_code, 2)
        self.assertEqual(json_line(result.output)["error"], "ConfigError")
        result = self.invoke("train", os.path.join(self.root, "absent.json"))
        self.assertEqual(result.exit_code, 2)

    def test_data_error_exit_code(self):
        bad = write_text(self.root, "bad.tsv", "x1\tsome text\tMAYBE\n")
        result = self.invoke(
            "train", self.source_config(), "--set", f"data.train.path={bad}"
        )
        self.assertEqual(result.exit_code, 3)
        error = json_line(result.output)
        self.assertIn("x1", error["message"])

    def test_evaluate_without_checkpoint(self):
        result = self.invoke("evaluate", self.source_config())
        self.assertEqual(result.exit_code, 4)

    def test_synth_and_schema(self):
        out = os.path.join(self.root, "synth")
        result = self.invoke("synth", out, "--n-source", "10", "--n-target", "4", "--n-test", "5")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.isfile(os.path.join(out, "source-train.tsv")))
        result = self.invoke("schema")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("properties", json.loads(result.output))

    def test_version(self):
        result = self.runner.invoke(cli.main, ["--version"])
        self.assertEqual(result.exit_code, 0)
        self.assertIn("crossoffense", result.output)


if __name__ == "__main__":
    unittest.main()
