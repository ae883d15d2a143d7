#!/usr/bin/env python

"""Tests for `crossoffense.transfer`."""

import json
import os
import struct
import tempfile
import unittest

import numpy as np
import torch

from crossoffense.classifier import predict_proba_batch
from crossoffense.common import CheckpointError, ConfigError
from crossoffense.corpus import LabelScheme
from crossoffense.encoder import same_state
from crossoffense.synthetic import make_synthetic_dataset
from crossoffense.transfer import (
    MAGIC,
    Checkpoint,
    TransferStrategy,
    checkpoint_bytes,
    export_checkpoint,
    import_encoder_only,
    import_full,
    initialize_from_checkpoint,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)

from .helpers import BINARY, TERNARY, TINY, tiny_model

HINDI = LabelScheme("hate-offensive", ("non hate-offensive", "hate offensive"))


def split_container(data: bytes):
    (length,) = struct.unpack("<I", data[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    header = json.loads(data[start : start + length].decode("utf-8"))
    return header, data[start + length :]


def without_timestamp(header):
    header = json.loads(json.dumps(header))
    header["provenance"].pop("created_at")
    return header


class TestCheckpointRoundTrip(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.model = tiny_model(seed=3)
        self.model.provenance = {"source_dataset": "olid-en", "seed": 3}
        self.path = os.path.join(self.tmp.name, "model.ckpt")

    def tearDown(self):
        self.tmp.cleanup()

    def test_full_round_trip_predictions(self):
        save_checkpoint(export_checkpoint(self.model, include_head=True), self.path)
        restored = import_full(load_checkpoint(self.path))
        probes = make_synthetic_dataset(100, "synth-b", seed=9).texts
        expected = predict_proba_batch(self.model, probes)
        actual = predict_proba_batch(restored, probes)
        self.assertTrue(np.array_equal(expected, actual))
        self.assertTrue(same_state(self.model.encoder, restored.encoder))
        self.assertTrue(torch.equal(self.model.head.linear.weight, restored.head.linear.weight))
        self.assertEqual(restored.scheme, BINARY)

    def test_export_import_export_is_stable(self):
        first = checkpoint_bytes(export_checkpoint(self.model))
        save_checkpoint(export_checkpoint(self.model), self.path)
        second = checkpoint_bytes(export_checkpoint(import_full(load_checkpoint(self.path))))
        header_a, payload_a = split_container(first)
        header_b, payload_b = split_container(second)
        self.assertEqual(payload_a, payload_b)
        self.assertEqual(without_timestamp(header_a), without_timestamp(header_b))

    def test_provenance_fields(self):
        ckpt = export_checkpoint(self.model)
        for key in ("source_dataset", "seed", "created_at", "encoder_fingerprint"):
            self.assertIn(key, ckpt.provenance)
        self.assertEqual(ckpt.provenance["encoder_fingerprint"], self.model.encoder.fingerprint)

    def test_encoder_only_export(self):
        ckpt = export_checkpoint(self.model, include_head=False)
        self.assertIsNone(ckpt.head_state)
        self.assertIsNone(ckpt.scheme)
        save_checkpoint(ckpt, self.path)
        header = read_checkpoint_header(self.path)
        self.assertIsNone(header["scheme"])
        self.assertEqual({t["group"] for t in header["tensors"]}, {"encoder"})

    def test_header_layout(self):
        save_checkpoint(export_checkpoint(self.model), self.path)
        header = read_checkpoint_header(self.path)
        self.assertEqual(header["format_version"], 1)
        self.assertEqual(header["encoder_config"], TINY.to_dict())
        weight = next(t for t in header["tensors"] if t["name"] == "linear.weight")
        self.assertEqual(weight["group"], "head")
        self.assertEqual(weight["shape"], [2, TINY.hidden_size])
        self.assertEqual(weight["nbytes"], 2 * TINY.hidden_size * 4)


class TestCheckpointIntegrity(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "model.ckpt")
        save_checkpoint(export_checkpoint(tiny_model(seed=1)), self.path)
        with open(self.path, "rb") as f:
            self.data = f.read()

    def tearDown(self):
        self.tmp.cleanup()

    def rewrite(self, header, payload):
        raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(self.path, "wb") as f:
            f.write(MAGIC + struct.pack("<I", len(raw)) + raw + payload)

    def test_tampered_config(self):
        header, payload = split_container(self.data)
        header["encoder_config"]["hidden_size"] = 16
        self.rewrite(header, payload)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_version_mismatch(self):
        header, payload = split_container(self.data)
        header["format_version"] = 2
        self.rewrite(header, payload)
        with self.assertRaisesRegex(CheckpointError, "version"):
            read_checkpoint_header(self.path)

    def test_not_a_checkpoint(self):
        with open(self.path, "wb") as f:
            f.write(b"hello world")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(os.path.join(self.tmp.name, "absent.ckpt"))

    def test_encoder_only_load_never_reads_head(self):
        header, payload = split_container(self.data)
        head_start = min(t["offset"] for t in header["tensors"] if t["group"] == "head")
        with open(self.path, "wb") as f:
            f.write(self.data[: len(self.data) - len(payload) + head_start])
        ckpt = load_checkpoint(self.path, include_head=False)
        self.assertFalse(ckpt.has_head)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, include_head=True)

    def test_wrong_tensor_shape(self):
        header, payload = split_container(self.data)
        entry = next(t for t in header["tensors"] if t["name"] == "token_embeddings.weight")
        entry["shape"] = [entry["shape"][1], entry["shape"][0]]
        self.rewrite(header, payload)
        with self.assertRaises(CheckpointError):
            import_full(load_checkpoint(self.path))

    def test_head_without_scheme(self):
        ckpt = load_checkpoint(self.path)
        ckpt.scheme = None
        with self.assertRaises(CheckpointError):
            ckpt.validate()


class TestImport(unittest.TestCase):
    def setUp(self):
        self.model = tiny_model(seed=5)
        self.ckpt = export_checkpoint(self.model)

    def test_import_full_requires_head(self):
        with self.assertRaisesRegex(CheckpointError, "head"):
            import_full(export_checkpoint(self.model, include_head=False))

    def test_import_full_to_hindi_keeps_weights(self):
        with self.assertLogs("crossoffense.transfer", level="WARNING"):
            model = import_full(self.ckpt, target_scheme=HINDI)
        self.assertEqual(model.scheme, HINDI)
        self.assertTrue(torch.equal(model.head.linear.weight, self.model.head.linear.weight))

    def test_import_full_class_count_mismatch(self):
        with self.assertRaises(CheckpointError):
            import_full(self.ckpt, target_scheme=TERNARY)

    def test_class_map_reorders_rows(self):
        swapped = LabelScheme("swapped", ("offensive", "non-offensive"))
        class_map = {"non-offensive": "non-offensive", "offensive": "offensive"}
        model = import_full(self.ckpt, target_scheme=swapped, class_map=class_map)
        weight = self.model.head.linear.weight
        self.assertTrue(torch.equal(model.head.linear.weight, weight[[1, 0]]))
        self.assertTrue(torch.equal(model.head.linear.bias, self.model.head.linear.bias[[1, 0]]))

    def test_class_map_must_be_bijection(self):
        with self.assertRaises(ConfigError):
            import_full(
                self.ckpt,
                target_scheme=HINDI,
                class_map={"non-offensive": "hate offensive", "offensive": "hate offensive"},
            )

    def test_encoder_only_to_three_classes(self):
        model = import_encoder_only(self.ckpt, TERNARY, seed=7)
        self.assertEqual(model.head.num_classes, 3)
        self.assertEqual(model.scheme, TERNARY)
        self.assertTrue(same_state(model.encoder, self.model.encoder))

    def test_encoder_only_head_is_seeded_and_fresh(self):
        a = import_encoder_only(self.ckpt, BINARY, seed=7)
        b = import_encoder_only(self.ckpt, BINARY, seed=7)
        self.assertTrue(torch.equal(a.head.linear.weight, b.head.linear.weight))
        self.assertFalse(torch.equal(a.head.linear.weight, self.model.head.linear.weight))


class TestInitializeFromCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "source.ckpt")
        save_checkpoint(export_checkpoint(tiny_model(seed=2)), self.path)

    def tearDown(self):
        self.tmp.cleanup()

    def test_strategies(self):
        full = initialize_from_checkpoint(self.path, "full", BINARY)
        self.assertEqual(full.provenance["strategy"], "full")
        self.assertEqual(full.provenance["parent_checkpoint"], self.path)
        encoder_only = initialize_from_checkpoint(
            self.path, TransferStrategy.ENCODER_ONLY, TERNARY, seed=1
        )
        self.assertEqual(encoder_only.scheme.k, 3)
        self.assertTrue(same_state(full.encoder, encoder_only.encoder))

    def test_full_strategy_checks_class_count(self):
        with self.assertRaises(CheckpointError):
            initialize_from_checkpoint(self.path, "full", TERNARY)

    def test_unknown_strategy(self):
        with self.assertRaises(ConfigError):
            initialize_from_checkpoint(self.path, "partial", BINARY)

    def test_checkpoint_dataclass_defaults(self):
        ckpt = load_checkpoint(self.path)
        self.assertIsInstance(ckpt, Checkpoint)
        self.assertEqual(ckpt.hidden_size, TINY.hidden_size)


if __name__ == "__main__":
    unittest.main()
