#!/usr/bin/env python

"""Desk-scale check that transferred weights help a low-resource target task.

A source model is trained on 2,000 synthetic "synth-a" texts. Target models
are fine-tuned on 50 "synth-b" texts, starting either from the source weights
or from scratch, and scored on 500 held-out target texts.
"""

import os
import tempfile
import unittest

import numpy as np

from crossoffense.classifier import TrainConfig, build_classifier, train
from crossoffense.encoder import MiniEncoderConfig, init_mini_encoder
from crossoffense.evaluation import evaluate_model
from crossoffense.synthetic import make_synthetic_dataset
from crossoffense.transfer import export_checkpoint, initialize_from_checkpoint, save_checkpoint

ENCODER = MiniEncoderConfig(
    vocab_size=2003, hidden_size=16, num_layers=1, num_heads=2, ff_size=32, max_len=16
)
SOURCE_TRAINING = TrainConfig(
    learning_rate=3e-3, epochs=3, batch_size=16, hold_out=False, max_len=16
)
SEEDS = range(5)


def target_training(seed):
    return TrainConfig(
        learning_rate=3e-3, epochs=8, batch_size=8, hold_out=False, seed=seed, max_len=16
    )


class TestTransferBenefit(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        source = make_synthetic_dataset(2000, "synth-a", "offense", seed=100)
        model = build_classifier(init_mini_encoder(ENCODER, seed=0), source.scheme, seed=0)
        model, _ = train(model, source, SOURCE_TRAINING)
        cls.checkpoint = os.path.join(cls.tmp.name, "source.ckpt")
        save_checkpoint(export_checkpoint(model), cls.checkpoint)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def compare(self, strategy, scheme_kind):
        held_out = make_synthetic_dataset(500, "synth-b", scheme_kind, seed=200)
        transferred, scratch = [], []
        for seed in SEEDS:
            target = make_synthetic_dataset(50, "synth-b", scheme_kind, seed=300 + seed)
            cfg = target_training(seed)

            initial = initialize_from_checkpoint(self.checkpoint, strategy, target.scheme, seed=seed)
            model, _ = train(initial, target, cfg)
            transferred.append(evaluate_model(model, held_out, max_len=16).macro_f1)

            initial = build_classifier(init_mini_encoder(ENCODER, seed=seed), target.scheme, seed=seed)
            model, _ = train(initial, target, cfg)
            scratch.append(evaluate_model(model, held_out, max_len=16).macro_f1)
        return float(np.mean(transferred)), float(np.mean(scratch))

    def test_full_transfer_two_classes(self):
        transferred, scratch = self.compare("full", "offense")
        self.assertGreaterEqual(transferred, scratch)

    def test_encoder_only_transfer_three_classes(self):
        transferred, scratch = self.compare("encoder_only", "aggression")
        self.assertGreaterEqual(transferred, scratch)


if __name__ == "__main__":
    unittest.main()
