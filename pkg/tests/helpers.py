"""Shared fixtures for the test suite."""

import os

from crossoffense.classifier import build_classifier
from crossoffense.corpus import LabelScheme
from crossoffense.encoder import MiniEncoderConfig, init_mini_encoder

TINY = MiniEncoderConfig(
    vocab_size=97, hidden_size=8, num_layers=1, num_heads=2, ff_size=16, max_len=24
)
BINARY = LabelScheme("offensive", ("non-offensive", "offensive"))
TERNARY = LabelScheme(
    "aggression", ("non aggressive", "covertly aggressive", "overtly aggressive")
)


def tiny_model(scheme=BINARY, seed=0, config=TINY, bias=True):
    """A small classifier with a seeded encoder and head."""
    return build_classifier(init_mini_encoder(config, seed=seed), scheme, seed=seed, bias=bias)


def write_text(directory, name, content):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(content)
    return path
