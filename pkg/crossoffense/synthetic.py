"""This module generates a deterministic synthetic bilingual corpus for
desk-scale transfer experiments.

The two synthetic languages ("synth-a" and "synth-b") share no content words.
Offensiveness is signaled by marker tokens that both languages share, the way
a cross-lingual encoder shares representations of abusive terms. Strong
markers signal overt aggression, weak markers covert aggression; either kind
makes a text offensive under the binary scheme.
"""

import os
from typing import Dict, Optional, Sequence

import numpy as np

from .corpus import Dataset, LabeledInstance, LabelScheme, save_dataset

OFFENSE_SCHEME = LabelScheme("offensive", ("non-offensive", "offensive"))
AGGRESSION_SCHEME = LabelScheme(
    "aggression", ("non aggressive", "covertly aggressive", "overtly aggressive")
)
STRONG_MARKERS = tuple(f"xx{i}" for i in range(8))
WEAK_MARKERS = tuple(f"yy{i}" for i in range(8))
LANGUAGE_PREFIXES = {"synth-a": "a", "synth-b": "b"}


def make_synthetic_dataset(
    n: int,
    language: str = "synth-a",
    scheme_kind: str = "offense",
    seed: int = 0,
    content_vocab: int = 200,
    min_len: int = 4,
    max_len: int = 10,
    n_markers: int = 1,
    name: Optional[str] = None,
) -> Dataset:
    """Generates a synthetic offensive-language dataset.

    Args:
        n (int): The number of instances.
        language (str, optional): "synth-a" or "synth-b". Defaults to "synth-a".
        scheme_kind (str, optional): "offense" (2 classes) or "aggression"
            (3 classes). Defaults to "offense".
        seed (int, optional): The generator seed. Defaults to 0.
        content_vocab (int, optional): The number of content words per language.
            Defaults to 200.
        min_len (int, optional): The minimum number of content words. Defaults to 4.
        max_len (int, optional): The maximum number of content words. Defaults to 10.
        n_markers (int, optional): Markers inserted into each marked text.
            Defaults to 1.
        name (str, optional): The dataset name. Defaults to "<language>-<kind>".

    Returns:
        Dataset: The generated dataset, balanced across classes.
    """
    if language not in LANGUAGE_PREFIXES:
        raise ValueError(f"language must be one of {sorted(LANGUAGE_PREFIXES)}")
    if scheme_kind == "offense":
        scheme = OFFENSE_SCHEME
    elif scheme_kind == "aggression":
        scheme = AGGRESSION_SCHEME
    else:
        raise ValueError(f"scheme_kind must be 'offense' or 'aggression', got {scheme_kind!r}")
    if not 1 <= min_len <= max_len:
        raise ValueError("need 1 <= min_len <= max_len")

    rng = np.random.default_rng(seed)
    prefix = LANGUAGE_PREFIXES[language]
    labels = rng.permutation(np.arange(n) % scheme.k)

    instances = []
    for i, label in enumerate(labels):
        words = [
            f"{prefix}{j}"
            for j in rng.integers(0, content_vocab, size=rng.integers(min_len, max_len + 1))
        ]
        markers = _markers_for(int(label), scheme_kind, rng)
        for _ in range(n_markers if markers else 0):
            words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(markers)))
        instances.append(LabeledInstance(f"{prefix}-{i:06d}", " ".join(words), int(label)))

    return Dataset(
        scheme=scheme,
        instances=tuple(instances),
        source="twitter" if scheme_kind == "offense" else "facebook",
        language=language,
        name=name or f"{language}-{scheme_kind}",
    )


def _markers_for(label: int, scheme_kind: str, rng: np.random.Generator) -> Sequence[str]:
    if label == 0:
        return ()
    if scheme_kind == "aggression":
        return WEAK_MARKERS if label == 1 else STRONG_MARKERS
    return STRONG_MARKERS if rng.random() < 0.5 else WEAK_MARKERS


def write_synthetic_corpus(
    out_dir: str,
    n_source: int = 2000,
    n_target: int = 50,
    n_test: int = 500,
    seed: int = 0,
) -> Dict[str, str]:
    """Writes a synthetic source/target corpus as TSV files.

    The source language is "synth-a" (binary offense); the target language
    "synth-b" gets a binary offense task and a 3-class aggression task.

    Args:
        out_dir (str): The output directory.
        n_source (int, optional): Source training instances. Defaults to 2000.
        n_target (int, optional): Target training instances per task. Defaults to 50.
        n_test (int, optional): Target test instances per task. Defaults to 500.
        seed (int, optional): The base seed. Defaults to 0.

    Returns:
        Dict[str, str]: File paths keyed by split name.
    """
    splits = [
        ("source-train", n_source, "synth-a", "offense", "synthetic-offense"),
        ("target-train", n_target, "synth-b", "offense", "synthetic-offense"),
        ("target-test", n_test, "synth-b", "offense", "synthetic-offense"),
        ("target-aggression-train", n_target, "synth-b", "aggression", "synthetic-aggression"),
        ("target-aggression-test", n_test, "synth-b", "aggression", "synthetic-aggression"),
    ]
    paths = {}
    for offset, (split, n, language, kind, profile) in enumerate(splits):
        dataset = make_synthetic_dataset(n, language, kind, seed=seed + offset, name=split)
        paths[split] = save_dataset(dataset, os.path.join(out_dir, f"{split}.tsv"), profile)
    return paths
