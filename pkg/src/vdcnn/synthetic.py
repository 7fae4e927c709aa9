"""Motif-detection toy corpus for desk-scale training runs.

Class 1 iff a fixed four-character motif occurs somewhere in the string.
Strings are drawn uniformly from the in-vocabulary characters (the
printable symbols plus space), so they encode without padding or unknowns
when ``length`` equals the model's sequence length.
"""

from __future__ import annotations

import numpy as np

from .text import PRINTABLE, Dataset, Sample

MOTIF = "q7#z"
ALPHABET = PRINTABLE + " "


def _random_string(rng, length: int) -> str:
    return "".join(ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=length))


def motif_dataset(n: int, length: int = 128, seed: int = 0, motif: str = MOTIF, name: str = "motif") -> Dataset:
    """Balanced binary corpus of ``n`` strings (labels alternate 0/1)."""
    if len(motif) > length:
        raise ValueError("motif longer than the strings")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = i % 2
        text = _random_string(rng, length)
        while motif in text:
            text = _random_string(rng, length)
        if label:
            pos = int(rng.integers(0, length - len(motif) + 1))
            text = text[:pos] + motif + text[pos + len(motif):]
        samples.append(Sample(label, text))
    return Dataset(samples, 2, name)


def motif_split(n: int = 4000, length: int = 128, seed: int = 0, test_fraction: float = 0.2):
    """Shuffle a corpus of ``n`` strings and split it into (train, held-out test)."""
    full = motif_dataset(n, length, seed)
    order = np.random.default_rng(seed + 1).permutation(n)
    n_test = int(round(n * test_fraction))
    test = [full.samples[i] for i in order[:n_test]]
    train = [full.samples[i] for i in order[n_test:]]
    return Dataset(train, 2, "motif-train"), Dataset(test, 2, "motif-test")
