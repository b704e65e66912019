"""Synthetic corpora for self-tests and benchmarks.

Two generators: a tiny memorization set with random labels, and a larger
learnable task whose label is the co-occurrence of two designated tokens.
Both are fully determined by their seed.
"""

from __future__ import annotations

import numpy as np

from .data import LabeledCorpus

MARKER_TOKEN = "markerx"
VERB_TOKEN = "verbx"


def random_label_corpus(n: int = 32, vocab_size: int = 40, seed: int = 7,
                        min_len: int = 3, max_len: int = 10) -> LabeledCorpus:
    """Random sentences with labels drawn independently of their content.

    Nothing generalizes here by construction; the set exists to verify that a
    model can memorize a small sample.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(vocab_size)]
    examples = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        tokens = [words[int(i)] for i in rng.integers(0, vocab_size, size=length)]
        examples.append((tokens, int(rng.integers(0, 2))))
    return LabeledCorpus(examples, provenance=f"synthetic:random(n={n},seed={seed})")


def cooccurrence_corpus(n: int = 1000, vocab_size: int = 50, seed: int = 11,
                        min_len: int = 5, max_len: int = 15) -> LabeledCorpus:
    """Sentences labeled 1 exactly when the marker and verb tokens both appear.

    Each sentence draws one of four patterns (both present, marker only, verb
    only, neither) with probabilities 1/2, 1/6, 1/6, 1/6, so the single-token
    shortcuts are represented in both classes. Filler tokens come from the
    remaining vocab_size - 2 words; total distinct tokens = vocab_size.
    """
    if vocab_size < 4:
        raise ValueError("cooccurrence_corpus: need at least 4 vocabulary entries")
    rng = np.random.default_rng(seed)
    fillers = [f"f{i:02d}" for i in range(vocab_size - 2)]
    examples = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        tokens = [fillers[int(i)] for i in rng.integers(0, len(fillers), size=length)]
        pattern = rng.choice(4, p=[0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0])
        slots = rng.choice(length, size=min(2, length), replace=False)
        if pattern in (0, 1):
            tokens[int(slots[0])] = MARKER_TOKEN
        if pattern in (0, 2):
            tokens[int(slots[1])] = VERB_TOKEN
        label = 1 if pattern == 0 else 0
        examples.append((tokens, label))
    return LabeledCorpus(examples, provenance=f"synthetic:cooccurrence(n={n},seed={seed})")
