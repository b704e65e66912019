"""Corpus loading, tokenization, vocabulary, encoding, fold plans and metrics.

The corpus format is one example per line: `label<TAB>sentence`, where the
label is 0/1 or literal/metaphor (case-insensitive) and 1 means metaphoric.
Blank lines are skipped; anything else malformed is an error naming the line.
"""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    ContractError,
    DataFormatError,
    EmptySequenceError,
    ParameterError,
    StratificationError,
)

log = logging.getLogger(__name__)

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_LABEL_NAMES = {"0": 0, "literal": 0, "1": 1, "metaphor": 1}


@dataclass
class LabeledCorpus:
    """Tokenized sentences with binary labels (1 = metaphoric)."""

    examples: list[tuple[list[str], int]]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def labels(self) -> list[int]:
        return [label for _, label in self.examples]

    def class_counts(self) -> tuple[int, int]:
        pos = sum(self.labels)
        return len(self.examples) - pos, pos

    def max_tokens(self) -> int:
        return max(len(tokens) for tokens, _ in self.examples)


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(sentence: str, lowercase: bool = True) -> list[str]:
    """NFC-normalize, lowercase, split on whitespace, strip edge punctuation.

    Tokens that are empty after stripping are dropped; internal punctuation
    (hyphens, apostrophes) is kept.
    """
    s = unicodedata.normalize("NFC", sentence)
    if lowercase:
        s = s.lower()
    out = []
    for raw in s.split():
        tok = _strip_punct(raw)
        if tok:
            out.append(tok)
    return out


def load_corpus(path, lowercase: bool = True) -> LabeledCorpus:
    """Read a `label<TAB>sentence` TSV file into a tokenized corpus."""
    examples: list[tuple[list[str], int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected 'label<TAB>sentence'")
            label_text, sentence = line.split("\t", 1)
            label = _LABEL_NAMES.get(label_text.strip().lower())
            if label is None:
                raise DataFormatError(
                    f"{path}:{lineno}: unknown label {label_text!r} (use 0/1 or literal/metaphor)"
                )
            tokens = tokenize(sentence, lowercase=lowercase)
            if not tokens:
                raise DataFormatError(f"{path}:{lineno}: sentence has no tokens after normalization")
            examples.append((tokens, label))
    if not examples:
        raise DataFormatError(f"{path}: corpus is empty")
    corpus = LabeledCorpus(examples, provenance=str(path))
    neg, pos = corpus.class_counts()
    log.info("loaded %d sentences from %s (%d metaphoric, %d literal)", len(corpus), path, pos, neg)
    return corpus


def save_corpus(corpus: LabeledCorpus, path) -> None:
    """Write a corpus back out as `label<TAB>sentence` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, label in corpus.examples:
            fh.write(f"{label}\t{' '.join(tokens)}\n")


@dataclass
class Vocab:
    """Frozen token-to-id map; 0 is padding, 1 is the unknown token."""

    tokens: list[str]
    index: dict[str, int] = field(repr=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocab":
        tokens = list(tokens)
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ContractError("Vocab: token list must start with the pad and unk tokens")
        return cls(tokens=tokens, index={t: i for i, t in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_INDEX)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


def build_vocab(corpus: LabeledCorpus, min_count: int = 1) -> Vocab:
    """Index tokens by descending frequency (ties alphabetically), ids from 2 up."""
    if min_count < 1:
        raise ParameterError(f"build_vocab: min_count must be >= 1, got {min_count}")
    counts = Counter()
    for tokens, _ in corpus.examples:
        counts.update(tokens)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocab.from_tokens([PAD_TOKEN, UNK_TOKEN] + kept)


def encode(tokens: Sequence[str], vocab: Vocab, max_len: int) -> tuple[np.ndarray, int]:
    """Map tokens to a fixed-length id row (right-padded with 0) plus its valid length."""
    if max_len < 1:
        raise ParameterError(f"encode: max_len must be >= 1, got {max_len}")
    if not tokens:
        raise EmptySequenceError("encode: empty token list")
    ids = np.zeros(max_len, dtype=np.int64)
    valid = min(len(tokens), max_len)
    for i in range(valid):
        ids[i] = vocab.id(tokens[i])
    return ids, valid


def encode_corpus(corpus: LabeledCorpus, vocab: Vocab, max_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Encode every example: id matrix [N, max_len], valid lengths [N], labels [N]."""
    n = len(corpus)
    ids = np.zeros((n, max_len), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    for row, (tokens, label) in enumerate(corpus.examples):
        ids[row], lengths[row] = encode(tokens, vocab, max_len)
        labels[row] = label
    return ids, lengths, labels


@dataclass
class FoldPlan:
    """Assignment of every example to one of k folds."""

    k: int
    assignment: np.ndarray
    seed: int

    def folds(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (train_indices, eval_indices) per fold, in fold order."""
        for f in range(self.k):
            test = np.flatnonzero(self.assignment == f)
            train = np.flatnonzero(self.assignment != f)
            yield train, test


def stratified_kfold(labels: Sequence[int], k: int, seed: int) -> FoldPlan:
    """Deal each class round-robin into k folds after a seeded shuffle.

    Classes continue the round-robin where the previous one stopped, so total
    fold sizes differ by at most one and so do per-class counts.
    """
    y = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ParameterError(f"stratified_kfold: k must be >= 2, got {k}")
    if y.size < k:
        raise StratificationError(f"stratified_kfold: only {y.size} examples for {k} folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(y.size, dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if members.size < k:
            raise StratificationError(
                f"stratified_kfold: class {cls} has {members.size} examples, fewer than k={k}"
            )
        rng.shuffle(members)
        for j, idx in enumerate(members):
            assignment[idx] = (offset + j) % k
        offset = (offset + members.size) % k
    return FoldPlan(k=k, assignment=assignment, seed=seed)


def plain_kfold(n: int, k: int, seed: int) -> FoldPlan:
    """Unstratified variant: shuffle all indices and deal them round-robin."""
    if k < 2:
        raise ParameterError(f"plain_kfold: k must be >= 2, got {k}")
    if n < k:
        raise StratificationError(f"plain_kfold: only {n} examples for {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % k
    return FoldPlan(k=k, assignment=assignment, seed=seed)


@dataclass(frozen=True)
class Metrics:
    """Confusion counts and the derived scores for the metaphoric (positive) class."""

    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    macro_f1: float


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Confusion-matrix scores; F1 is for the positive class, macro-F1 averages both."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise ContractError(f"compute_metrics: shapes disagree ({p.shape} vs {y.shape})")
    if p.size == 0:
        raise ContractError("compute_metrics: empty inputs")
    bad = ~np.isin(p, (0, 1)) | ~np.isin(y, (0, 1))
    if bad.any():
        raise ContractError("compute_metrics: predictions and labels must be 0 or 1")
    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    macro = 0.5 * (f1 + _f1(tn, fn, fp))
    return Metrics(
        tp=tp, fp=fp, fn=fn, tn=tn,
        accuracy=(tp + tn) / p.size,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro,
    )
