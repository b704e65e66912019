"""Pretrained word-vector IO and embedding-matrix assembly.

Vectors use the plain-text `.vec` layout: a header line `count dim`, then one
`token v1 v2 ... v_dim` line per word, all space-separated. Values serialize
with `repr`, so a load/save/load round trip preserves every float bit.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import ConfigError, DataFormatError
from .data import PAD_INDEX, UNK_INDEX, Vocab

log = logging.getLogger(__name__)


def load_vec(path) -> tuple[dict[str, np.ndarray], int]:
    """Parse a `.vec` file into {token: vector}; returns (map, dim).

    Duplicate tokens keep the last row (with a warning); malformed headers,
    wrong arity and non-numeric values are errors naming the offending line.
    """
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise DataFormatError(f"{path}:1: header must be 'count dim', got {header.strip()!r}")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(f"{path}:1: header must hold two integers, got {header.strip()!r}") from None
        if count < 0 or dim < 1:
            raise DataFormatError(f"{path}:1: nonsensical header 'count={count} dim={dim}'")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != dim + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 1 token + {dim} values, got {len(fields)} fields"
                )
            token = fields[0]
            try:
                vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric vector component") from None
            if token in vectors:
                log.warning("%s:%d: duplicate token %r, keeping the last row", path, lineno, token)
            vectors[token] = vec
    if len(vectors) != count:
        log.warning("%s: header promised %d rows, file held %d", path, count, len(vectors))
    return vectors, dim


def save_vec(vectors: dict[str, np.ndarray], path) -> None:
    """Serialize a vector map in `.vec` layout with full-precision floats."""
    dims = {v.shape for v in vectors.values()}
    if len(dims) > 1:
        raise ConfigError(f"save_vec: inconsistent vector shapes {sorted(dims)}")
    dim = next(iter(dims))[0] if dims else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(vectors)} {dim}\n")
        for token, vec in vectors.items():
            fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


class EmbeddingMatrix:
    """Initial embedding table [vocab, dim] plus its pretrained coverage.

    Row 0 (padding) is all zero. The array is copied into each model that
    fine-tunes, so one loaded matrix can seed many models.
    """

    def __init__(self, values: np.ndarray, coverage: float):
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ConfigError(f"EmbeddingMatrix: expected 2-d values, got {self.values.shape}")
        self.coverage = float(coverage)

    @property
    def vocab_size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def build_matrix(vocab: Vocab, pretrained: dict[str, np.ndarray] | None,
                 dim: int, seed: int) -> EmbeddingMatrix:
    """Assemble the initial embedding table for a vocabulary.

    With pretrained vectors: found tokens copy their vector; missing tokens and
    the unknown token get the elementwise mean of all loaded vectors plus
    uniform noise in [-0.01, 0.01]. Without pretrained vectors every non-pad
    row is uniform in [-1/sqrt(dim), 1/sqrt(dim)]. The pad row is zero either
    way. Coverage counts found tokens over the vocabulary minus pad/unk.
    """
    if dim < 1:
        raise ConfigError(f"build_matrix: dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    vocab_size = len(vocab)
    values = np.zeros((vocab_size, dim), dtype=np.float64)
    real_tokens = vocab.tokens[2:]
    if pretrained is None:
        values[1:] = rng.uniform(-1.0 / np.sqrt(dim), 1.0 / np.sqrt(dim), (vocab_size - 1, dim))
        matrix = EmbeddingMatrix(values, coverage=0.0)
        log.info("embedding matrix: random init, dim=%d, vocab=%d", dim, vocab_size)
        return matrix
    for vec in pretrained.values():
        if vec.shape != (dim,):
            raise ConfigError(f"build_matrix: pretrained vectors have dim {vec.shape}, expected ({dim},)")
    if pretrained:
        mean = np.mean(np.stack(list(pretrained.values())), axis=0)
    else:
        mean = np.zeros(dim)
    found = 0
    for row, token in enumerate(vocab.tokens):
        if row == PAD_INDEX:
            continue
        vec = pretrained.get(token) if row != UNK_INDEX else None
        if vec is not None:
            values[row] = vec
            found += 1
        else:
            values[row] = mean + rng.uniform(-0.01, 0.01, dim)
    coverage = found / len(real_tokens) if real_tokens else 1.0
    log.info("embedding matrix: dim=%d, vocab=%d, coverage=%.3f", dim, vocab_size, coverage)
    return EmbeddingMatrix(values, coverage=coverage)
