"""Sentence classifiers: convolutional, bidirectional recurrent, and the
recurrent-convolutional composite. All three share the same contract: token
ids plus a valid length in, a single pre-sigmoid logit out, with padded
positions provably inert.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Vocab
from .embeddings import EmbeddingMatrix
from .errors import ConfigError, ContractError
from .nn import (
    ConvBank,
    EmbeddingLayer,
    RecurrentCell,
    bidirectional,
    conv1d_valid,
    dropout,
    embed,
    linear,
    mask_time,
    pool_time,
    run_rnn,
)
from .tensor import Tensor

ARCHITECTURES = ("cnn", "bilstm", "bigru", "crnn")

_ALIASES = {
    "cnn": "cnn",
    "bilstm": "bilstm",
    "lstm": "bilstm",
    "b-lstm": "bilstm",
    "bigru": "bigru",
    "gru": "bigru",
    "b-gru": "bigru",
    "crnn": "crnn",
}

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and hyperparameters; everything a build needs besides the embeddings."""

    architecture: str
    embedding_dim: int
    max_len: int
    kernel_heights: tuple[int, ...] = (3, 4, 5)
    out_channels: int = 32
    hidden_size: int = 100
    fc_units: int = 100
    dropout_p: float = 0.5
    fine_tune: bool = True
    bidirectional: bool = True
    pooling: str = "max"
    seed: int = 0

    def normalized(self) -> "ModelConfig":
        arch = _ALIASES.get(str(self.architecture).lower())
        if arch is None:
            raise ConfigError(
                f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}"
            )
        heights = tuple(sorted(set(int(k) for k in self.kernel_heights)))
        return dataclasses.replace(self, architecture=arch, kernel_heights=heights)

    def validate(self) -> None:
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if self.architecture == "cnn":
            if not self.kernel_heights:
                raise ConfigError("cnn needs at least one kernel height")
            if self.max_len < max(self.kernel_heights):
                raise ConfigError(
                    f"max_len {self.max_len} is shorter than the largest kernel "
                    f"{max(self.kernel_heights)}; pad sentences at least that far"
                )
            if self.out_channels < 1:
                raise ConfigError(f"out_channels must be >= 1, got {self.out_channels}")
        else:
            if self.hidden_size < 1:
                raise ConfigError(f"hidden_size must be >= 1, got {self.hidden_size}")
            if self.fc_units < 1:
                raise ConfigError(f"fc_units must be >= 1, got {self.fc_units}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.pooling not in ("max", "avg"):
            raise ConfigError(f"pooling must be 'max' or 'avg', got {self.pooling!r}")


class SentenceClassifier:
    """Common plumbing: config checks, the embedding table, prediction helpers."""

    def __init__(self, config: ModelConfig, embedding: EmbeddingMatrix):
        config = config.normalized()
        config.validate()
        if embedding.dim != config.embedding_dim:
            raise ConfigError(
                f"embedding dim {embedding.dim} does not match config embedding_dim {config.embedding_dim}"
            )
        self.config = config
        matrix = Tensor(np.array(embedding.values, dtype=T.get_default_dtype()))
        self.embedding = EmbeddingLayer(matrix, trainable=config.fine_tune)
        self._rng = np.random.default_rng(config.seed)

    def _uniform(self, fan_in: int, shape) -> Tensor:
        lim = 1.0 / np.sqrt(fan_in)
        return Tensor(self._rng.uniform(-lim, lim, shape), requires_grad=True)

    def _embed_masked(self, ids: np.ndarray, lengths) -> Tensor:
        return mask_time(embed(self.embedding, ids), lengths)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("embedding", self.embedding.matrix)] + self._head_parameters()

    def _head_parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        """Trainable tensors only; the embedding table is included iff fine-tuning."""
        out = [p for name, p in self.named_parameters() if name != "embedding"]
        if self.config.fine_tune:
            out.insert(0, self.embedding.matrix)
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward_batch(self, ids, lengths, mode: str = "eval", rng=None) -> Tensor:
        raise NotImplementedError

    def forward(self, ids, valid_length: int, mode: str = "eval", rng=None) -> Tensor:
        """Logit for one sentence: ids [L] and its valid length."""
        ids = np.asarray(ids)
        out = self.forward_batch(ids[None, :], np.array([valid_length]), mode=mode, rng=rng)
        return T.reshape(out, ())

    def predict_proba_batch(self, ids, lengths) -> np.ndarray:
        with T.no_grad():
            logits = self.forward_batch(ids, lengths, mode="eval")
        return T.sigmoid_values(logits.data)

    def predict_proba(self, ids, valid_length: int) -> float:
        ids = np.asarray(ids)
        return float(self.predict_proba_batch(ids[None, :], np.array([valid_length]))[0])


class ConvSentenceClassifier(SentenceClassifier):
    """Per-kernel valid convolution + ReLU, pooled over windows that touch real
    tokens, concatenated and mapped straight to the logit (no hidden layer)."""

    def __init__(self, config: ModelConfig, embedding: EmbeddingMatrix):
        super().__init__(config, embedding)
        cfg = self.config
        self.conv = ConvBank(cfg.kernel_heights, cfg.embedding_dim, cfg.out_channels, self._rng)
        width = len(cfg.kernel_heights) * cfg.out_channels
        self.w_out = self._uniform(width, (1, width))
        self.b_out = Tensor(np.zeros(1), requires_grad=True)

    def _head_parameters(self):
        named = []
        for k in self.config.kernel_heights:
            named.append((f"conv{k}.weight", self.conv.weights[k]))
            named.append((f"conv{k}.bias", self.conv.biases[k]))
        named.append(("out.weight", self.w_out))
        named.append(("out.bias", self.b_out))
        return named

    def forward_batch(self, ids, lengths, mode: str = "eval", rng=None) -> Tensor:
        ids = np.asarray(ids)
        lengths = np.asarray(lengths)
        e = self._embed_masked(ids, lengths)
        span = ids.shape[-1]
        pooled = []
        for k in self.config.kernel_heights:
            fmap = T.relu(conv1d_valid(self.conv, e, k))
            window_counts = np.minimum(lengths, span - k + 1)
            pooled.append(pool_time(fmap, self.config.pooling, window_counts))
        h = T.concat(pooled, axis=-1)
        h = dropout(h, self.config.dropout_p, mode, rng)
        return T.reshape(linear(self.w_out, self.b_out, h), (ids.shape[0],))


class RecurrentSentenceClassifier(SentenceClassifier):
    """Bidirectional recurrence, pooled over valid positions, then a small
    fully connected layer in front of the logit."""

    def __init__(self, config: ModelConfig, embedding: EmbeddingMatrix):
        super().__init__(config, embedding)
        cfg = self.config
        kind = "lstm" if cfg.architecture == "bilstm" else "gru"
        self.cell_fwd = RecurrentCell(kind, cfg.embedding_dim, cfg.hidden_size, self._rng)
        self.cell_bwd = RecurrentCell(kind, cfg.embedding_dim, cfg.hidden_size, self._rng) if cfg.bidirectional else None
        width = 2 * cfg.hidden_size if cfg.bidirectional else cfg.hidden_size
        self.w_fc = self._uniform(width, (cfg.fc_units, width))
        self.b_fc = Tensor(np.zeros(cfg.fc_units), requires_grad=True)
        self.w_out = self._uniform(cfg.fc_units, (1, cfg.fc_units))
        self.b_out = Tensor(np.zeros(1), requires_grad=True)

    def _head_parameters(self):
        named = [(f"fwd.{n}", p) for n, p in self.cell_fwd.named_parameters()]
        if self.cell_bwd is not None:
            named += [(f"bwd.{n}", p) for n, p in self.cell_bwd.named_parameters()]
        named += [("fc.weight", self.w_fc), ("fc.bias", self.b_fc),
                  ("out.weight", self.w_out), ("out.bias", self.b_out)]
        return named

    def forward_batch(self, ids, lengths, mode: str = "eval", rng=None) -> Tensor:
        ids = np.asarray(ids)
        lengths = np.asarray(lengths)
        e = self._embed_masked(ids, lengths)
        if self.cell_bwd is not None:
            states = bidirectional(self.cell_fwd, self.cell_bwd, e, lengths)
        else:
            states = run_rnn(self.cell_fwd, e, "forward", lengths)
        pooled = pool_time(states, self.config.pooling, lengths)
        pooled = dropout(pooled, self.config.dropout_p, mode, rng)
        hidden = T.relu(linear(self.w_fc, self.b_fc, pooled))
        return T.reshape(linear(self.w_out, self.b_out, hidden), (ids.shape[0],))


class RecurrentConvClassifier(SentenceClassifier):
    """Each position is [left context ; embedding ; right context] (LSTM
    contexts), projected through tanh; the element-wise max over valid
    positions feeds the logit. Unidirectional builds drop the right context."""

    def __init__(self, config: ModelConfig, embedding: EmbeddingMatrix):
        super().__init__(config, embedding)
        cfg = self.config
        self.cell_fwd = RecurrentCell("lstm", cfg.embedding_dim, cfg.hidden_size, self._rng)
        self.cell_bwd = RecurrentCell("lstm", cfg.embedding_dim, cfg.hidden_size, self._rng) if cfg.bidirectional else None
        width = (2 * cfg.hidden_size if cfg.bidirectional else cfg.hidden_size) + cfg.embedding_dim
        self.composite_width = width
        self.w_proj = self._uniform(width, (cfg.fc_units, width))
        self.b_proj = Tensor(np.zeros(cfg.fc_units), requires_grad=True)
        self.w_out = self._uniform(cfg.fc_units, (1, cfg.fc_units))
        self.b_out = Tensor(np.zeros(1), requires_grad=True)

    def _head_parameters(self):
        named = [(f"fwd.{n}", p) for n, p in self.cell_fwd.named_parameters()]
        if self.cell_bwd is not None:
            named += [(f"bwd.{n}", p) for n, p in self.cell_bwd.named_parameters()]
        named += [("proj.weight", self.w_proj), ("proj.bias", self.b_proj),
                  ("out.weight", self.w_out), ("out.bias", self.b_out)]
        return named

    def _semantic(self, ids: np.ndarray, lengths) -> Tensor:
        e = self._embed_masked(ids, lengths)
        left = run_rnn(self.cell_fwd, e, "forward", lengths)
        parts = [left, e]
        if self.cell_bwd is not None:
            parts = [left, e, run_rnn(self.cell_bwd, e, "backward", lengths)]
        composite = T.concat(parts, axis=-1)
        return T.tanh(linear(self.w_proj, self.b_proj, composite))

    def forward_batch(self, ids, lengths, mode: str = "eval", rng=None) -> Tensor:
        ids = np.asarray(ids)
        lengths = np.asarray(lengths)
        y = self._semantic(ids, lengths)
        pooled = pool_time(y, "max", lengths)
        pooled = dropout(pooled, self.config.dropout_p, mode, rng)
        return T.reshape(linear(self.w_out, self.b_out, pooled), (ids.shape[0],))

    def most_significant_positions(self, ids, valid_length: int) -> np.ndarray:
        """Which token position wins the max, per semantic dimension."""
        ids = np.asarray(ids)
        with T.no_grad():
            y = self._semantic(ids[None, :], np.array([valid_length]))
        values = y.data[0]
        values = np.where(np.arange(values.shape[0])[:, None] < valid_length, values, -np.inf)
        return values.argmax(axis=0)


_CLASSES = {
    "cnn": ConvSentenceClassifier,
    "bilstm": RecurrentSentenceClassifier,
    "bigru": RecurrentSentenceClassifier,
    "crnn": RecurrentConvClassifier,
}


def build(config: ModelConfig, embedding: EmbeddingMatrix) -> SentenceClassifier:
    """Construct the configured architecture; parameters depend only on the seed."""
    config = config.normalized()
    return _CLASSES[config.architecture](config, embedding)


def _check_architecture(model: SentenceClassifier, expected: str, op: str) -> None:
    if model.config.architecture != expected:
        raise ContractError(f"{op}: model architecture is {model.config.architecture!r}")


def forward_cnn(model: SentenceClassifier, ids, valid_length: int, mode: str = "eval", rng=None) -> Tensor:
    _check_architecture(model, "cnn", "forward_cnn")
    return model.forward(ids, valid_length, mode=mode, rng=rng)


def forward_birnn(model: SentenceClassifier, ids, valid_length: int, mode: str = "eval", rng=None) -> Tensor:
    if model.config.architecture not in ("bilstm", "bigru"):
        raise ContractError(f"forward_birnn: model architecture is {model.config.architecture!r}")
    return model.forward(ids, valid_length, mode=mode, rng=rng)


def forward_crnn(model: SentenceClassifier, ids, valid_length: int, mode: str = "eval", rng=None) -> Tensor:
    _check_architecture(model, "crnn", "forward_crnn")
    return model.forward(ids, valid_length, mode=mode, rng=rng)


def save_checkpoint(model: SentenceClassifier, path, vocab: Vocab | None = None) -> None:
    """Write a versioned container with the config, vocabulary and every parameter array."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "vocab": vocab.tokens if vocab is not None else None,
    }
    arrays = {"__meta__": np.array(json.dumps(meta))}
    for name, p in model.named_parameters():
        arrays[f"param::{name}"] = p.data
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[SentenceClassifier, Vocab | None]:
    """Rebuild a model (bit-exact parameters) and its vocabulary from a checkpoint."""
    with np.load(path, allow_pickle=False) as npz:
        if "__meta__" not in npz:
            raise ConfigError(f"{path}: not a model checkpoint")
        meta = json.loads(str(npz["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        cfg_dict = dict(meta["config"])
        cfg_dict["kernel_heights"] = tuple(cfg_dict["kernel_heights"])
        config = ModelConfig(**cfg_dict)
        emb = npz["param::embedding"]
        if emb.ndim != 2 or emb.shape[1] != config.embedding_dim:
            raise ConfigError(
                f"{path}: stored embedding shape {emb.shape} does not match config dim {config.embedding_dim}"
            )
        model = build(config, EmbeddingMatrix(emb, coverage=0.0))
        for name, p in model.named_parameters():
            key = f"param::{name}"
            if key not in npz:
                raise ConfigError(f"{path}: checkpoint is missing parameter {name!r}")
            stored = npz[key]
            if stored.shape != p.data.shape:
                raise ConfigError(
                    f"{path}: parameter {name!r} has shape {stored.shape}, expected {p.data.shape}"
                )
            p.data = stored.astype(T.get_default_dtype(), copy=True)
    vocab = Vocab.from_tokens(meta["vocab"]) if meta.get("vocab") else None
    return model, vocab
