"""Training, stratified cross-validation, and the embedding-dimension sweep.

Everything here is deterministic given the settings seed: fold assignment,
parameter init, shuffling and dropout all derive from it, per fold, through
named seed streams. Reports therefore serialize to byte-identical CSV across
runs and across worker counts; wall-clock timings go to the log only.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import (
    LabeledCorpus,
    Metrics,
    Vocab,
    build_vocab,
    compute_metrics,
    encode_corpus,
    plain_kfold,
    stratified_kfold,
)
from .embeddings import EmbeddingMatrix, build_matrix
from .errors import ParameterError
from .models import ModelConfig, SentenceClassifier, build
from .nn import bce_loss
from .optim import Adam, clip_grad_norm

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "model", "D", "fine_tune", "accuracy", "f1", "folds", "lr", "batch",
    "epochs", "seed", "max_len", "macro_f1", "fold_accuracy", "fold_f1",
)


@dataclass(frozen=True)
class RunSettings:
    """Optimization and evaluation-protocol knobs, independent of architecture."""

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    folds: int = 10
    seed: int = 0
    min_count: int = 1
    workers: int = 1
    clip_norm: float = 0.0
    stratify: bool = True

    def validate(self) -> None:
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ParameterError(f"folds must be >= 2, got {self.folds}")
        if self.min_count < 1:
            raise ParameterError(f"min_count must be >= 1, got {self.min_count}")
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")
        if self.clip_norm < 0:
            raise ParameterError(f"clip_norm must be >= 0, got {self.clip_norm}")


def fold_seed(base_seed: int, fold: int) -> int:
    """Independent integer seed for one fold, stable across worker counts."""
    return int(np.random.SeedSequence(base_seed, spawn_key=(fold,)).generate_state(1)[0])


def resolve_max_len(config: ModelConfig, corpus: LabeledCorpus) -> ModelConfig:
    """Fill in max_len from the corpus when the config leaves it at 0."""
    config = config.normalized()
    if config.max_len > 0:
        return config
    longest = corpus.max_tokens()
    if config.architecture == "cnn":
        longest = max(longest, max(config.kernel_heights))
    return dataclasses.replace(config, max_len=longest)


def train_model(
    model: SentenceClassifier,
    ids: np.ndarray,
    lengths: np.ndarray,
    labels: np.ndarray,
    settings: RunSettings,
) -> list[float]:
    """Minibatch Adam on the Bernoulli NLL; returns the mean loss per epoch."""
    settings.validate()
    n = ids.shape[0]
    if n == 0:
        raise ParameterError("train_model: no training examples")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(settings.seed, spawn_key=(1,)))
    dropout_rng = np.random.default_rng(np.random.SeedSequence(settings.seed, spawn_key=(2,)))
    params = model.parameters()
    opt = Adam(params, lr=settings.lr)
    history: list[float] = []
    for epoch in range(settings.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, settings.batch_size):
            batch = order[start:start + settings.batch_size]
            logits = model.forward_batch(ids[batch], lengths[batch], mode="train", rng=dropout_rng)
            loss = bce_loss(logits, labels[batch]).mean()
            opt.zero_grad()
            T.backward(loss)
            if settings.clip_norm > 0:
                clip_grad_norm(params, settings.clip_norm)
            opt.step()
            total += loss.item() * batch.size
        history.append(total / n)
        log.debug("epoch %d/%d: loss=%.6f", epoch + 1, settings.epochs, history[-1])
    return history


def predict_probabilities(model: SentenceClassifier, ids: np.ndarray, lengths: np.ndarray,
                          chunk: int = 256) -> np.ndarray:
    """Positive-class probability per row, evaluated in bounded-size chunks."""
    parts = [
        model.predict_proba_batch(ids[start:start + chunk], lengths[start:start + chunk])
        for start in range(0, ids.shape[0], chunk)
    ]
    return np.concatenate(parts) if parts else np.zeros(0)


def evaluate_model(model: SentenceClassifier, ids: np.ndarray, lengths: np.ndarray,
                   labels: np.ndarray) -> Metrics:
    """Hard decisions at probability > 0.5, scored against the labels."""
    probs = predict_probabilities(model, ids, lengths)
    return compute_metrics((probs > 0.5).astype(np.int64), labels)


@dataclass(frozen=True)
class FoldOutcome:
    fold: int
    metrics: Metrics
    losses: list[float]
    seconds: float


@dataclass(frozen=True)
class CrossvalResult:
    config: ModelConfig
    settings: RunSettings
    coverage: float
    outcomes: list[FoldOutcome] = field(repr=False)

    @property
    def accuracy(self) -> float:
        return float(np.mean([o.metrics.accuracy for o in self.outcomes]))

    @property
    def f1(self) -> float:
        return float(np.mean([o.metrics.f1 for o in self.outcomes]))

    @property
    def macro_f1(self) -> float:
        return float(np.mean([o.metrics.macro_f1 for o in self.outcomes]))

    @property
    def fold_accuracies(self) -> list[float]:
        return [o.metrics.accuracy for o in self.outcomes]

    @property
    def fold_f1s(self) -> list[float]:
        return [o.metrics.f1 for o in self.outcomes]


def _crossval_fold(args) -> FoldOutcome:
    """Train/evaluate one fold; module-level so process pools can pickle it."""
    (config, settings, emb_values, coverage, ids, lengths, labels, train_idx, test_idx, fold) = args
    seed = fold_seed(settings.seed, fold)
    started = time.perf_counter()
    model = build(
        dataclasses.replace(config, seed=seed),
        EmbeddingMatrix(emb_values, coverage=coverage),
    )
    losses = train_model(
        model, ids[train_idx], lengths[train_idx], labels[train_idx],
        dataclasses.replace(settings, seed=seed),
    )
    metrics = evaluate_model(model, ids[test_idx], lengths[test_idx], labels[test_idx])
    return FoldOutcome(fold=fold, metrics=metrics, losses=losses,
                       seconds=time.perf_counter() - started)


def run_crossval(
    corpus: LabeledCorpus,
    config: ModelConfig,
    settings: RunSettings,
    pretrained: dict[str, np.ndarray] | None = None,
) -> CrossvalResult:
    """K-fold cross-validation of one configuration over one corpus.

    Every fold trains a freshly initialized model (fold-specific seed) on the
    other folds and is scored on its own; fold order in the result is fixed.
    """
    settings.validate()
    config = resolve_max_len(config, corpus)
    config.validate()
    vocab = build_vocab(corpus, min_count=settings.min_count)
    matrix = build_matrix(vocab, pretrained, config.embedding_dim, seed=settings.seed)
    ids, lengths, labels = encode_corpus(corpus, vocab, config.max_len)
    if settings.stratify:
        plan = stratified_kfold(labels, settings.folds, settings.seed)
    else:
        plan = plain_kfold(len(labels), settings.folds, settings.seed)
    tasks = [
        (config, settings, matrix.values, matrix.coverage, ids, lengths, labels,
         train_idx, test_idx, fold)
        for fold, (train_idx, test_idx) in enumerate(plan.folds())
    ]
    workers = min(settings.workers, settings.folds)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_crossval_fold, tasks))
    else:
        outcomes = [_crossval_fold(t) for t in tasks]
    for o in outcomes:
        log.info(
            "%s d=%d fold %d: accuracy=%.4f f1=%.4f macro_f1=%.4f (%.1fs)",
            config.architecture, config.embedding_dim, o.fold,
            o.metrics.accuracy, o.metrics.f1, o.metrics.macro_f1, o.seconds,
        )
    result = CrossvalResult(config=config, settings=settings,
                            coverage=matrix.coverage, outcomes=outcomes)
    log.info(
        "%s d=%d mean over %d folds: accuracy=%.4f f1=%.4f macro_f1=%.4f",
        config.architecture, config.embedding_dim, settings.folds,
        result.accuracy, result.f1, result.macro_f1,
    )
    return result


def train_full(
    corpus: LabeledCorpus,
    config: ModelConfig,
    settings: RunSettings,
    pretrained: dict[str, np.ndarray] | None = None,
) -> tuple[SentenceClassifier, Vocab, list[float], Metrics]:
    """Train one model on the whole corpus; returns it with its vocabulary,
    the loss history, and training-set metrics."""
    settings.validate()
    config = resolve_max_len(config, corpus)
    config.validate()
    vocab = build_vocab(corpus, min_count=settings.min_count)
    matrix = build_matrix(vocab, pretrained, config.embedding_dim, seed=settings.seed)
    ids, lengths, labels = encode_corpus(corpus, vocab, config.max_len)
    model = build(dataclasses.replace(config, seed=fold_seed(settings.seed, 0)), matrix)
    losses = train_model(model, ids, lengths, labels,
                         dataclasses.replace(settings, seed=fold_seed(settings.seed, 0)))
    metrics = evaluate_model(model, ids, lengths, labels)
    return model, vocab, losses, metrics


@dataclass(frozen=True)
class ReportRow:
    """One sweep cell: an architecture at one embedding dimension."""

    model: str
    embedding_dim: int
    fine_tune: bool
    accuracy: float
    f1: float
    macro_f1: float
    folds: int
    lr: float
    batch_size: int
    epochs: int
    seed: int
    max_len: int
    fold_accuracy: tuple[float, ...]
    fold_f1: tuple[float, ...]

    @classmethod
    def from_result(cls, result: CrossvalResult) -> "ReportRow":
        cfg, st = result.config, result.settings
        return cls(
            model=cfg.architecture,
            embedding_dim=cfg.embedding_dim,
            fine_tune=cfg.fine_tune,
            accuracy=result.accuracy,
            f1=result.f1,
            macro_f1=result.macro_f1,
            folds=st.folds,
            lr=st.lr,
            batch_size=st.batch_size,
            epochs=st.epochs,
            seed=st.seed,
            max_len=cfg.max_len,
            fold_accuracy=tuple(result.fold_accuracies),
            fold_f1=tuple(result.fold_f1s),
        )


def run_sweep(
    corpus: LabeledCorpus,
    architectures,
    dims,
    fine_tune_modes,
    config_template: ModelConfig,
    settings: RunSettings,
    vectors_by_dim=None,
) -> list[ReportRow]:
    """Cross-validate the full grid: dimension x architecture x fine-tune mode.

    `vectors_by_dim` maps a dimension to its pretrained vector dict (or is
    None / missing a key for random init). One report row per grid cell,
    dimension-major, in the order given.
    """
    rows: list[ReportRow] = []
    for dim in dims:
        pretrained = vectors_by_dim.get(dim) if vectors_by_dim else None
        for arch in architectures:
            for fine_tune in fine_tune_modes:
                cfg = dataclasses.replace(
                    config_template, architecture=arch, embedding_dim=dim, fine_tune=fine_tune,
                )
                started = time.perf_counter()
                result = run_crossval(corpus, cfg, settings, pretrained)
                rows.append(ReportRow.from_result(result))
                log.info(
                    "sweep cell %s d=%d fine_tune=%s done in %.1fs",
                    arch, dim, fine_tune, time.perf_counter() - started,
                )
    return rows


def _format_row(row: ReportRow) -> list[str]:
    return [
        row.model,
        str(row.embedding_dim),
        "true" if row.fine_tune else "false",
        f"{row.accuracy:.4f}",
        f"{row.f1:.4f}",
        str(row.folds),
        repr(float(row.lr)),
        str(row.batch_size),
        str(row.epochs),
        str(row.seed),
        str(row.max_len),
        f"{row.macro_f1:.4f}",
        ";".join(f"{v:.4f}" for v in row.fold_accuracy),
        ";".join(f"{v:.4f}" for v in row.fold_f1),
    ]


def render_report_csv(rows) -> str:
    """Comma-separated report text; fixed column order and float formatting
    keep the bytes identical across runs with the same seed."""
    lines = [",".join(CSV_COLUMNS)]
    lines += [",".join(_format_row(r)) for r in rows]
    return "\n".join(lines) + "\n"


def write_report_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_report_csv(rows))


def read_report_csv(path) -> list[dict]:
    """Parse a sweep report back into dicts keyed by column name."""
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def format_summary(rows) -> str:
    """Human-readable recap: the best dimension per architecture by F1."""
    if not rows:
        return "no results"
    by_model: dict[str, list[ReportRow]] = {}
    for r in rows:
        by_model.setdefault(r.model, []).append(r)
    lines = ["best configuration per model (by F1):"]
    for model in sorted(by_model):
        best = max(by_model[model], key=lambda r: (r.f1, r.accuracy, -r.embedding_dim))
        mode = "on" if best.fine_tune else "off"
        lines.append(
            f"  {model:7s} dim={best.embedding_dim:<4d} fine_tune={mode:3s} "
            f"accuracy={best.accuracy:.4f} f1={best.f1:.4f} macro_f1={best.macro_f1:.4f}"
        )
    return "\n".join(lines)
