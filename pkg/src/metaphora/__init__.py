"""Metaphora: sentence-level metaphor detection built from first principles.

A small reverse-mode autodiff tensor core, convolutional / bidirectional
recurrent / recurrent-convolutional sentence classifiers over pretrained word
embeddings, Adam training on the Bernoulli NLL, stratified k-fold evaluation,
and an embedding-dimension sweep harness with CSV reporting.
"""

from .data import (
    LabeledCorpus,
    Metrics,
    Vocab,
    build_vocab,
    compute_metrics,
    encode,
    encode_corpus,
    load_corpus,
    save_corpus,
    stratified_kfold,
    tokenize,
)
from .embeddings import EmbeddingMatrix, build_matrix, load_vec, save_vec
from .errors import (
    ConfigError,
    ContractError,
    DataFormatError,
    DimensionError,
    EmptySequenceError,
    EvaluationError,
    MetaphoraError,
    ParameterError,
    StratificationError,
    VocabularyError,
)
from .experiment import (
    CrossvalResult,
    ReportRow,
    RunSettings,
    evaluate_model,
    format_summary,
    render_report_csv,
    run_crossval,
    run_sweep,
    train_full,
    train_model,
    write_report_csv,
)
from .models import (
    ARCHITECTURES,
    ModelConfig,
    SentenceClassifier,
    build,
    load_checkpoint,
    save_checkpoint,
)
from .optim import Adam, clip_grad_norm
from .tensor import Tensor, backward, grad_check, no_grad, set_default_dtype

__version__ = "1.0.0"

__all__ = [
    "ARCHITECTURES",
    "Adam",
    "ConfigError",
    "ContractError",
    "CrossvalResult",
    "DataFormatError",
    "DimensionError",
    "EmbeddingMatrix",
    "EmptySequenceError",
    "EvaluationError",
    "LabeledCorpus",
    "MetaphoraError",
    "Metrics",
    "ModelConfig",
    "ParameterError",
    "ReportRow",
    "RunSettings",
    "SentenceClassifier",
    "StratificationError",
    "Tensor",
    "Vocab",
    "VocabularyError",
    "backward",
    "build",
    "build_matrix",
    "build_vocab",
    "clip_grad_norm",
    "compute_metrics",
    "encode",
    "encode_corpus",
    "evaluate_model",
    "format_summary",
    "grad_check",
    "load_checkpoint",
    "load_corpus",
    "load_vec",
    "no_grad",
    "render_report_csv",
    "run_crossval",
    "run_sweep",
    "save_checkpoint",
    "save_corpus",
    "save_vec",
    "set_default_dtype",
    "stratified_kfold",
    "tokenize",
    "train_full",
    "train_model",
    "write_report_csv",
]
