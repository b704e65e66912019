"""Command-line surface: train, crossval, sweep, predict, gradcheck.

Configuration is a flat JSON document; every key can be overridden by a
command-line flag of the same name. Reports go to CSV (byte-identical across
reruns with the same seed), predictions to TSV, progress and timings to the
log on stderr.

Exit codes: 0 success, 2 configuration error, 3 data/input error,
4 gradient-check failure, 1 unexpected internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import gradcheck
from .data import encode_corpus, load_corpus, tokenize
from .embeddings import load_vec
from .errors import (
    ConfigError,
    DataFormatError,
    EmptySequenceError,
    MetaphoraError,
    ParameterError,
    StratificationError,
    VocabularyError,
)
from .experiment import (
    ReportRow,
    RunSettings,
    format_summary,
    predict_probabilities,
    render_report_csv,
    run_crossval,
    run_sweep,
    train_full,
    write_report_csv,
)
from .models import ARCHITECTURES, ModelConfig, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_GRADCHECK = 4

DEFAULTS: dict = {
    # model
    "architecture": None,
    "embedding_dim": 0,
    "max_len": 0,
    "kernel_heights": (3, 4, 5),
    "out_channels": 32,
    "hidden_size": 100,
    "fc_units": 100,
    "dropout_p": 0.5,
    "fine_tune": True,
    "bidirectional": True,
    "pooling": "max",
    # optimization / protocol
    "lr": 1e-3,
    "batch_size": 32,
    "epochs": 20,
    "folds": 10,
    "seed": 0,
    "min_count": 1,
    "workers": 1,
    "clip_norm": 0.0,
    "stratify": True,
    # paths and data handling
    "corpus": None,
    "vectors": None,
    "vec_pattern": None,
    "out": None,
    "checkpoint": None,
    "input": None,
    "lowercase": True,
    # sweep grid
    "dims": tuple(range(50, 501, 50)),
    "models": ARCHITECTURES,
    "fine_tune_modes": (True, False),
    # gradcheck
    "op_trials": 100,
    "arch_trials": 2,
}

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def _as_bool(key: str, value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in _BOOL_WORDS:
        return _BOOL_WORDS[value.lower()]
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _split_items(value) -> list:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _as_int(key: str, value) -> int:
    try:
        if isinstance(value, bool):
            raise ValueError
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _as_float(key: str, value) -> float:
    try:
        if isinstance(value, bool):
            raise ValueError
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _as_int_list(key: str, value) -> tuple[int, ...]:
    return tuple(_as_int(key, item) for item in _split_items(value))


def _as_str_list(key: str, value) -> tuple[str, ...]:
    return tuple(str(item) for item in _split_items(value))


def _as_bool_list(key: str, value) -> tuple[bool, ...]:
    return tuple(_as_bool(key, item) for item in _split_items(value))


def _as_str(key: str, value):
    return None if value is None else str(value)


_COERCERS = {
    "architecture": _as_str,
    "embedding_dim": _as_int,
    "max_len": _as_int,
    "kernel_heights": _as_int_list,
    "out_channels": _as_int,
    "hidden_size": _as_int,
    "fc_units": _as_int,
    "dropout_p": _as_float,
    "fine_tune": _as_bool,
    "bidirectional": _as_bool,
    "pooling": _as_str,
    "lr": _as_float,
    "batch_size": _as_int,
    "epochs": _as_int,
    "folds": _as_int,
    "seed": _as_int,
    "min_count": _as_int,
    "workers": _as_int,
    "clip_norm": _as_float,
    "stratify": _as_bool,
    "corpus": _as_str,
    "vectors": _as_str,
    "vec_pattern": _as_str,
    "out": _as_str,
    "checkpoint": _as_str,
    "input": _as_str,
    "lowercase": _as_bool,
    "dims": _as_int_list,
    "models": _as_str_list,
    "fine_tune_modes": _as_bool_list,
    "op_trials": _as_int,
    "arch_trials": _as_int,
}

KNOWN_KEYS = frozenset(_COERCERS)


def load_config_file(path: str) -> dict:
    """Read a flat JSON config; unknown keys are configuration errors."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"config file {path} has unknown keys: {', '.join(unknown)}")
    return raw


def merge_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON file, then explicit flags; values coerced per key."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for key in KNOWN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    for key, coerce in _COERCERS.items():
        if merged.get(key) is not None:
            merged[key] = coerce(key, merged[key])
    return merged


def _require(cfg: dict, key: str, why: str) -> None:
    if not cfg.get(key):
        raise ConfigError(f"{key} is required {why}")


def _resolve_vectors(cfg: dict):
    """Load the pretrained vectors (if any) and settle embedding_dim."""
    pretrained = None
    if cfg["vectors"]:
        pretrained, dim = load_vec(cfg["vectors"])
        if cfg["embedding_dim"] in (0, dim):
            cfg["embedding_dim"] = dim
        else:
            raise ConfigError(
                f"embedding_dim {cfg['embedding_dim']} does not match "
                f"{cfg['vectors']} (dimension {dim})"
            )
    elif cfg["embedding_dim"] < 1:
        raise ConfigError("embedding_dim is required when no vectors file is given")
    return pretrained


def _model_config(cfg: dict) -> ModelConfig:
    _require(cfg, "architecture", "to build a model")
    return ModelConfig(
        architecture=cfg["architecture"],
        embedding_dim=cfg["embedding_dim"],
        max_len=cfg["max_len"],
        kernel_heights=cfg["kernel_heights"],
        out_channels=cfg["out_channels"],
        hidden_size=cfg["hidden_size"],
        fc_units=cfg["fc_units"],
        dropout_p=cfg["dropout_p"],
        fine_tune=cfg["fine_tune"],
        bidirectional=cfg["bidirectional"],
        pooling=cfg["pooling"],
        seed=cfg["seed"],
    ).normalized()


def _run_settings(cfg: dict) -> RunSettings:
    settings = RunSettings(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        folds=cfg["folds"],
        seed=cfg["seed"],
        min_count=cfg["min_count"],
        workers=cfg["workers"],
        clip_norm=cfg["clip_norm"],
        stratify=cfg["stratify"],
    )
    settings.validate()
    return settings


def cmd_train(cfg: dict) -> int:
    _require(cfg, "corpus", "to train on")
    _require(cfg, "checkpoint", "as the output path for the trained model")
    corpus = load_corpus(cfg["corpus"], lowercase=cfg["lowercase"])
    pretrained = _resolve_vectors(cfg)
    config = _model_config(cfg)
    settings = _run_settings(cfg)
    model, vocab, losses, metrics = train_full(corpus, config, settings, pretrained)
    for epoch, loss in enumerate(losses, start=1):
        log.info("epoch %d/%d: mean loss %.6f", epoch, len(losses), loss)
    log.info(
        "training-set metrics: accuracy=%.4f f1=%.4f macro_f1=%.4f",
        metrics.accuracy, metrics.f1, metrics.macro_f1,
    )
    save_checkpoint(model, cfg["checkpoint"], vocab)
    log.info("checkpoint written to %s", cfg["checkpoint"])
    print(cfg["checkpoint"])
    return EXIT_OK


def cmd_crossval(cfg: dict) -> int:
    _require(cfg, "corpus", "to cross-validate on")
    corpus = load_corpus(cfg["corpus"], lowercase=cfg["lowercase"])
    pretrained = _resolve_vectors(cfg)
    config = _model_config(cfg)
    settings = _run_settings(cfg)
    result = run_crossval(corpus, config, settings, pretrained)
    rows = [ReportRow.from_result(result)]
    if cfg["out"]:
        write_report_csv(rows, cfg["out"])
        log.info("report written to %s", cfg["out"])
    else:
        sys.stdout.write(render_report_csv(rows))
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    _require(cfg, "corpus", "to sweep over")
    corpus = load_corpus(cfg["corpus"], lowercase=cfg["lowercase"])
    dims = cfg["dims"]
    vectors_by_dim = None
    if cfg["vec_pattern"]:
        if "{dim}" not in cfg["vec_pattern"]:
            raise ConfigError("vec_pattern must contain a {dim} placeholder")
        paths = {dim: cfg["vec_pattern"].format(dim=dim) for dim in dims}
        missing = sorted(dim for dim, p in paths.items() if not os.path.exists(p))
        if missing:
            raise DataFormatError(
                "missing embedding files for dimensions "
                f"{', '.join(str(d) for d in missing)} (pattern {cfg['vec_pattern']})"
            )
        vectors_by_dim = {}
        for dim, path in paths.items():
            vectors, file_dim = load_vec(path)
            if file_dim != dim:
                raise ConfigError(f"{path} holds {file_dim}-dimensional vectors, expected {dim}")
            vectors_by_dim[dim] = vectors
    template = ModelConfig(
        architecture="cnn",  # placeholder; the grid overrides it per cell
        embedding_dim=1,
        max_len=cfg["max_len"],
        kernel_heights=cfg["kernel_heights"],
        out_channels=cfg["out_channels"],
        hidden_size=cfg["hidden_size"],
        fc_units=cfg["fc_units"],
        dropout_p=cfg["dropout_p"],
        fine_tune=cfg["fine_tune"],
        bidirectional=cfg["bidirectional"],
        pooling=cfg["pooling"],
        seed=cfg["seed"],
    )
    settings = _run_settings(cfg)
    rows = run_sweep(
        corpus, cfg["models"], dims, cfg["fine_tune_modes"], template, settings, vectors_by_dim,
    )
    out = cfg["out"] or "report.csv"
    write_report_csv(rows, out)
    log.info("report written to %s", out)
    print(format_summary(rows))
    return EXIT_OK


def cmd_predict(cfg: dict) -> int:
    _require(cfg, "checkpoint", "to load the model from")
    _require(cfg, "input", "as the sentences file to label")
    model, vocab = load_checkpoint(cfg["checkpoint"])
    if vocab is None:
        raise ConfigError(f"{cfg['checkpoint']} stores no vocabulary; cannot encode raw text")
    if len(vocab) != model.embedding.vocab_size:
        raise ConfigError(
            f"{cfg['checkpoint']}: vocabulary size {len(vocab)} does not match "
            f"embedding table rows {model.embedding.vocab_size}"
        )
    sentences: list[str] = []
    with open(cfg["input"], "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.rstrip("\n")
            if not text.strip():
                raise DataFormatError(f"{cfg['input']}:{lineno}: blank line; every line must hold a sentence")
            sentences.append(text)
    out_lines = []
    if sentences:
        from .data import LabeledCorpus

        corpus = LabeledCorpus(
            examples=[(tokenize(s, lowercase=cfg["lowercase"]), 0) for s in sentences],
            provenance=cfg["input"],
        )
        for row, (tokens, _) in enumerate(corpus.examples, start=1):
            if not tokens:
                raise DataFormatError(
                    f"{cfg['input']}:{row}: no tokens survive normalization"
                )
        ids, lengths, _ = encode_corpus(corpus, vocab, model.config.max_len)
        probs = predict_probabilities(model, ids, lengths)
        for sentence, p in zip(sentences, probs):
            label = "metaphor" if p > 0.5 else "literal"
            out_lines.append(f"{p:.6f}\t{label}\t{sentence}")
    text = "".join(line + "\n" for line in out_lines)
    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        log.info("%d predictions written to %s", len(out_lines), cfg["out"])
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    report = gradcheck.run_all(
        seed=cfg["seed"], op_trials=cfg["op_trials"], arch_trials=cfg["arch_trials"],
    )
    print(report.format())
    return EXIT_OK if report.all_passed else EXIT_GRADCHECK


_COMMANDS = {
    "train": cmd_train,
    "crossval": cmd_crossval,
    "sweep": cmd_sweep,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def _add_flag(parser: argparse.ArgumentParser, key: str, help_text: str, metavar: str = "V") -> None:
    flag = "--" + key.replace("_", "-")
    parser.add_argument(flag, dest=key, default=None, help=help_text, metavar=metavar)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaphora",
        description="Sentence-level metaphor detection: training, cross-validation, "
                    "embedding-dimension sweeps, prediction, and gradient self-tests.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, metavar="FILE",
                       help="JSON file with flat keys; flags override it")
        p.add_argument("--verbose", action="store_true", help="debug-level logging")
        p.add_argument("--quiet", action="store_true", help="warnings and errors only")
        _add_flag(p, "seed", "base random seed (default 0)")

    p_train = sub.add_parser("train", help="train one model on a whole corpus, save a checkpoint")
    p_cross = sub.add_parser("crossval", help="stratified k-fold cross-validation of one configuration")
    p_sweep = sub.add_parser("sweep", help="cross-validate a grid of dimensions, models, fine-tune modes")
    p_pred = sub.add_parser("predict", help="label sentences with a trained checkpoint")
    p_grad = sub.add_parser("gradcheck", help="finite-difference self-test of every layer and model")

    for p in (p_train, p_cross, p_sweep, p_pred, p_grad):
        common(p)
    for p in (p_train, p_cross, p_sweep):
        _add_flag(p, "corpus", "labeled corpus TSV: label<TAB>sentence", "FILE")
        _add_flag(p, "lowercase", "lowercase text during tokenization (true/false)")
        _add_flag(p, "max_len", "sentence length cap; 0 = longest in corpus")
        _add_flag(p, "lr", "Adam learning rate")
        _add_flag(p, "batch_size", "minibatch size")
        _add_flag(p, "epochs", "training epochs")
        _add_flag(p, "min_count", "minimum token frequency kept in the vocabulary")
        _add_flag(p, "clip_norm", "max global gradient norm; 0 disables clipping")
        _add_flag(p, "dropout_p", "dropout probability on the pooled vector")
        _add_flag(p, "out_channels", "convolution channels per kernel height")
        _add_flag(p, "kernel_heights", "comma-separated kernel heights, e.g. 3,4,5")
        _add_flag(p, "hidden_size", "recurrent state width")
        _add_flag(p, "fc_units", "fully connected layer width")
        _add_flag(p, "bidirectional", "run recurrences in both directions (true/false)")
        _add_flag(p, "pooling", "max or avg pooling over time")
    for p in (p_train, p_cross):
        _add_flag(p, "architecture", "cnn, bilstm, bigru, or crnn")
        _add_flag(p, "embedding_dim", "embedding width (inferred from --vectors if given)")
        _add_flag(p, "vectors", "pretrained .vec file", "FILE")
        _add_flag(p, "fine_tune", "update embeddings during training (true/false)")
    for p in (p_cross, p_sweep):
        _add_flag(p, "folds", "number of cross-validation folds")
        _add_flag(p, "stratify", "preserve class balance across folds (true/false)")
        _add_flag(p, "workers", "parallel fold workers")
        _add_flag(p, "out", "CSV report path (crossval default: stdout)", "FILE")
    _add_flag(p_train, "checkpoint", "output checkpoint path", "FILE")
    _add_flag(p_sweep, "vec_pattern", ".vec path template with {dim}, one file per dimension", "PAT")
    _add_flag(p_sweep, "dims", "comma-separated embedding dimensions")
    _add_flag(p_sweep, "models", "comma-separated architectures")
    _add_flag(p_sweep, "fine_tune_modes", "comma-separated fine-tune modes, e.g. true,false")
    _add_flag(p_pred, "checkpoint", "trained checkpoint to load", "FILE")
    _add_flag(p_pred, "input", "text file, one sentence per line", "FILE")
    _add_flag(p_pred, "out", "TSV output path (default: stdout)", "FILE")
    _add_flag(p_pred, "lowercase", "lowercase text during tokenization (true/false)")
    _add_flag(p_grad, "op_trials", "randomized trials per operation (default 100)")
    _add_flag(p_grad, "arch_trials", "trials per architecture/length case (default 2)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(
        stream=sys.stderr, level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = merge_config(args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ParameterError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataFormatError, VocabularyError, EmptySequenceError, StratificationError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_DATA
    except MetaphoraError as exc:
        log.error("internal error: %s", exc)
        return EXIT_UNEXPECTED
    except Exception:  # pragma: no cover - last-resort diagnostics
        log.exception("unexpected error")
        return EXIT_UNEXPECTED


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
