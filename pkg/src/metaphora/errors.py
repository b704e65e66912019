"""Exception types shared across the toolkit.

Everything raised on purpose derives from MetaphoraError so the command-line
layer can map failures onto stable exit codes.
"""


class MetaphoraError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(MetaphoraError):
    """Operands have incompatible shapes or ranks."""


class ContractError(MetaphoraError):
    """An operation was called in a way its contract forbids."""


class ParameterError(MetaphoraError):
    """A hyperparameter or mode argument is out of its legal range."""


class ConfigError(MetaphoraError):
    """A model or run configuration is inconsistent."""


class DataFormatError(MetaphoraError):
    """A corpus or embedding file could not be parsed."""


class VocabularyError(MetaphoraError):
    """A token id falls outside the vocabulary."""


class EmptySequenceError(MetaphoraError):
    """An operation that needs at least one token got none."""


class StratificationError(MetaphoraError):
    """A class is too small to spread over the requested folds."""


class EvaluationError(MetaphoraError):
    """A checked function produced a non-finite value."""
