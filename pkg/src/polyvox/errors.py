"""Exception hierarchy. ``category`` is what the CLI prints on failure."""


class PolyvoxError(Exception):
    category = "runtime"


class ArgumentError(PolyvoxError, ValueError):
    category = "argument"


class FormatError(PolyvoxError, ValueError):
    category = "format"


class UnsupportedError(PolyvoxError, ValueError):
    category = "unsupported"


class ConfigError(PolyvoxError, ValueError):
    category = "config"


class DependencyError(PolyvoxError, FileNotFoundError):
    category = "dependency"


class NumericError(PolyvoxError, FloatingPointError):
    category = "numeric"


class InputTooShortError(ArgumentError):
    category = "input-too-short"


class SequenceLengthError(ArgumentError):
    category = "length"


class BackendError(PolyvoxError):
    category = "backend"
