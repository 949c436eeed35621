"""Error taxonomy shared across the workbench."""


class NumericError(ArithmeticError):
    """A forward computation produced NaN or Inf."""


class ShapeError(ValueError):
    """Payload shape disagrees with the structure it applies to."""


class LengthError(ValueError):
    """A sequence violates a length bound."""


class VocabularyError(ValueError):
    """A token id falls outside the vocabulary or is reserved."""


class StateError(RuntimeError):
    """An operation was called on a hypothesis in the wrong phase."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""
