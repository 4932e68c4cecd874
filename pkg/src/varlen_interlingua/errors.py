"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`DataError` -> 2,
:class:`NumericError` -> 3.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A NaN or Inf appeared in a tensor, or a loss went non-finite."""


class DataError(ValueError):
    """Corpus, vocabulary, config, or checkpoint content is invalid."""
