"""Error taxonomy shared across the engine.

The CLI maps these onto exit codes: usage problems exit 2 (argparse),
anything below exits 1 with the class name as the category prefix.
"""


class MixpropError(Exception):
    """Base class for all engine errors."""


class ContractError(MixpropError):
    """A precondition was violated (shape mismatch, empty input, ...)."""


class NumericFault(MixpropError):
    """A primitive produced NaN/Inf; the message names the primitive."""


class ParseError(MixpropError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(MixpropError):
    """A record violates a dataset invariant; carries the field name."""

    def __init__(self, message, field=None, line=None):
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"field '{field}': "
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class DegenerateSplitError(MixpropError):
    """A split produced an empty subset."""


class CapacityError(MixpropError):
    """A system exceeds the readout slot capacity."""


class DegenerateRotationError(MixpropError):
    """A learned quaternion collapsed to (near) zero norm."""


class CorrelationUndefinedError(MixpropError):
    """Correlation requested on a zero-variance vector."""
