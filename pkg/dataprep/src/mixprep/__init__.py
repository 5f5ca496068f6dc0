"""Data preparation for the mixture-property engine.

Converts raw electrolyte tables (CSV) plus molecular structures into the
canonical JSON-lines format the engine consumes.
"""

__version__ = "0.1.0"


class LookupFailure(Exception):
    """A molecule identifier could not be resolved by any source."""


class ExportError(Exception):
    """The export produced no usable output."""
