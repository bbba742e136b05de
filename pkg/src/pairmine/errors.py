"""Exception types shared across the package."""

from __future__ import annotations


class PairmineError(Exception):
    """Base class for all library errors."""


class ManifestError(PairmineError):
    """Malformed manifest or persisted files inconsistent with it."""


class DataError(PairmineError, ValueError):
    """Invalid numeric content (NaN/Inf, shape or id violations)."""


class ZeroNormRowError(DataError):
    """A row that cannot be normalized, reported with its location."""

    def __init__(self, modality: str, row: int):
        super().__init__(f"zero-norm {modality} row at index {row}")
        self.modality = modality
        self.row = row


class ConfigError(PairmineError, ValueError):
    """Invalid configuration value."""


class DivergenceError(PairmineError):
    """Training loss became non-finite; carries the partial trace."""

    def __init__(self, iteration: int, trace):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace
