"""Exception types raised across the package.

Plain argument problems raise the builtin ``ValueError``; the classes here
name the failure kinds callers may want to catch separately.
"""

import numpy as np


class SchemaError(ValueError):
    """Input file does not follow the expected column layout."""


class ParseError(ValueError):
    """A cell could not be parsed; message carries row and column."""


class IntegrityError(ValueError):
    """Duplicate or inconsistent records."""


class ShapeError(ValueError):
    """Array shapes do not agree."""


class TrainingError(RuntimeError):
    """Uncertainty-model training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConstructionError(ValueError):
    """Hypergraph has a vertex or hyperedge with zero degree."""


class SingularityError(np.linalg.LinAlgError):
    """Linear system is singular or too badly conditioned to trust."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(RuntimeError):
    """Iterative solver hit its iteration cap."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap
