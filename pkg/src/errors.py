"""Exception hierarchy for jacobi-rl.

Every error carries the exit code the CLI maps it to.
"""
from __future__ import annotations


class JacobiRLError(Exception):
    """Base class for all package errors.

    The default exit code covers runs that could not complete numerically;
    errors caused by bad input use the configuration code.
    """

    exit_code = 2


# --- Numerics ---

class DegeneratePivot(JacobiRLError, ValueError):
    """The pivot entry is already approximately zero."""


class IndexOutOfRange(JacobiRLError, IndexError):
    """An index pair or flat index outside the triangle."""

    exit_code = 3


class DimensionMismatch(JacobiRLError, ValueError):
    """Shapes of the operands do not agree."""

    exit_code = 3


# --- Decision processes ---

class IllegalAction(JacobiRLError, ValueError):
    """The pivot is not a legal move in this state."""

    exit_code = 3


class StepOnTerminal(JacobiRLError, ValueError):
    """A step was requested on a finished episode."""


class GameNotOver(JacobiRLError, ValueError):
    """A terminal value was requested before the game ended."""


class TerminalRoot(JacobiRLError, ValueError):
    """Search was started from a terminal state."""


class NoLegalActions(JacobiRLError, ValueError):
    """Search root has no legal action."""


# --- Learning ---

class SizeExceedsMax(JacobiRLError, ValueError):
    """Matrix is larger than the policy vector supports."""

    exit_code = 3


class NonFiniteLoss(JacobiRLError, ArithmeticError):
    """Training produced a NaN or infinite loss."""


class EmptyTrainingData(JacobiRLError, ValueError):
    """A training round had nothing to train on."""

    exit_code = 3


# --- Measurement ---

class DegenerateTable(JacobiRLError, ValueError):
    """A contingency table has a zero row or column total."""

    exit_code = 3


class NonConvergence(JacobiRLError):
    """Diagonalization did not reach the threshold within budget."""

    exit_code = 2


# --- Configuration and storage ---

class ConfigError(JacobiRLError, ValueError):
    """Invalid run configuration."""

    exit_code = 3


class StorageError(JacobiRLError, OSError):
    """Reading or writing a run artifact failed."""

    exit_code = 4


class CorruptFile(StorageError):
    """File exists but cannot be parsed."""


class VersionMismatch(StorageError):
    """Checkpoint format version is not supported."""


class MissingCheckpoint(StorageError, FileNotFoundError):
    """Checkpoint file does not exist."""
