"""Exception hierarchy shared across the package."""


class GuesslabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GuesslabError, ValueError):
    """Invalid parameter or strategy configuration."""


class FormatError(GuesslabError, ValueError):
    """A file does not parse as the documented schema."""


class ValidationError(GuesslabError, ValueError):
    """Parsed data violates a documented invariant."""


class ParseError(GuesslabError, ValueError):
    """A token sequence is not a complete question of the grammar."""


class SequenceCompleteError(GuesslabError, RuntimeError):
    """The automaton was advanced past the end-of-question marker."""


class InvalidContinuationError(GuesslabError, ValueError):
    """A token outside the current support was fed to the automaton."""


class TruncationError(GuesslabError, ValueError):
    """A length limit is too short for the grammar's templates."""


class EmptyCollectionError(GuesslabError, ValueError):
    """A metric was requested over an empty transcript collection."""


class AggregationError(GuesslabError, ValueError):
    """Reports with mismatched configurations were aggregated."""


class CapacityError(GuesslabError, ValueError):
    """Not enough transcripts to satisfy an annotation session."""
