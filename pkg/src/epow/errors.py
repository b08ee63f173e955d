"""Exception hierarchy shared by the package."""


class EPowError(Exception):
    """Base class for all package errors."""


class DimensionError(EPowError, ValueError):
    """Matrix shapes do not conform."""


class IncompleteError(EPowError):
    """A sub-task cannot be merged because partial results are missing."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        preview = ", ".join(str(m) for m in self.missing[:8])
        more = "" if len(self.missing) <= 8 else f" (+{len(self.missing) - 8} more)"
        super().__init__(f"missing nsub results: {preview}{more}")


class ClaimError(EPowError):
    """Claim request rejected by the coordinator."""


class SubmissionError(EPowError):
    """Result submission rejected (unknown or already decided assignment)."""


class NotFound(EPowError, KeyError):
    """Lookup target is unknown or has left the retention window."""


class ConfigError(EPowError, ValueError):
    """Scenario configuration violates an invariant."""
