"""Exception hierarchy shared across the package.

Errors split into three families so callers (CLI exit codes, HTTP status
mapping) can dispatch without string matching:

- ``ValidationError``: an input violates a documented invariant.
- ``FormatError``: a persisted artifact is corrupt or not ours.
- ``StorageError``: the filesystem failed underneath a valid request.
"""


class MatchscopeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MatchscopeError):
    """An input value violates a documented invariant or precondition."""


class FullyMaskedError(ValidationError):
    """Every pooling cell was masked away; no query signal remains."""


class NotFoundError(MatchscopeError):
    """A referenced entity (report, query, image) does not exist."""


class FormatError(MatchscopeError):
    """A file is not a valid instance of its declared binary/JSON format."""


class StorageError(MatchscopeError):
    """An I/O operation failed (missing file, unwritable destination)."""


class ExtractorError(MatchscopeError):
    """The external feature extractor is unreachable or answered garbage."""
