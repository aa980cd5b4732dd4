"""Shared exception types, mapped onto CLI exit codes by the front end."""


class ParseError(ValueError):
    """A file or value failed to parse / validate at ingestion (exit code 2)."""


class PreconditionError(ValueError):
    """An operation's statistical or numerical precondition failed (exit code 3)."""
