"""Exception types shared across the package.

Argument errors (bad shapes, out-of-range values, non-finite inputs) raise
plain ``ValueError``; the classes below cover the two remaining families.
"""


class StateError(RuntimeError):
    """An operation was called on an object in the wrong state
    (e.g. querying distances against an empty memory bank)."""


class FormatError(ValueError):
    """A serialized blob is malformed: bad magic, unsupported version,
    truncated payload, or non-finite values."""
