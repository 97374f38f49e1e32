"""Exception hierarchy.

Three families map onto the CLI exit codes:

* ``FormatError``     -> exit 3 (structurally unreadable files, alongside OSError)
* ``ValidationError`` -> exit 1 (well-formed but invalid data, bad config, bad usage)
* ``NumericalError``  -> exit 2 (non-finite values or degenerate geometry at runtime)

Errors raised while parsing binary files carry the byte offset at which the
problem was detected.
"""

from __future__ import annotations


class MemespaceError(Exception):
    """Base class for every error raised by this package."""


class FormatError(MemespaceError):
    """A file is structurally unreadable (bad framing, not bad content)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class TruncatedFile(FormatError):
    """The byte count disagrees with the header (short body or trailing bytes)."""


class ValidationError(MemespaceError):
    """Content-level violation: the data parsed but does not satisfy a contract."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class InvariantViolation(ValidationError):
    pass


class ClassUnderpopulated(ValidationError):
    def __init__(self, label: int, count: int):
        super().__init__(f"class {label} has only {count} record(s); training needs >= 2 of each class")
        self.label = label
        self.count = count


class ParseError(ValidationError):
    """Config / spec JSON could not be parsed."""


class UnknownKey(ValidationError):
    def __init__(self, name: str):
        super().__init__(f"unknown config key: {name!r}")
        self.name = name


class OutOfRange(ValidationError):
    def __init__(self, name: str, detail: str = ""):
        message = f"config value out of range: {name!r}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
        self.name = name


class SingleClass(ValidationError):
    """AUROC is undefined when only one class is present."""


class NoCandidate(ValidationError):
    """A retrieval selection had no eligible row."""


class EmptyIndex(ValidationError):
    pass


class EmptyCorpus(ValidationError):
    pass


class UsageError(ValidationError):
    """Bad CLI flag combination."""


class NumericalError(MemespaceError):
    pass


class ZeroNormVector(NumericalError):
    """Cosine similarity requested on a zero-norm vector."""


class NonFiniteGradient(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass
