"""Exception hierarchy shared by every layer of the toolkit."""

from __future__ import annotations


class FreqMaskError(Exception):
    """Base class for all errors raised by freqmask."""


class ValidationError(FreqMaskError, ValueError):
    """Input does not satisfy a documented precondition."""


class MissingColumnError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class NestingError(ValidationError):
    """A finer hierarchy unit appears under more than one coarser unit."""

    def __init__(self, level: str, unit: str, parents: tuple[str, str], parent_level: str):
        self.level = level
        self.unit = unit
        self.parents = parents
        self.parent_level = parent_level
        super().__init__(
            f"hierarchy nesting violated: {level}={unit!r} appears under "
            f"{parent_level}={parents[0]!r} and {parent_level}={parents[1]!r}"
        )


class InconsistentMaskError(ValidationError):
    """A (true, masked) pair cannot have been produced by small cell adjustment."""

    def __init__(self, index: int, true: int, masked: int, k: int):
        self.index = index
        self.true = true
        self.masked = masked
        self.k = k
        super().__init__(
            f"cell {index}: masked count {masked} is not a valid SCA output "
            f"for true count {true} with K={k}"
        )


class PreconditionError(ValidationError):
    """An internal dispatch handed a routine input outside its domain."""


class UnknownValueError(ValidationError):
    """A query or request references a variable or category that does not exist."""


class StorageError(FreqMaskError):
    """Base class for problems reading or writing a persisted table."""


class MalformedTableError(StorageError):
    pass


class SchemaVersionError(StorageError):
    pass


class IntegrityError(StorageError):
    """Checksum mismatch or a stored row that breaks a table invariant."""


class EnumerationBudgetExceeded(FreqMaskError):
    """Brute-force enumeration would visit more vectors than allowed."""


class UnreachableReleaseError(FreqMaskError):
    """A released value could not have been produced by the declared mechanism."""
