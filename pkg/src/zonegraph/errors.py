"""Exception hierarchy. Every error carries a short machine-parsable category."""


class ZonegraphError(Exception):
    category = "internal"


class FormatError(ZonegraphError):
    """A file's contents violate its documented format."""

    category = "format"


class ConfigError(ZonegraphError):
    """Inconsistent or invalid configuration / preconditions."""

    category = "config"


class UsageError(ZonegraphError):
    """An API or CLI surface was called incorrectly."""

    category = "usage"


class GenerationError(ZonegraphError):
    """Procedural scene generation could not satisfy its invariants."""

    category = "generation"


class UnknownCategoryError(ZonegraphError, KeyError):
    """Category lookup failed in a file-backed embedding table."""

    category = "lookup"

    def __str__(self):  # KeyError quotes its message; keep it plain
        return Exception.__str__(self)


class UnreachableGoalError(ZonegraphError):
    """No reachable cell satisfies the success predicate for the goal."""

    category = "unreachable"


class NonFiniteError(ZonegraphError):
    """A gradient or loss stopped being finite; the update was rejected."""

    category = "numeric"
