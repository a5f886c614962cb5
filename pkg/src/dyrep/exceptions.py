class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InputError(ValueError):
    """Malformed user input (files, configs, non-mean-zero test functions)."""


class AuditWarning(UserWarning):
    """A hypothesis needed for a bound (e.g. doubling) is not satisfied."""
