class SaltSpreadError(Exception):
    """Base class for all package errors."""


class InputError(SaltSpreadError, ValueError):
    """Malformed or out-of-range user input (CLI exit code 1)."""


class InvariantError(SaltSpreadError, RuntimeError):
    """An internal consistency check failed (CLI exit code 2)."""
