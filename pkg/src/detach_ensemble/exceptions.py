class DataError(ValueError):
    """Input data is malformed or inconsistent with what an operation needs."""


class InvariantError(RuntimeError):
    """An internal consistency check failed."""
