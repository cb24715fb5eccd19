"""Exception types shared across the package."""


class StegoFieldError(Exception):
    """Base class for package-specific failures."""


class DataError(StegoFieldError):
    """Malformed or inconsistent external data (key files, datasets, checkpoints)."""


class NumericsError(StegoFieldError):
    """Non-finite values detected during optimization or rendering."""
