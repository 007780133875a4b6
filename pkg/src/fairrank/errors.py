"""Exception types shared across the package."""


class FairrankError(Exception):
    """Base class for domain errors raised by fairrank."""


class DataError(FairrankError):
    """Malformed or inconsistent input data."""


class ConfigError(FairrankError):
    """Invalid configuration value; message is prefixed with the field name."""


class TrainingDiverged(FairrankError):
    """A batch loss became non-finite during optimization."""


class UsageError(FairrankError):
    """Command line invoked incorrectly (maps to exit code 2)."""
