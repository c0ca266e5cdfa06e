"""Exception hierarchy shared by the library and the CLI."""


class SakfError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SakfError, ValueError):
    """Malformed or out-of-range input data."""


class InvalidParameterError(SakfError, ValueError):
    """A configuration or numeric parameter violates its constraints."""


class DatasetError(SakfError):
    """Dataset directory or split cannot be used."""


class TrainingError(SakfError):
    """Training cannot proceed (e.g. an empty descriptor pool)."""


class ModelFormatError(SakfError):
    """A model file cannot be decoded."""


class NotAModelError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class CorruptModelError(ModelFormatError):
    pass


class StorageError(SakfError, OSError):
    """Reading or writing a file failed at the OS level."""
