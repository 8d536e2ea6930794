class LesionFuseError(Exception):
    """Base class for package errors."""


class DataError(LesionFuseError):
    """Bad dataset, label file, config file, or image input (CLI exit code 2)."""


class BundleError(LesionFuseError):
    """Bad or corrupted model bundle file (CLI exit code 3)."""
