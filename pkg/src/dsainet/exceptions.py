"""Exception hierarchy shared by every layer of the package."""


class DSAINetError(Exception):
    """Base class for all package errors."""


class DimensionError(DSAINetError, ValueError):
    """Operand shapes or axes are incompatible."""


class ConfigurationError(DSAINetError, ValueError):
    """A configuration record is internally inconsistent or incompatible with the data."""


class DataError(DSAINetError, ValueError):
    """Input data violates a contract (bad labels, malformed files, ...)."""


class ContractError(DSAINetError, RuntimeError):
    """An API was called out of order or with an unsupported argument."""
