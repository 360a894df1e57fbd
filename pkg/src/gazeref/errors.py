"""Exception taxonomy shared by all modules.

Exit-code mapping for the CLI: usage errors are handled by argparse (1),
DataError subclasses map to 2, NumericError to 3.
"""


class GazerefError(Exception):
    pass


class DataError(GazerefError):
    """Invalid data, configuration, or file contents."""


class DimensionError(DataError):
    pass


class NumericError(GazerefError):
    """Non-finite values or numerical failure."""


class GeometryError(DataError):
    pass


class FormatError(DataError):
    """Malformed binary or JSON container."""


class ConfigError(DataError):
    pass


class VocabError(DataError):
    pass


class EmptyExpressionError(DataError):
    pass


class GenerationError(DataError):
    pass


class ContractError(GazerefError):
    """Caller violated an API precondition."""
