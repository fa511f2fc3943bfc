"""
Typed errors raised by the forestkit library.

Every error carries the process exit code the command-line runner uses for it.
"""


class ForestKitError(Exception):
    """Base class for all forestkit errors"""
    exit_code = 1


class ArgumentError(ForestKitError):
    """Invalid argument, parameter or configuration value"""
    exit_code = 2


class ParseError(ForestKitError):
    """A cell that could not be parsed according to its declared column kind"""
    exit_code = 3

    def __init__(self, row, column, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Cannot parse value {value!r} in column '{column}' at row {row}")


class TargetMissingError(ForestKitError):
    """The target column has an empty cell"""
    exit_code = 3

    def __init__(self, row, column):
        self.row = row
        self.column = column
        super().__init__(f"Missing target value in column '{column}' at row {row}")


class SchemaError(ForestKitError):
    """Schema declaration inconsistent with the data"""
    exit_code = 4


class ModelFormatError(SchemaError):
    """Model file with a bad header, an unsupported version or an incompatible schema"""


class DegenerateError(ForestKitError):
    """The data cannot support the requested computation (e.g. no out-of-bag rows)"""
    exit_code = 5


# Exit code table used by the runner
EXIT_CODES = {
    "success": 0,
    "unexpected": ForestKitError.exit_code,
    "argument": ArgumentError.exit_code,
    "parse": ParseError.exit_code,
    "schema": SchemaError.exit_code,
    "degenerate": DegenerateError.exit_code,
}
