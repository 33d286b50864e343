"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: ``DataError`` (3) for
anything wrong with the inputs, ``NumericError`` (4) for failures inside the
fitting machinery, and ``ConfigError`` (2) for bad arguments.
"""

from __future__ import annotations


class TsvcError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(TsvcError, ValueError):
    exit_code = 2


class InvalidArgs(ConfigError):
    pass


class InvalidConfig(ConfigError):
    pass


class UnknownScenario(ConfigError):
    pass


class DataError(TsvcError, ValueError):
    exit_code = 3


class InvalidResponse(DataError):
    pass


class InvalidIndex(DataError, IndexError):
    pass


class SchemaError(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class DegenerateData(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(row=self.row, column=self.column)
        return out


class MissingValue(ParseError):
    pass


class NumericError(TsvcError, ArithmeticError):
    exit_code = 4


class RankDeficient(NumericError):
    pass


class EmptyLeaf(NumericError):
    pass


class NoAdmissibleSplit(NumericError):
    pass
