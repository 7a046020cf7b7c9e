"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors to 1, data and format
errors to 2, numeric failures to 3.
"""


class ClickIRError(Exception):
    exit_code = 2


class UsageError(ClickIRError):
    exit_code = 1


class DataError(ClickIRError):
    """Bad input data: unresolvable ids, malformed records, empty corpora."""

    exit_code = 2


class FormatError(DataError):
    """A binary or text file failed validation while loading."""


class NumericError(ClickIRError):
    exit_code = 3
