"""Exception hierarchy shared by every alimnet module.

The CLI maps ``DataError`` to exit code 2 and ``NumericError`` to exit code 3.
"""


class AlimnetError(Exception):
    """Base class for all library errors."""


class DataError(AlimnetError, ValueError):
    """Bad input data: files, labels, shapes of user-provided arrays."""


class InvalidInputError(DataError):
    pass


class InvalidConfigError(DataError):
    pass


class DegenerateConfigError(InvalidConfigError):
    """A transform configuration that leaves no sample reconstructable."""


class ShapeError(DataError):
    pass


class ManifestError(DataError):
    def __init__(self, message, offenders=()):
        self.offenders = list(offenders)
        if self.offenders:
            message = f"{message}: {', '.join(map(str, self.offenders))}"
        super().__init__(message)


class TooShortError(DataError):
    pass


class ContainerError(DataError):
    """Malformed ALIM/ALMC binary container."""


class InvalidRequestError(DataError):
    pass


class NumericError(AlimnetError, ArithmeticError):
    """Non-finite values in a forward pass, gradient or loss."""
