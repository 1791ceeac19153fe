"""Exception hierarchy shared by every module."""


class RBRMError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RBRMError, ValueError):
    pass


class SingularMatrixError(RBRMError, ArithmeticError):
    pass


class NumericalFailureError(RBRMError, ArithmeticError):
    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class OutOfRangeError(RBRMError):
    pass


class UnsupportedInputError(RBRMError, ValueError):
    pass


class ComplexityGuardError(RBRMError):
    pass


class NoPathError(RBRMError):
    pass


class ScenarioError(InvalidInputError):
    """Scenario file could not be parsed or validated.

    ``field`` holds the dotted path of the offending entry when known.
    """

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
