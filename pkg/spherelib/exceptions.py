from typing import Optional


class SpherelibException(Exception):
    """
    General exception raised for the spherelib modules.
    """

    pass


class DomainError(SpherelibException, ValueError):
    """
    Raised when a numeric argument lies outside the domain of an operation.
    """

    pass


class DimensionError(SpherelibException, ValueError):
    """
    Raised when array shapes are incompatible.
    """

    pass


class NonFiniteError(SpherelibException, ArithmeticError):
    """
    Raised when an input or a result contains NaN or infinite values.
    """

    pass


class IdxFormatError(SpherelibException):
    """
    Raised when an IDX file is malformed.

    Parameters
    ----------
    message : str
        Description of the problem.
    offset : int
        Byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(SpherelibException):
    """
    Raised when a checkpoint stream cannot be decoded.

    Parameters
    ----------
    message : str
        Description of the problem.
    offset : int
        Byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(SpherelibException, ValueError):
    """
    Raised when a configuration value is invalid.

    Parameters
    ----------
    field : str
        Dotted path of the offending field (e.g. ``"train.batch_size"``).
    message : str
        Description of the problem.
    line : int, optional
        Line of the configuration file where the problem was found, when known.
    """

    def __init__(self, field: str, message: str, line: Optional[int] = None) -> None:
        location = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}{location}: {message}")
        self.field = field
        self.message = message
        self.line = line


class DivergenceError(NonFiniteError):
    """
    Raised when training produces a non-finite loss or parameter.

    Parameters
    ----------
    iteration : int
        Iteration at which training diverged.
    lambda_ : float
        Annealing weight in effect at that iteration.
    learning_rate : float
        Learning rate in effect at that iteration.
    """

    def __init__(self, iteration: int, lambda_: float, learning_rate: float) -> None:
        super().__init__(
            f"Training diverged at iteration {iteration} "
            f"(lambda={lambda_!r}, learning rate={learning_rate!r})."
        )
        self.iteration = iteration
        self.lambda_ = lambda_
        self.learning_rate = learning_rate
