"""Exception hierarchy shared by every module."""


class ShapeAttackError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(ShapeAttackError, ValueError):
    """An argument violates a documented precondition."""


class ContractViolation(ShapeAttackError, RuntimeError):
    """An operation was called on state that does not satisfy its contract."""


class OracleError(ShapeAttackError):
    """The detector oracle could not produce detections."""


class OracleTransportError(OracleError):
    """Connection refused, reset, or a non-success HTTP status."""


class OracleTimeoutError(OracleError):
    """The remote detector did not answer in time."""


class OracleResponseError(OracleError):
    """The remote detector answered with a document we cannot parse."""


class TargetNotDetectedError(ShapeAttackError):
    """The clean frame's target is already below threshold; nothing to attack."""

    def __init__(self, objectness: float, threshold: float):
        super().__init__(
            f"target objectness {objectness:.4f} is below threshold {threshold}"
        )
        self.objectness = objectness
        self.threshold = threshold


class AttackAbortedError(ShapeAttackError):
    """Oracle failures exhausted the retry budget mid-run."""

    def __init__(self, message: str, fitness_trace, queries: int):
        super().__init__(message)
        self.fitness_trace = list(fitness_trace)
        self.queries = queries
