"""Exception hierarchy shared by every module."""


class CausalDiffusionError(Exception):
    """Base class for all package errors."""


class ValidationError(CausalDiffusionError, ValueError):
    """Input violates a precondition; raised before any compute starts."""


class CycleDetected(ValidationError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(map(str, self.cycle)))


class UnknownNode(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DimensionMismatch(ValidationError):
    pass


class SingularMatrix(ValidationError):
    pass


class InvalidAdjacency(ValidationError):
    pass


class NotPositiveDefinite(ValidationError):
    pass


class UnknownBenchmark(ValidationError):
    pass


class InvalidSize(ValidationError):
    pass


class MissingExogenous(ValidationError):
    pass


class TooFewGridPoints(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class InvalidDim(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class InvalidRange(ValidationError):
    pass


class StepOutOfRange(ValidationError):
    pass


class MissingNodeData(ValidationError):
    pass


class InvalidHyper(ValidationError):
    pass


class MissingFactualValue(ValidationError):
    pass


class EmptySampleSet(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class NotFitted(CausalDiffusionError):
    pass


class CheckpointError(ValidationError):
    """Checkpoint failed to parse; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class QueryParseError(ValidationError):
    def __init__(self, token, message="malformed intervention"):
        self.token = token
        super().__init__(f"{message}: {token!r}")
