"""Exception hierarchy shared across the package."""


class ReidError(Exception):
    """Base class for all errors raised by radreid."""


class DataError(ReidError):
    """Malformed or inconsistent input data."""


class EmptyDataset(DataError):
    pass


class CardinalityError(DataError):
    pass


class ProvenanceError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class LabelError(DataError, ValueError):
    pass


class DegenerateSegment(DataError, ValueError):
    pass


class InsufficientPoses(DataError):
    pass


class InvalidClusterCount(DataError, ValueError):
    pass


class SamplerError(DataError):
    pass


class StageViolation(DataError):
    pass


class PlacementError(DataError):
    pass


class ParamError(ReidError, ValueError):
    pass


class ConfigError(ReidError):
    pass


class NumericsError(ReidError, ArithmeticError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
