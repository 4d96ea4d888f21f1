"""Exception hierarchy.

``DataError`` subclasses signal problems with the input sample (CLI exit code 3),
``ConfigError`` subclasses signal invalid settings (exit code 2).
"""


class DopeError(Exception):
    """Base class for all package errors."""


class DataError(DopeError):
    pass


class ConfigError(DopeError, ValueError):
    pass


class MissingColumn(DataError):
    def __init__(self, name):
        super().__init__(f"column {name!r} not found")
        self.name = name


class NonNumericCell(DataError):
    def __init__(self, row, col, value):
        super().__init__(f"non-numeric value {value!r} in row {row}, column {col!r}")
        self.row = row
        self.col = col


class EmptyAfterDrop(DataError):
    pass


class TooFewRows(DataError):
    pass


class EmptyStratum(DataError):
    def __init__(self, label):
        super().__init__(f"no observations with treatment {label!r}")
        self.label = label


class EmptyIndexSet(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class RankDeficient(DataError):
    pass


class DimensionMismatch(ConfigError):
    pass


class BadFoldConfig(ConfigError):
    pass


class MissingArmEstimate(ConfigError):
    pass


class BootstrapFailure(DataError):
    pass


class PositivityViolation(DataError):
    pass


class NotARefinement(ConfigError):
    pass


class CIViolated(DataError):
    """A conditional-independence hypothesis fails on the supplied distribution."""


class AsymmetricGrid(ConfigError):
    pass


class QuadratureNonConvergence(DopeError):
    pass


class InfeasibleSizes(ConfigError):
    pass


class OverlappingIndexSets(ConfigError):
    pass
