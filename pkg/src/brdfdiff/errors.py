"""Exception hierarchy.

The three top-level families map onto CLI exit codes: configuration
problems (2), bad input data (3) and numeric failures (4).
"""


class BrdfDiffError(Exception):
    pass


class ConfigError(BrdfDiffError, ValueError):
    pass


class DataError(BrdfDiffError, ValueError):
    pass


class NumericError(BrdfDiffError, ArithmeticError):
    pass


# brdf-core
class MerlFormatError(DataError):
    pass


class HeaderMismatch(MerlFormatError):
    pass


class Truncated(MerlFormatError):
    pass


class DegenerateHalfVector(DataError):
    pass


class BelowHorizon(DataError):
    pass


# shared
class DimensionMismatch(DataError):
    pass


class EmptySet(DataError):
    pass


class RankDeficient(DataError):
    pass


class NonFinite(NumericError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class GuidanceOutOfRange(ConfigError):
    pass


class ZeroPeak(DataError):
    pass


class Exhausted(NumericError):
    def __init__(self, attempts):
        super().__init__(f"no sample satisfied the category after {attempts} attempts")
        self.attempts = attempts
