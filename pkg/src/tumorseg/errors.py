"""Exception hierarchy shared by every module."""


class TumorSegError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(TumorSegError):
    """File does not look like a single-file NIfTI-1 image."""


class UnsupportedDatatype(TumorSegError):
    pass


class LabelDomainError(TumorSegError, ValueError):
    """A label volume holds a value outside {0, 1, 2, 3}."""


class FiniteValueError(TumorSegError, ValueError):
    pass


class IoError(TumorSegError, OSError):
    pass


class DegenerateInput(TumorSegError, ValueError):
    """Statistic is undefined for the given input (empty mask, zero spread...)."""


class ShapeError(TumorSegError, ValueError):
    pass


class RegionNestingError(TumorSegError, ValueError):
    """ET is not inside TC, or TC is not inside WT."""


class EmptyMaskError(TumorSegError, ValueError):
    pass


class ConfigError(TumorSegError, ValueError):
    pass
