"""Exception hierarchy.

Every localization failure carries a ``kind`` string; the simulator copies it
into the ``status`` of a failed :class:`~cellloc.metrics.LocalizationResult`.
"""


class LocalizationError(Exception):
    kind = "error"


class ConfigurationError(LocalizationError, ValueError):
    kind = "configuration"


class TimingError(LocalizationError, ValueError):
    """A timing sample that cannot describe a physical signal path."""

    kind = "timing"


class InconsistentMeasurementError(LocalizationError, ValueError):
    """Loop inversion produced a negative distance."""

    kind = "inconsistent-measurement"


class DegenerateGeometryError(LocalizationError, ValueError):
    kind = "degenerate-topology"


class DegenerateTopologyError(DegenerateGeometryError):
    """No non-collinear (serving, slave, slave) triple is available."""


class ProtocolOrderError(LocalizationError):
    kind = "protocol-order"


class RoutingError(LocalizationError):
    kind = "routing"


class DecodeError(LocalizationError, ValueError):
    kind = "decode"


class ComparisonError(LocalizationError, ValueError):
    kind = "comparison"
