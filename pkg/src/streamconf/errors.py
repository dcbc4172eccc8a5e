"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value violates its constraints."""


class InvalidMaskError(ValueError):
    """An attention mask has a fully-masked row."""


class StatsError(ValueError):
    """Attention statistics accumulated at an inconsistent length."""


class InfeasibleAlignmentError(ValueError):
    """Target sequence cannot be aligned within the given frame count."""

    def __init__(self, msg, required_length=None):
        super().__init__(msg)
        self.required_length = required_length


class UnsupportedVariantError(ValueError):
    """Operation only defined for a subset of encoder variants."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. empty reference)."""


class SearchError(ValueError):
    """Width search target is unreachable."""
