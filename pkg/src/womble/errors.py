"""Exception types shared across the package."""


class WombleError(Exception):
    """Base class for all package errors."""


class ValidationError(WombleError):
    """Invalid user input: malformed files, out-of-range values, bad shapes."""


class ConstantMetricError(ValidationError):
    """A dissimilarity metric is constant across all borders (sigma = 0)."""

    def __init__(self, metric_name: str):
        self.metric_name = metric_name
        super().__init__(
            f"metric {metric_name!r} has zero standard deviation over borders "
            "and cannot be standardized; drop it or supply informative values"
        )


class NumericError(WombleError):
    """A numerical operation failed in a way that indicates bad data or a bug."""
