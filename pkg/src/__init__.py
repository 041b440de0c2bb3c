"""PaQS simulator - continuous weak measurement with locally optimal feedback."""

__version__ = "0.1.0"
