"""Shared exception types."""


class ValidationError(ValueError):
    """Bad input: shapes, labels, config fields, degenerate parameters."""


class DimensionError(ValidationError):
    """Tensor shape mismatch, carrying the offending layer index when known."""

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class ProtocolError(RuntimeError):
    """Protocol contract broken: stale caches, unknown clients, bad payloads."""


class UndefinedMetricError(ValidationError):
    """Metric has no defined value for this input (e.g. single-class AUROC)."""
