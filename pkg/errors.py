"""
Exceptions raised by the sampling toolkit.
The CLI maps ConfigurationError to exit status 2 and NumericalError to 3.
"""


class ConfigurationError(ValueError):
    """Invalid sizes, ranges or settings."""


class PreconditionError(ValueError):
    """An operation was called with inputs outside its precondition."""


class ObservationError(ValueError):
    """Observation points or data that do not fit the domain or each other."""


class NumericalError(ArithmeticError):
    """Non-finite intermediate values or failed numerical procedures."""


class SolverError(NumericalError):
    """Linear solve failure, with diagnostics attached."""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class MixtureFitError(NumericalError):
    """The ensemble cannot support a Gaussian mixture fit."""


class LayerError(NumericalError):
    """Failure inside an SMC layer; carries the layer index."""

    def __init__(self, layer: int, cause: Exception):
        super().__init__(f"layer {layer}: {cause}")
        self.layer = layer
        self.cause = cause
