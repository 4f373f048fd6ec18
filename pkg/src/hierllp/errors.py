"""Exception hierarchy shared across the package."""


class HierLLPError(Exception):
    """Base class for all package errors."""


class ShapeError(HierLLPError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(HierLLPError):
    """An operand is outside the mathematical domain of the operation."""


class NumericalError(HierLLPError):
    """Non-finite values appeared where finite numbers are required."""


class DivergenceError(NumericalError):
    """Unrolled encoding produced a non-finite value; carries the layer index."""

    def __init__(self, layer: int, message: str | None = None):
        self.layer = layer
        super().__init__(message or f"non-finite code at unrolled layer {layer} "
                                    "(stepsize too small relative to the dictionary gram norm?)")


class StepsizeError(NumericalError):
    """Iterative soft-thresholding diverged (objective increased)."""


class InfiniteLossError(NumericalError):
    """A zero estimated proportion met a positive target proportion."""


class ParseError(HierLLPError):
    """Malformed serialized artifact; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class StaleManifestError(HierLLPError):
    """A bag manifest references a dataset with a different content hash."""


class ConfigError(HierLLPError):
    """Bad experiment configuration; carries the line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)
