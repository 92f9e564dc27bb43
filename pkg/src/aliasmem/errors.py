class ConfigError(ValueError):
    """Invalid configuration or incompatible input dimensions."""


class DivergenceError(FloatingPointError):
    """Non-finite values appeared in a forward pass, loss or state."""


class BehindCameraError(ValueError):
    """A point projected with nonpositive depth."""


class DegenerateGeometryError(ValueError):
    """Camera pair with zero baseline or a singular intrinsic matrix."""
