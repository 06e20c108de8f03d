class AggVAEError(Exception):
    """Base class for every error raised by aggvae"""

    pass


class GeometryError(AggVAEError):
    """Invalid polygon or grid input"""

    pass


class PolygonFormatError(GeometryError):
    """Boundary file could not be read as a polygon FeatureCollection"""

    pass


class CoverageError(GeometryError):
    """A polygon contains no grid point"""

    def __init__(self, message: str, label: str = None) -> None:
        super().__init__(message)
        self.label = label


class OverlapError(GeometryError):
    """A grid point is strictly interior to two polygons"""

    pass


class GridError(GeometryError):
    """Grid cannot be built"""

    pass


class DimensionMismatch(AggVAEError):
    """Array shapes do not agree"""

    pass


class CholeskyError(AggVAEError):
    """Covariance is not positive definite even after jitter escalation"""

    def __init__(self, message: str, jitter: float = None) -> None:
        super().__init__(message)
        self.jitter = jitter


class PrecisionSpecError(AggVAEError):
    """Invalid CAR-family specification"""

    pass


class TrainingDiverged(AggVAEError):
    """VAE loss became NaN"""

    def __init__(self, message: str, epoch: int = None, batch: int = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class NonFiniteLogDensity(AggVAEError):
    """Log posterior evaluated to a non-finite value"""

    def __init__(self, message: str, params=None, chain: int = None, value: float = None) -> None:
        super().__init__(message)
        self.params = params
        self.chain = chain
        self.value = value


class ConfigError(AggVAEError):
    """Invalid pipeline configuration"""

    pass


class FileFormatError(AggVAEError):
    """Serialized artifact is malformed or inconsistent"""

    pass
