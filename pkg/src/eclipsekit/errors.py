"""Exception hierarchy shared across the package."""


class EclipseKitError(Exception):
    """Base class for every error raised by eclipsekit."""


class MeshError(EclipseKitError):
    pass


class GeometryError(EclipseKitError):
    pass


class MasconError(EclipseKitError):
    pass


class BoundaryError(EclipseKitError):
    pass


class DatasetError(EclipseKitError):
    pass


class ModelError(EclipseKitError):
    pass


class TrainingError(EclipseKitError):
    pass


class PropagationError(EclipseKitError):
    pass


class ConfigError(EclipseKitError):
    pass
