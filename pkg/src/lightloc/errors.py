"""Exception hierarchy shared across the package."""


class LightLocError(Exception):
    """Base class for every error raised by lightloc."""


class FrameMismatch(LightLocError):
    pass


class DegenerateGeometry(LightLocError):
    pass


class NoConsensus(LightLocError):
    pass


class LengthMismatch(LightLocError):
    pass


class TooFewSamples(LightLocError):
    pass


class ShapeMismatch(LightLocError):
    pass


class ZeroVector(LightLocError):
    pass


class InvalidConfig(LightLocError, ValueError):
    pass


class UnknownSample(LightLocError):
    pass


class WindowNotFull(LightLocError):
    pass


class WrongEpoch(LightLocError):
    pass


class InvalidSpec(LightLocError, ValueError):
    pass


class SingularInnovation(LightLocError):
    pass


class MissingArtifact(LightLocError):
    pass


class VersionMismatch(LightLocError):
    pass
