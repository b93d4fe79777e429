"""Exception hierarchy shared by all hipbone modules."""


class HipBoneError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(HipBoneError, ValueError):
    """Invalid problem or run configuration (box, rank count, CLI flags)."""


class SetupError(HipBoneError):
    """Inconsistent communication plans detected while building the gather-scatter."""


class StateError(HipBoneError, RuntimeError):
    """An operation was invoked out of pipeline order (e.g. halo values missing)."""


class TransportError(HipBoneError):
    """Message delivery failed between two ranks."""


class ProtocolError(TransportError):
    """A frame or routing header could not be decoded."""


class BreakdownError(HipBoneError, ArithmeticError):
    """Conjugate gradients hit a non-positive curvature or non-finite value."""


class OracleError(HipBoneError):
    """The dense reference refused the request or its factorization failed."""
