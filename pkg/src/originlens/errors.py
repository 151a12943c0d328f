"""Exception hierarchy shared by every layer of the engine."""


class OriginLensError(Exception):
    """Base class for all defined engine errors."""


class MalformedContainer(OriginLensError):
    """A JPEG/PNG byte stream violates its segment or chunk grammar."""


class UnsupportedFormat(OriginLensError):
    pass


class MalformedBox(OriginLensError):
    """JUMBF bytes cannot be parsed into a box tree."""


class InvalidTree(OriginLensError):
    """A box tree violates the invariants required for serialization."""


class ManifestParseError(OriginLensError):
    pass


class UnsupportedAlgorithm(OriginLensError):
    pass


class RangeOutOfBounds(OriginLensError):
    pass


class MalformedMetadata(OriginLensError):
    pass


class TransportError(OriginLensError):
    """A network layer call failed (timeout, non-2xx reply, bad JSON)."""


class UnreadableInput(OriginLensError):
    pass
