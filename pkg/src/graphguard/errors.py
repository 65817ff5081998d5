"""Exception hierarchy shared across graphguard modules."""


class GraphGuardError(Exception):
    """Base class for all graphguard errors."""


# wire ---------------------------------------------------------------------

class WireError(GraphGuardError, ValueError):
    """Raised when bytes cannot be parsed as (or serialized to) RTPS."""


class BadMagic(WireError):
    pass


class Truncated(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class BodyTooLarge(WireError):
    pass


class NotPcap(GraphGuardError):
    pass


class CorruptRecord(GraphGuardError):
    """A capture record that could not be decoded; logged, never raised by readers."""

    def __init__(self, index, offset, reason):
        super().__init__(f"record {index} at offset {offset}: {reason}")
        self.index = index
        self.offset = offset
        self.reason = reason


# discovery ----------------------------------------------------------------

class DiscoveryError(GraphGuardError, ValueError):
    pass


class BadEncapsulation(DiscoveryError):
    pass


class UnterminatedList(DiscoveryError):
    pass


class LengthOverrun(DiscoveryError):
    pass


# graph / policy -----------------------------------------------------------

class InvalidName(GraphGuardError, ValueError):
    pass


class UnassignedNode(GraphGuardError, KeyError):
    def __str__(self):
        return f"node {self.args[0]!r} has no enclave assignment"


class VersionMismatch(GraphGuardError, ValueError):
    pass


class SchemaViolation(GraphGuardError, ValueError):
    def __init__(self, message, line=None, element=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if element is not None:
            where.append(f"<{element}>")
        text = f"{', '.join(where)}: {message}" if where else message
        super().__init__(text)
        self.line = line
        self.element = element


# pki ----------------------------------------------------------------------

class PkiError(GraphGuardError):
    pass


class AlreadyInitialized(PkiError):
    pass


class IoFailure(PkiError, OSError):
    pass


class UnknownEnclave(PkiError, KeyError):
    def __str__(self):
        return f"enclave {self.args[0]!r} is not defined by the policy"


class ChainFailure(PkiError):
    pass


class EmptyEnclave(PkiError, ValueError):
    pass


class KeyMissing(PkiError):
    pass


class SignatureInvalid(PkiError):
    pass


# monitor ------------------------------------------------------------------

class BadRecord(GraphGuardError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
