"""Exception taxonomy shared across the package."""


class FormatError(ValueError):
    """A file exists but its contents violate the expected format."""


class NumericError(ValueError):
    """A computation produced or received non-finite values."""


class OracleError(RuntimeError):
    """The scoring oracle failed mid-run.

    Carries whatever per-iteration diagnostics were collected before the
    failure so a partial run can still be inspected.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or []


class TransportError(OracleError):
    """The wire endpoint is unreachable, died, or timed out."""


class ProtocolError(OracleError):
    """The endpoint responded with something that is not valid protocol v1."""


class ContractError(OracleError):
    """The endpoint responded with well-formed messages that contradict
    its handshake (wrong score length, level count, or level dims)."""
