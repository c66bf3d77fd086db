"""Exception hierarchy shared across the package.

Wire-level decode failures, crypto failures, and protocol-level rejections
are kept distinct so callers can map them to protocol status replies and
CLI exit codes without string matching.
"""

from __future__ import annotations


class NdncertError(Exception):
    """Base class for every error raised by this package."""


# --- wire codec ---

class DecodeError(NdncertError):
    """Input bytes are not a well-formed packet or payload."""


class TruncatedError(DecodeError):
    """A TLV length runs past the end of the buffer."""


class UnknownCriticalFieldError(DecodeError):
    """An unrecognized TLV that may not be skipped (odd type or type <= 31)."""


class DuplicateFieldError(DecodeError):
    """A field occurred twice, or out of canonical order."""


class MissingFieldError(DecodeError):
    """A required field is absent."""


# --- crypto ---

class CryptoError(NdncertError):
    pass


class InvalidPointError(CryptoError):
    """Peer ECDH value is off-curve, malformed, or the identity point."""


class AuthenticationFailedError(CryptoError):
    """AEAD tag check failed; the session must be aborted."""


class IvReplayError(CryptoError):
    """AEAD IV counter did not advance; replayed or reordered ciphertext."""


# --- certificates and validation ---

class MalformedCertNameError(NdncertError):
    """Name does not follow <identity>/KEY/[key-id]/[issuer-id]/[version]."""


# --- protocol ---

class ProtocolError(NdncertError):
    """Base for request-processing rejections; `code` names the error on the wire."""

    code = "protocol-error"


class ValidityTooLongError(ProtocolError):
    code = "validity-too-long"


class ClockSkewError(ProtocolError):
    """Requested notBefore lies in the future beyond tolerance."""

    code = "clock-skew"


class BadSignatureError(ProtocolError):
    code = "bad-signature"


class ReplayedError(ProtocolError):
    code = "replayed"


class StaleTimestampError(ProtocolError):
    code = "stale-timestamp"


class MalformedPayloadError(ProtocolError):
    code = "malformed-payload"


class UnknownRequestIdError(ProtocolError):
    code = "unknown-request-id"


class NameNotAllowedError(ProtocolError):
    code = "name-not-allowed"


class UnknownChallengeError(ProtocolError):
    code = "unknown-challenge"


class MissingParameterError(ProtocolError):
    code = "missing-parameter"


class ChallengeFailedError(ProtocolError):
    code = "challenge-failed"


class UnauthorizedError(ProtocolError):
    code = "unauthorized"


class UnknownCertError(ProtocolError):
    code = "unknown-cert"


class AlreadyRevokedError(ProtocolError):
    code = "already-revoked"


class StorageFailureError(ProtocolError):
    code = "storage-failure"


# --- client side ---

class ClientError(NdncertError):
    pass


class TimeoutError_(ClientError):
    """Interest went unanswered within its lifetime (kept distinct from builtins)."""


class UnfetchableError(ClientError):
    pass


class UntrustedProfileError(ClientError):
    pass


class RedirectedError(ClientError):
    """Redirect chain exceeded the auto-follow depth; carries the redirect list."""

    def __init__(self, msg: str, redirects=None):
        super().__init__(msg)
        self.redirects = redirects or []


class IssuerError(ClientError):
    """Issuer replied with an error status; `code` is the wire error code."""

    def __init__(self, code: str, info: str = ""):
        super().__init__(f"{code}: {info}" if info else code)
        self.code = code
        self.info = info


class ValidationFailedError(ClientError):
    """Issued certificate failed client-side checks; treated as issuer misbehavior."""


class RenewDeniedError(ClientError):
    """Issuer stopped renewing this name (implicit revocation)."""


# --- operator.  ---

class ConfigError(NdncertError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class DuplicatePrefixError(NdncertError):
    pass
