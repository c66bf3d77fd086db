"""Type-length-value primitives.

Lengths and type numbers use the 1/3/5-byte variable-size encoding; the
encoder always emits the shortest form and the reader rejects anything
longer than necessary, so every accepted buffer re-encodes to itself.

An unrecognized type may be skipped only if it is "non-critical": type
numbers <= 31 and all odd numbers are critical.  Application-defined
fields therefore live in the even range starting at 128.
"""

from __future__ import annotations

from .errors import DecodeError, TruncatedError

# Core packet fields (standard numbers).
INTEREST = 5
DATA = 6
NAME = 7
GENERIC_COMPONENT = 8
IMPLICIT_DIGEST_COMPONENT = 1
META_INFO = 20
CONTENT = 21
SIGNATURE_INFO = 22
SIGNATURE_VALUE = 23
FRESHNESS_PERIOD = 25
SIGNATURE_TYPE = 27
KEY_LOCATOR = 28
APP_PARAMETERS = 36

# Application fields (even, >= 128).
ECDH_PUB = 128
SALT = 130
REQUEST_ID = 132
CHALLENGE_STATUS = 134
PARAMETER_KEY = 136
PARAMETER_VALUE = 138
ISSUED_CERT_NAME = 140
VALIDITY_PERIOD = 142
SIG_NONCE = 144
SIG_TIME = 146
PUBLIC_KEY_BITS = 148
CHALLENGE_ID = 150
REDIRECT = 152
AEAD_IV = 156
AEAD_CIPHERTEXT = 158
MAX_VALIDITY = 160
NAME_PATTERN = 162
PROFILE_VERSION = 164
CERT_BYTES = 166
REVOKE_REASON = 168
REVOKE_SIGNED_BY = 170
LOG_SEQUENCE = 172
LOG_RECORD_TYPE = 174
LOG_PAYLOAD_DIGEST = 176
LOG_PREV_HASH = 178
LOG_RECORD_HASH = 180
LOG_TIMESTAMP = 182
LOG_SIGNATURE = 184
LOG_RECORD = 186
ERROR_CODE = 188
ERROR_INFO = 190

_MAX_VARNUM = 0xFFFFFFFF


def is_critical(typ: int) -> bool:
    return typ <= 31 or typ % 2 == 1


def encode_varnum(n: int) -> bytes:
    if n < 0 or n > _MAX_VARNUM:
        raise ValueError(f"varnum out of range: {n}")
    if n < 0xFD:
        return n.to_bytes(1, "big")
    if n <= 0xFFFF:
        return b"\xfd" + n.to_bytes(2, "big")
    return b"\xfe" + n.to_bytes(4, "big")


def encode_tlv(typ: int, value: bytes) -> bytes:
    return encode_varnum(typ) + encode_varnum(len(value)) + value


def encode_nonneg(n: int) -> bytes:
    """Shortest of 1/2/4/8 big-endian bytes (canonical integer field)."""
    if n < 0:
        raise ValueError("negative integer field")
    for size in (1, 2, 4, 8):
        if n < 1 << (8 * size):
            return n.to_bytes(size, "big")
    raise ValueError(f"integer field out of range: {n}")


def decode_nonneg(value: bytes) -> int:
    if len(value) not in (1, 2, 4, 8):
        raise DecodeError(f"bad integer field length {len(value)}")
    n = int.from_bytes(value, "big")
    if encode_nonneg(n) != value:
        raise DecodeError("non-canonical integer field")
    return n


class TlvReader:
    """Cursor over a byte buffer yielding (type, value) pairs."""

    __slots__ = ("_buf", "offset", "end")

    def __init__(self, buf: bytes, offset: int = 0, end: int | None = None):
        self._buf = buf
        self.offset = offset
        self.end = len(buf) if end is None else end

    @property
    def at_end(self) -> bool:
        return self.offset >= self.end

    def _read_varnum(self) -> int:
        if self.offset >= self.end:
            raise TruncatedError("varnum at end of buffer")
        first = self._buf[self.offset]
        self.offset += 1
        if first < 0xFD:
            return first
        if first == 0xFD:
            size, floor = 2, 0xFD
        elif first == 0xFE:
            size, floor = 4, 0x10000
        else:
            raise DecodeError("8-byte varnum not supported")
        if self.offset + size > self.end:
            raise TruncatedError("truncated varnum")
        n = int.from_bytes(self._buf[self.offset : self.offset + size], "big")
        self.offset += size
        if n < floor:
            raise DecodeError("non-canonical varnum")
        return n

    def peek_type(self) -> int:
        saved = self.offset
        try:
            return self._read_varnum()
        finally:
            self.offset = saved

    def read_tlv(self) -> tuple[int, bytes]:
        typ = self._read_varnum()
        length = self._read_varnum()
        if self.offset + length > self.end:
            raise TruncatedError(f"type {typ} length {length} exceeds buffer")
        value = self._buf[self.offset : self.offset + length]
        self.offset += length
        return typ, bytes(value)

    def read_expected(self, typ: int) -> bytes:
        got, value = self.read_tlv()
        if got != typ:
            raise DecodeError(f"expected type {typ}, got {got}")
        return value

    def expect_end(self) -> None:
        if not self.at_end:
            raise DecodeError(f"{self.end - self.offset} trailing bytes")
