"""Interest and Data packet codec.

Wire layout (outer TLV type distinguishes the two):

  Interest(5) = Name(7) [AppParameters(36)] SigNonce(144) SigTime(146)
                [SignatureInfo(22) SignatureValue(23)]
  Data(6)     = Name(7) [MetaInfo(20)] Content(21)
                SignatureInfo(22) SignatureValue(23)

The signed portion of an Interest covers everything from Name (minus any
trailing implicit-digest component) through SignatureInfo; for a Data it is
the wire bytes from Name through SignatureInfo.  Unknown non-critical
fields are skipped on decode; fields must appear in the order above.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

from . import tlv
from .errors import (
    DecodeError,
    DuplicateFieldError,
    MissingFieldError,
    UnknownCriticalFieldError,
)
from .names import Name, decode_name_value, encode_name

MAX_PACKET_SIZE = 8800


class SignatureType(enum.IntEnum):
    SHA256_DIGEST = 0
    ECDSA_SHA256 = 3


@dataclass(frozen=True)
class SignatureInfo:
    signature_type: SignatureType
    key_locator: Name | None = None

    def encode(self) -> bytes:
        inner = tlv.encode_tlv(tlv.SIGNATURE_TYPE, tlv.encode_nonneg(int(self.signature_type)))
        if self.key_locator is not None:
            inner += tlv.encode_tlv(tlv.KEY_LOCATOR, encode_name(self.key_locator))
        return tlv.encode_tlv(tlv.SIGNATURE_INFO, inner)

    @classmethod
    def decode_value(cls, value: bytes) -> "SignatureInfo":
        reader = tlv.TlvReader(value)
        sig_type = tlv.decode_nonneg(reader.read_expected(tlv.SIGNATURE_TYPE))
        try:
            sig_type = SignatureType(sig_type)
        except ValueError:
            raise DecodeError(f"unknown signature type {sig_type}") from None
        key_locator = None
        if not reader.at_end and reader.peek_type() == tlv.KEY_LOCATOR:
            _, kl_value = reader.read_tlv()
            kl_reader = tlv.TlvReader(kl_value)
            key_locator = decode_name_value(kl_reader.read_expected(tlv.NAME))
            kl_reader.expect_end()
        reader.expect_end()
        return cls(SignatureType(sig_type), key_locator)


@dataclass
class InterestPacket:
    name: Name
    nonce: bytes
    timestamp_ms: int
    app_params: bytes | None = None
    sig_info: SignatureInfo | None = None
    sig_value: bytes | None = None

    def __post_init__(self):
        if len(self.nonce) != 8:
            raise ValueError("interest nonce must be 8 bytes")
        if self.sig_value is not None and self.sig_info is None:
            raise ValueError("signatureValue without signatureInfo")

    def signed_portion(self) -> bytes:
        if self.sig_info is None:
            raise MissingFieldError("interest has no signatureInfo")
        parts = [encode_name(self.name.strip_digest())]
        if self.app_params is not None:
            parts.append(tlv.encode_tlv(tlv.APP_PARAMETERS, self.app_params))
        parts.append(tlv.encode_tlv(tlv.SIG_NONCE, self.nonce))
        parts.append(tlv.encode_tlv(tlv.SIG_TIME, tlv.encode_nonneg(self.timestamp_ms)))
        parts.append(self.sig_info.encode())
        return b"".join(parts)

    def encode(self) -> bytes:
        parts = [encode_name(self.name)]
        if self.app_params is not None:
            parts.append(tlv.encode_tlv(tlv.APP_PARAMETERS, self.app_params))
        parts.append(tlv.encode_tlv(tlv.SIG_NONCE, self.nonce))
        parts.append(tlv.encode_tlv(tlv.SIG_TIME, tlv.encode_nonneg(self.timestamp_ms)))
        if self.sig_info is not None:
            parts.append(self.sig_info.encode())
            if self.sig_value is None:
                raise MissingFieldError("signatureInfo without signatureValue")
            parts.append(tlv.encode_tlv(tlv.SIGNATURE_VALUE, self.sig_value))
        return tlv.encode_tlv(tlv.INTEREST, b"".join(parts))


@dataclass
class DataPacket:
    name: Name
    content: bytes = b""
    freshness_ms: int = 0
    sig_info: SignatureInfo | None = None
    sig_value: bytes | None = None

    def signed_portion(self) -> bytes:
        if self.sig_info is None:
            raise MissingFieldError("data has no signatureInfo")
        return b"".join(self._front_fields()) + self.sig_info.encode()

    def _front_fields(self) -> list[bytes]:
        parts = [encode_name(self.name)]
        if self.freshness_ms > 0:
            meta = tlv.encode_tlv(tlv.FRESHNESS_PERIOD, tlv.encode_nonneg(self.freshness_ms))
            parts.append(tlv.encode_tlv(tlv.META_INFO, meta))
        parts.append(tlv.encode_tlv(tlv.CONTENT, self.content))
        return parts

    def encode(self) -> bytes:
        if self.sig_info is None or self.sig_value is None:
            raise MissingFieldError("data must be signed before encoding")
        inner = b"".join(self._front_fields()) + self.sig_info.encode()
        inner += tlv.encode_tlv(tlv.SIGNATURE_VALUE, self.sig_value)
        return tlv.encode_tlv(tlv.DATA, inner)

    def implicit_digest(self) -> bytes:
        return compute_implicit_digest(self.encode())

    def full_name(self) -> Name:
        """Data name extended with its implicit-digest component."""
        from .names import NameComponent

        return self.name.append(NameComponent.digest(self.implicit_digest()))


def compute_implicit_digest(packet_bytes: bytes) -> bytes:
    """SHA-256 over the complete encoded packet."""
    return hashlib.sha256(packet_bytes).digest()


# Field order tables: each known field must appear after the previous one.
_INTEREST_ORDER = {
    tlv.NAME: 0,
    tlv.APP_PARAMETERS: 1,
    tlv.SIG_NONCE: 2,
    tlv.SIG_TIME: 3,
    tlv.SIGNATURE_INFO: 4,
    tlv.SIGNATURE_VALUE: 5,
}
_DATA_ORDER = {
    tlv.NAME: 0,
    tlv.META_INFO: 1,
    tlv.CONTENT: 2,
    tlv.SIGNATURE_INFO: 3,
    tlv.SIGNATURE_VALUE: 4,
}


def _read_fields(value: bytes, order: dict[int, int]) -> dict[int, bytes]:
    reader = tlv.TlvReader(value)
    fields: dict[int, bytes] = {}
    rank = -1
    while not reader.at_end:
        typ, field_value = reader.read_tlv()
        if typ in order:
            if typ in fields:
                raise DuplicateFieldError(f"duplicate field {typ}")
            if order[typ] <= rank:
                raise DuplicateFieldError(f"field {typ} out of order")
            rank = order[typ]
            fields[typ] = field_value
        elif tlv.is_critical(typ):
            raise UnknownCriticalFieldError(f"unknown critical field {typ}")
        # unknown non-critical fields are skipped
    return fields


def _decode_signature(fields: dict[int, bytes]) -> tuple[SignatureInfo | None, bytes | None]:
    sig_info = None
    if tlv.SIGNATURE_INFO in fields:
        sig_info = SignatureInfo.decode_value(fields[tlv.SIGNATURE_INFO])
    sig_value = fields.get(tlv.SIGNATURE_VALUE)
    if sig_value is not None and sig_info is None:
        raise MissingFieldError("signatureValue without signatureInfo")
    if sig_info is not None and sig_value is None:
        raise MissingFieldError("signatureInfo without signatureValue")
    return sig_info, sig_value


def decode_packet(buf: bytes) -> InterestPacket | DataPacket:
    """Parse one packet, consuming exactly the outer TLV."""
    reader = tlv.TlvReader(buf)
    outer_type, value = reader.read_tlv()
    reader.expect_end()

    if outer_type == tlv.INTEREST:
        fields = _read_fields(value, _INTEREST_ORDER)
        for required in (tlv.NAME, tlv.SIG_NONCE, tlv.SIG_TIME):
            if required not in fields:
                raise MissingFieldError(f"interest missing field {required}")
        nonce = fields[tlv.SIG_NONCE]
        if len(nonce) != 8:
            raise DecodeError("interest nonce must be 8 bytes")
        sig_info, sig_value = _decode_signature(fields)
        return InterestPacket(
            name=decode_name_value(fields[tlv.NAME]),
            nonce=nonce,
            timestamp_ms=tlv.decode_nonneg(fields[tlv.SIG_TIME]),
            app_params=fields.get(tlv.APP_PARAMETERS),
            sig_info=sig_info,
            sig_value=sig_value,
        )

    if outer_type == tlv.DATA:
        fields = _read_fields(value, _DATA_ORDER)
        for required in (tlv.NAME, tlv.CONTENT, tlv.SIGNATURE_INFO, tlv.SIGNATURE_VALUE):
            if required not in fields:
                raise MissingFieldError(f"data missing field {required}")
        freshness_ms = 0
        if tlv.META_INFO in fields:
            meta_reader = tlv.TlvReader(fields[tlv.META_INFO])
            freshness_ms = tlv.decode_nonneg(meta_reader.read_expected(tlv.FRESHNESS_PERIOD))
            meta_reader.expect_end()
        sig_info, sig_value = _decode_signature(fields)
        return DataPacket(
            name=decode_name_value(fields[tlv.NAME]),
            content=fields[tlv.CONTENT],
            freshness_ms=freshness_ms,
            sig_info=sig_info,
            sig_value=sig_value,
        )

    raise DecodeError(f"unknown packet type {outer_type}")
