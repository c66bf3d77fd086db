"""NEW and CHALLENGE application payloads, and the signed-interest replay guard.

A NEW Interest carries the requester's ephemeral ECDH value plus the
certificate shell (requested name, public key bits, requested validity) and
is signed by the key being certified: possession of the private key is
proven by verifying the signature under the public key inside the payload.

CHALLENGE payloads carry only an AEAD box; parameters never appear on the
wire in plaintext.  The associated data binds the request id and the
carrying packet's name, and the IV counter gives per-direction replay
protection on top of the signatures.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field

from . import crypto, tlv
from .certs import key_name_of, parse_cert_name
from .errors import (
    BadSignatureError,
    DecodeError,
    InvalidPointError,
    MalformedCertNameError,
    MalformedPayloadError,
    ReplayedError,
    StaleTimestampError,
)
from .names import Name, decode_name_value, encode_name
from .packets import InterestPacket, SignatureInfo, SignatureType

REPLAY_WINDOW_MS = 60_000
REQUEST_ID_SIZE = 8
MAX_PARAMETER_KEY_LEN = 32
MAX_PARAMETER_VALUE_LEN = 1024

CA_COMPONENT = b"CA"
NEW_COMPONENT = b"NEW"
CHALLENGE_COMPONENT = b"CHALLENGE"
INFO_COMPONENT = b"INFO"
REVOKED_COMPONENT = b"REVOKED"
REVOKE_SUBMIT_COMPONENT = b"REVOKE"


class ChallengeStatus(enum.IntEnum):
    NEED_MORE = 1
    SUCCESS = 2
    FAILURE = 3


_last_signing_ts = 0
_signing_ts_lock = threading.Lock()


def fresh_signing_timestamp_ms(now_ms: int | None = None) -> int:
    """Strictly increasing timestamps for signed Interests.

    Receivers enforce per-key monotonicity, so a signer must never reuse a
    millisecond even when two packets are built within one.
    """
    global _last_signing_ts
    now_ms = int(time.time() * 1000) if now_ms is None else now_ms
    with _signing_ts_lock:
        _last_signing_ts = max(now_ms, _last_signing_ts + 1)
        return _last_signing_ts


def new_interest_name(ca_prefix: Name) -> Name:
    return ca_prefix.append(CA_COMPONENT, NEW_COMPONENT)


def challenge_interest_name(ca_prefix: Name, request_id: bytes) -> Name:
    return ca_prefix.append(CA_COMPONENT, CHALLENGE_COMPONENT, request_id.hex())


@dataclass
class CertRequestShell:
    """Unsigned certificate shell: what the requester asks to have certified."""

    name: Name
    public_key_bits: bytes
    not_before_ms: int
    not_after_ms: int

    def validate(self) -> None:
        try:
            identity, key_id, _, _ = parse_cert_name(self.name)
        except MalformedCertNameError as exc:
            raise MalformedPayloadError(str(exc)) from exc
        if key_id.value.decode("ascii", "replace") != crypto.key_id_for(self.public_key_bits):
            raise MalformedPayloadError("requested key-id does not match public key bits")
        if self.not_before_ms >= self.not_after_ms:
            raise MalformedPayloadError("empty validity window")

    @property
    def identity(self) -> Name:
        return parse_cert_name(self.name)[0]

    @property
    def key_name(self) -> Name:
        return key_name_of(self.name)


@dataclass
class NewRequestPayload:
    ecdh_pub: bytes
    cert_request: CertRequestShell

    def encode(self) -> bytes:
        validity = self.cert_request.not_before_ms.to_bytes(8, "big") + \
            self.cert_request.not_after_ms.to_bytes(8, "big")
        return b"".join([
            tlv.encode_tlv(tlv.ECDH_PUB, self.ecdh_pub),
            encode_name(self.cert_request.name),
            tlv.encode_tlv(tlv.PUBLIC_KEY_BITS, self.cert_request.public_key_bits),
            tlv.encode_tlv(tlv.VALIDITY_PERIOD, validity),
        ])

    @classmethod
    def decode(cls, buf: bytes) -> "NewRequestPayload":
        try:
            reader = tlv.TlvReader(buf)
            ecdh_pub = reader.read_expected(tlv.ECDH_PUB)
            name = decode_name_value(reader.read_expected(tlv.NAME))
            bits = reader.read_expected(tlv.PUBLIC_KEY_BITS)
            validity = reader.read_expected(tlv.VALIDITY_PERIOD)
            reader.expect_end()
            if len(validity) != 16:
                raise DecodeError("validity period must be 16 bytes")
        except DecodeError as exc:
            raise MalformedPayloadError(f"bad NEW payload: {exc}") from exc
        shell = CertRequestShell(
            name, bits,
            int.from_bytes(validity[:8], "big"), int.from_bytes(validity[8:], "big"),
        )
        payload = cls(ecdh_pub, shell)
        payload.validate()
        return payload

    def validate(self) -> None:
        self.cert_request.validate()
        try:
            crypto.decode_ecdh_point(self.ecdh_pub)
        except InvalidPointError as exc:
            raise MalformedPayloadError(str(exc)) from exc


@dataclass
class NewResponsePayload:
    """Either a challenge offer (with key-agreement material) or a redirect."""

    ecdh_pub: bytes | None = None
    salt: bytes | None = None
    request_id: bytes | None = None
    offered_challenges: list[str] = field(default_factory=list)
    redirects: list[tuple[Name, Name]] = field(default_factory=list)

    def validate(self) -> None:
        offer = bool(self.offered_challenges)
        redirect = bool(self.redirects)
        if offer == redirect:
            raise MalformedPayloadError("exactly one of challenges/redirects required")
        if offer:
            if self.ecdh_pub is None or self.salt is None or self.request_id is None:
                raise MalformedPayloadError("challenge offer missing key agreement fields")
            if len(self.salt) != crypto.SALT_SIZE:
                raise MalformedPayloadError("salt must be 32 bytes")
            if len(self.request_id) != REQUEST_ID_SIZE:
                raise MalformedPayloadError("request id must be 8 bytes")

    def encode(self) -> bytes:
        self.validate()
        if self.redirects:
            parts = []
            for prefix, cert_name in self.redirects:
                entry = encode_name(prefix) + encode_name(cert_name)
                parts.append(tlv.encode_tlv(tlv.REDIRECT, entry))
            return b"".join(parts)
        parts = [
            tlv.encode_tlv(tlv.ECDH_PUB, self.ecdh_pub),
            tlv.encode_tlv(tlv.SALT, self.salt),
            tlv.encode_tlv(tlv.REQUEST_ID, self.request_id),
        ]
        parts.extend(
            tlv.encode_tlv(tlv.CHALLENGE_ID, cid.encode("utf-8"))
            for cid in self.offered_challenges
        )
        return b"".join(parts)

    @classmethod
    def decode(cls, buf: bytes) -> "NewResponsePayload":
        payload = cls()
        try:
            reader = tlv.TlvReader(buf)
            while not reader.at_end:
                typ, value = reader.read_tlv()
                if typ == tlv.ECDH_PUB:
                    payload.ecdh_pub = value
                elif typ == tlv.SALT:
                    payload.salt = value
                elif typ == tlv.REQUEST_ID:
                    payload.request_id = value
                elif typ == tlv.CHALLENGE_ID:
                    payload.offered_challenges.append(value.decode("utf-8"))
                elif typ == tlv.REDIRECT:
                    entry = tlv.TlvReader(value)
                    prefix = decode_name_value(entry.read_expected(tlv.NAME))
                    cert_name = decode_name_value(entry.read_expected(tlv.NAME))
                    entry.expect_end()
                    payload.redirects.append((prefix, cert_name))
                elif tlv.is_critical(typ):
                    raise DecodeError(f"unknown critical field {typ}")
        except (DecodeError, UnicodeDecodeError) as exc:
            raise MalformedPayloadError(f"bad NEW response: {exc}") from exc
        payload.validate()
        return payload


@dataclass
class ChallengePayload:
    """Sealed parameter map; plaintext parameters never touch the wire."""

    request_id: bytes
    iv: bytes
    ciphertext: bytes

    def encode(self) -> bytes:
        return b"".join([
            tlv.encode_tlv(tlv.REQUEST_ID, self.request_id),
            tlv.encode_tlv(tlv.AEAD_IV, self.iv),
            tlv.encode_tlv(tlv.AEAD_CIPHERTEXT, self.ciphertext),
        ])

    @classmethod
    def decode(cls, buf: bytes) -> "ChallengePayload":
        try:
            reader = tlv.TlvReader(buf)
            request_id = reader.read_expected(tlv.REQUEST_ID)
            iv = reader.read_expected(tlv.AEAD_IV)
            ciphertext = reader.read_expected(tlv.AEAD_CIPHERTEXT)
            reader.expect_end()
        except DecodeError as exc:
            raise MalformedPayloadError(f"bad CHALLENGE payload: {exc}") from exc
        if len(request_id) != REQUEST_ID_SIZE:
            raise MalformedPayloadError("request id must be 8 bytes")
        return cls(request_id, iv, ciphertext)


def _challenge_ad(packet_name: Name, request_id: bytes) -> bytes:
    return encode_name(packet_name.strip_digest()) + request_id


def encode_parameters(
    params: dict[str, bytes],
    status: ChallengeStatus | None = None,
    issued_cert_name: Name | None = None,
) -> bytes:
    parts = []
    for key, value in params.items():
        key_bytes = key.encode("utf-8")
        if not key_bytes or len(key_bytes) > MAX_PARAMETER_KEY_LEN:
            raise MalformedPayloadError(f"parameter key {key!r} out of bounds")
        if len(value) > MAX_PARAMETER_VALUE_LEN:
            raise MalformedPayloadError(f"parameter {key!r} value too large")
        parts.append(tlv.encode_tlv(tlv.PARAMETER_KEY, key_bytes))
        parts.append(tlv.encode_tlv(tlv.PARAMETER_VALUE, value))
    if status is not None:
        parts.append(tlv.encode_tlv(tlv.CHALLENGE_STATUS, bytes([status])))
    if issued_cert_name is not None:
        parts.append(tlv.encode_tlv(tlv.ISSUED_CERT_NAME, encode_name(issued_cert_name)))
    return b"".join(parts)


def decode_parameters(buf: bytes) -> tuple[dict[str, bytes], ChallengeStatus | None, Name | None]:
    params: dict[str, bytes] = {}
    status = None
    issued_cert_name = None
    reader = tlv.TlvReader(buf)
    pending_key: str | None = None
    try:
        while not reader.at_end:
            typ, value = reader.read_tlv()
            if typ == tlv.PARAMETER_KEY:
                if pending_key is not None:
                    raise DecodeError("parameter key without value")
                pending_key = value.decode("utf-8")
            elif typ == tlv.PARAMETER_VALUE:
                if pending_key is None:
                    raise DecodeError("parameter value without key")
                params[pending_key] = value
                pending_key = None
            elif typ == tlv.CHALLENGE_STATUS:
                status = ChallengeStatus(value[0])
            elif typ == tlv.ISSUED_CERT_NAME:
                inner = tlv.TlvReader(value)
                issued_cert_name = decode_name_value(inner.read_expected(tlv.NAME))
                inner.expect_end()
            elif tlv.is_critical(typ):
                raise DecodeError(f"unknown critical field {typ}")
        if pending_key is not None:
            raise DecodeError("dangling parameter key")
    except (DecodeError, UnicodeDecodeError, ValueError, IndexError) as exc:
        raise MalformedPayloadError(f"bad parameter map: {exc}") from exc
    return params, status, issued_cert_name


def seal_challenge_message(
    params: dict[str, bytes],
    session: crypto.SessionCrypto,
    request_id: bytes,
    packet_name: Name,
    status: ChallengeStatus | None = None,
    issued_cert_name: Name | None = None,
) -> ChallengePayload:
    plaintext = encode_parameters(params, status, issued_cert_name)
    iv, ciphertext = session.seal(plaintext, _challenge_ad(packet_name, request_id))
    return ChallengePayload(request_id, iv, ciphertext)


def open_challenge_message(
    payload: ChallengePayload,
    session: crypto.SessionCrypto,
    packet_name: Name,
) -> tuple[dict[str, bytes], ChallengeStatus | None, Name | None]:
    plaintext = session.open(
        payload.iv, payload.ciphertext, _challenge_ad(packet_name, payload.request_id)
    )
    return decode_parameters(plaintext)


class ReplayGuard:
    """Accept each signed Interest at most once within the replay window.

    Timestamps must sit within the window of the local clock and strictly
    increase per key; nonces are remembered long enough that any replay
    falls to one of the two checks.  Check-and-insert is atomic.
    """

    def __init__(self, window_ms: int = REPLAY_WINDOW_MS):
        self.window_ms = window_ms
        self._lock = threading.Lock()
        self._seen: dict[tuple[Name, bytes], int] = {}
        self._last_timestamp: dict[Name, int] = {}

    def check_and_insert(self, key_name: Name, nonce: bytes, timestamp_ms: int,
                         now_ms: int | None = None) -> None:
        now_ms = int(time.time() * 1000) if now_ms is None else now_ms
        with self._lock:
            if abs(timestamp_ms - now_ms) > self.window_ms:
                raise StaleTimestampError(
                    f"timestamp {timestamp_ms} outside ±{self.window_ms} ms window"
                )
            if (key_name, nonce) in self._seen:
                raise ReplayedError("nonce already seen")
            last = self._last_timestamp.get(key_name)
            if last is not None and timestamp_ms <= last:
                raise ReplayedError("timestamp did not increase")
            self._seen[(key_name, nonce)] = now_ms + 2 * self.window_ms
            self._last_timestamp[key_name] = timestamp_ms
            self._prune(now_ms)

    def _prune(self, now_ms: int) -> None:
        if len(self._seen) % 64 == 0:
            self._seen = {k: exp for k, exp in self._seen.items() if exp > now_ms}


def build_new_interest(
    requester: crypto.KeyPair,
    payload: NewRequestPayload,
    ca_prefix: Name,
    now_ms: int | None = None,
) -> InterestPacket:
    payload.validate()
    interest = InterestPacket(
        name=new_interest_name(ca_prefix),
        nonce=crypto.random_bytes(8),
        timestamp_ms=fresh_signing_timestamp_ms(now_ms),
        app_params=payload.encode(),
        sig_info=SignatureInfo(SignatureType.ECDSA_SHA256, requester.key_name),
    )
    interest.sig_value = crypto.sign(interest.signed_portion(), requester)
    return interest


def parse_new_interest(
    interest: InterestPacket,
    guard: ReplayGuard,
    now_ms: int | None = None,
) -> NewRequestPayload:
    """Verify proof-of-possession and replay freshness, then return the payload."""
    if interest.sig_info is None or interest.sig_value is None:
        raise BadSignatureError("NEW interest is unsigned")
    if interest.app_params is None:
        raise MalformedPayloadError("NEW interest has no parameters")
    payload = NewRequestPayload.decode(interest.app_params)
    if not crypto.verify(interest.signed_portion(), interest.sig_value,
                         payload.cert_request.public_key_bits):
        raise BadSignatureError("signature does not verify under the embedded key")
    guard.check_and_insert(
        payload.cert_request.key_name, interest.nonce, interest.timestamp_ms, now_ms
    )
    return payload


def sign_interest(interest: InterestPacket, pair: crypto.KeyPair) -> InterestPacket:
    interest.sig_info = SignatureInfo(SignatureType.ECDSA_SHA256, pair.key_name)
    interest.sig_value = crypto.sign(interest.signed_portion(), pair)
    return interest
