"""Certificates, the naming convention, trust policy, and chain validation.

A certificate is a signed Data packet named

    /<identity>/KEY/[key-id]/[issuer-id]/[version]

whose content carries the public key bits and the validity window.  Chain
validation walks key-locator links from a packet to the policy's trust
anchor, checking availability, signatures, validity, revocation, and the
policy's name rules at every link.
"""

from __future__ import annotations

import base64
import enum
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable

from . import crypto, tlv
from .errors import (
    ClockSkewError,
    DecodeError,
    MalformedCertNameError,
    ValidityTooLongError,
)
from .names import Name, NameComponent, encode_name
from .packets import DataPacket, SignatureInfo, SignatureType, decode_packet

KEY_COMPONENT = NameComponent(b"KEY")
CLOCK_SKEW_TOLERANCE_MS = 120_000
MAX_CHAIN_DEPTH = 10


def build_cert_name(identity: Name, key_id, issuer_id, version) -> Name:
    if len(identity) == 0:
        raise ValueError("identity must be non-empty")
    return identity.append(KEY_COMPONENT, key_id, issuer_id, version)


def parse_cert_name(name: Name) -> tuple[Name, NameComponent, NameComponent, NameComponent]:
    """Split at the KEY marker into (identity, keyId, issuerId, version)."""
    if len(name) < 5:
        raise MalformedCertNameError(f"{name}: too few components")
    if name[len(name) - 4] != KEY_COMPONENT:
        raise MalformedCertNameError(f"{name}: no KEY marker at position -4")
    return name[: len(name) - 4], name[-3], name[-2], name[-1]


def is_cert_name(name: Name) -> bool:
    try:
        parse_cert_name(name)
        return True
    except MalformedCertNameError:
        return False


def is_key_name(name: Name) -> bool:
    """<identity>/KEY/[key-id]"""
    return len(name) >= 3 and name[len(name) - 2] == KEY_COMPONENT


def key_name_of(cert_name: Name) -> Name:
    identity, key_id, _, _ = parse_cert_name(cert_name)
    return identity.append(KEY_COMPONENT, key_id)


def version_sort_key(component: NameComponent):
    """Numeric ordering for decimal version components, lexicographic otherwise."""
    value = component.value
    if value.isdigit():
        return (1, int(value), value)
    return (0, 0, value)


class Certificate:
    """A parsed certificate Data packet."""

    def __init__(self, data: DataPacket):
        self.data = data
        self.identity, self.key_id, self.issuer_id, self.version = parse_cert_name(data.name)
        reader = tlv.TlvReader(data.content)
        self.public_key_bits = reader.read_expected(tlv.PUBLIC_KEY_BITS)
        validity = reader.read_expected(tlv.VALIDITY_PERIOD)
        if len(validity) != 16:
            raise DecodeError("validity period must be 16 bytes")
        self.not_before_ms = int.from_bytes(validity[:8], "big")
        self.not_after_ms = int.from_bytes(validity[8:], "big")
        if self.not_before_ms >= self.not_after_ms:
            raise DecodeError("notBefore must precede notAfter")
        reader.expect_end()
        if crypto.key_id_for(self.public_key_bits) != self.key_id.value.decode("ascii", "replace"):
            raise DecodeError("key-id does not match public key bits")

    @property
    def name(self) -> Name:
        return self.data.name

    @property
    def key_name(self) -> Name:
        return self.identity.append(KEY_COMPONENT, self.key_id)

    def public_key(self):
        return crypto.load_public_key_bits(self.public_key_bits)

    def is_self_signed(self) -> bool:
        kl = self.data.sig_info.key_locator if self.data.sig_info else None
        return kl == self.key_name

    def valid_at(self, now_ms: int, skew_ms: int = CLOCK_SKEW_TOLERANCE_MS) -> bool:
        return self.not_before_ms - skew_ms <= now_ms <= self.not_after_ms + skew_ms

    def encode(self) -> bytes:
        return self.data.encode()

    def __eq__(self, other) -> bool:
        return isinstance(other, Certificate) and self.encode() == other.encode()

    def __repr__(self) -> str:
        return f"Certificate({self.name.to_text()!r})"

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Certificate":
        packet = decode_packet(buf)
        if not isinstance(packet, DataPacket):
            raise DecodeError("not a Data packet")
        return cls(packet)


def encode_cert_content(public_key_bits: bytes, not_before_ms: int, not_after_ms: int) -> bytes:
    validity = not_before_ms.to_bytes(8, "big") + not_after_ms.to_bytes(8, "big")
    return tlv.encode_tlv(tlv.PUBLIC_KEY_BITS, public_key_bits) + tlv.encode_tlv(
        tlv.VALIDITY_PERIOD, validity
    )


_last_version_ms = 0
_version_lock = threading.Lock()


def _fresh_version_ms(now_ms: int) -> int:
    global _last_version_ms
    with _version_lock:
        _last_version_ms = max(now_ms, _last_version_ms + 1)
        return _last_version_ms


def issue_certificate(
    subject_key_bits: bytes,
    subject_identity: Name,
    not_before_ms: int,
    not_after_ms: int,
    issuer_pair: crypto.KeyPair,
    issuer_id,
    max_validity_ms: int | None = None,
    now_ms: int | None = None,
) -> Certificate:
    """Build and sign a certificate; self-issuance yields a trust anchor."""
    now_ms = int(time.time() * 1000) if now_ms is None else now_ms
    if not_after_ms <= now_ms:
        raise ValueError("notAfter must lie in the future")
    if not_before_ms >= not_after_ms:
        raise ValueError("notBefore must precede notAfter")
    if not_before_ms > now_ms + CLOCK_SKEW_TOLERANCE_MS:
        raise ClockSkewError("notBefore lies in the future beyond tolerance")
    if max_validity_ms is not None and not_after_ms - not_before_ms > max_validity_ms:
        raise ValidityTooLongError(
            f"validity {not_after_ms - not_before_ms} ms exceeds maximum {max_validity_ms} ms"
        )
    key_id = crypto.key_id_for(subject_key_bits)
    version = str(_fresh_version_ms(now_ms))
    name = build_cert_name(subject_identity, key_id, issuer_id, version)
    data = DataPacket(
        name=name,
        content=encode_cert_content(subject_key_bits, not_before_ms, not_after_ms),
        freshness_ms=3600_000,
        sig_info=SignatureInfo(SignatureType.ECDSA_SHA256, issuer_pair.key_name),
    )
    data.sig_value = crypto.sign(data.signed_portion(), issuer_pair)
    return Certificate(data)


def self_signed_anchor(pair: crypto.KeyPair, lifetime_ms: int,
                       issuer_id=b"self", now_ms: int | None = None) -> Certificate:
    now_ms = int(time.time() * 1000) if now_ms is None else now_ms
    return issue_certificate(
        pair.public_bits, pair.identity, now_ms, now_ms + lifetime_ms, pair, issuer_id,
        now_ms=now_ms,
    )


# --- import/export: base64-wrapped encoded Data, one certificate per file ---

def export_cert_text(cert: Certificate) -> str:
    raw = base64.b64encode(cert.encode()).decode("ascii")
    return "\n".join(raw[i : i + 64] for i in range(0, len(raw), 64)) + "\n"


def import_cert_text(text: str) -> Certificate:
    raw = base64.b64decode("".join(text.split()), validate=True)
    return Certificate.from_bytes(raw)


def save_cert(path, cert: Certificate) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(export_cert_text(cert))


def load_cert(path) -> Certificate:
    with open(path, "r", encoding="ascii") as f:
        return import_cert_text(f.read())


# --- name patterns and trust policy ---

class NamePattern:
    """Literal components plus '*' (exactly one) and '**' (zero or more)."""

    def __init__(self, text: str):
        self.text = text.strip()
        self._parts: list = []  # bytes literal, None for '*', ... for '**'
        for seg in self.text.split("/"):
            if seg == "":
                continue
            if seg == "*":
                self._parts.append(None)
            elif seg == "**":
                self._parts.append(...)
            else:
                self._parts.append(NameComponent.from_text(seg).value)

    def matches(self, name: Name) -> bool:
        comps = [c.value for c in name.strip_digest()]
        return self._match(self._parts, comps)

    @classmethod
    def _match(cls, parts, comps) -> bool:
        if not parts:
            return not comps
        head, rest = parts[0], parts[1:]
        if head is ...:
            return any(cls._match(rest, comps[i:]) for i in range(len(comps) + 1))
        if not comps:
            return False
        if head is None or head == comps[0]:
            return cls._match(rest, comps[1:])
        return False

    def __repr__(self) -> str:
        return f"NamePattern({self.text!r})"


@dataclass(frozen=True)
class TrustRule:
    subject: NamePattern
    signer: NamePattern
    # Relational constraint the two patterns alone cannot express.
    signer_prefix_of_subject: bool = False

    def accepts(self, subject_name: Name, signer_cert_name: Name) -> bool:
        if not self.subject.matches(subject_name) or not self.signer.matches(signer_cert_name):
            return False
        if self.signer_prefix_of_subject:
            signer_identity, _, _, _ = parse_cert_name(signer_cert_name)
            subject_identity = (
                parse_cert_name(subject_name)[0]
                if is_cert_name(subject_name)
                else subject_name.strip_digest()
            )
            if not (
                signer_identity.is_prefix_of(subject_identity)
                and len(signer_identity) < len(subject_identity)
            ):
                return False
        return True


class TrustPolicy:
    def __init__(self, anchor: Certificate, rules: Iterable[TrustRule]):
        if not anchor.is_self_signed():
            raise ValueError("trust anchor must be self-signed")
        if not crypto.verify(anchor.data.signed_portion(), anchor.data.sig_value,
                             anchor.public_key_bits):
            raise ValueError("trust anchor signature does not verify")
        self.anchor = anchor
        self.rules = list(rules)

    def accepts_link(self, subject_name: Name, signer_cert_name: Name) -> bool:
        return any(rule.accepts(subject_name, signer_cert_name) for rule in self.rules)


class InvalidReason(enum.Enum):
    UNFETCHABLE = "Unfetchable"
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"
    REVOKED = "Revoked"
    POLICY_VIOLATION = "PolicyViolation"
    DEPTH_EXCEEDED = "DepthExceeded"


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    reason: InvalidReason | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


VALID = ValidationResult(True)


def invalid(reason: InvalidReason, detail: str = "") -> ValidationResult:
    return ValidationResult(False, reason, detail)


# The resolver may hand back one packet or every candidate under a prefix.
FetchFn = Callable[[Name], "DataPacket | list[DataPacket] | None"]


def _resolve_signer(
    key_locator: Name, fetch: FetchFn, policy: TrustPolicy, subject_name: Name
) -> Certificate | None:
    """Fetch the signer certificate named (directly or by key name) by a locator.

    When the locator names only a key, the fetch runs under the key-name
    prefix and, among candidates, a policy-acceptable certificate with the
    highest version wins (the default-selection rule for schema-less
    consumers).
    """
    anchor = policy.anchor
    if is_cert_name(key_locator):
        if key_locator == anchor.name:
            return anchor
        got = fetch(key_locator)
        for packet in _as_packets(got):
            try:
                cert = Certificate(packet)
            except (DecodeError, MalformedCertNameError):
                continue
            if cert.name == key_locator:
                return cert
        return None

    if not is_key_name(key_locator):
        return None
    if key_locator == anchor.key_name:
        return anchor
    candidates = []
    for packet in _as_packets(fetch(key_locator)):
        try:
            cert = Certificate(packet)
        except (DecodeError, MalformedCertNameError):
            continue
        if cert.key_name == key_locator:
            candidates.append(cert)
    if not candidates:
        return None
    acceptable = [c for c in candidates if policy.accepts_link(subject_name, c.name)]
    # With no acceptable candidate, surface the best one so the caller
    # reports PolicyViolation rather than Unfetchable.
    pool = acceptable or candidates
    return max(pool, key=lambda c: version_sort_key(c.version))


def _as_packets(got) -> list[DataPacket]:
    if got is None:
        return []
    if isinstance(got, DataPacket):
        return [got]
    return list(got)


def validate_chain(
    data: DataPacket,
    policy: TrustPolicy,
    fetch: FetchFn,
    revocation_set: frozenset[Name] | set[Name] = frozenset(),
    now_ms: int | None = None,
    skew_ms: int = CLOCK_SKEW_TOLERANCE_MS,
) -> ValidationResult:
    """Walk key-locator links from `data` to the policy anchor.

    Valid iff every link's certificate is fetchable, signature-verifies, is
    within validity, is absent from `revocation_set`, satisfies some policy
    rule for the (subject, signer) pair, and the walk ends at the anchor
    within the depth limit.
    """
    now_ms = int(time.time() * 1000) if now_ms is None else now_ms
    anchor_digest = policy.anchor.data.implicit_digest()

    # A certificate under validation is itself a chain link: its own
    # validity window and revocation status count.
    if is_cert_name(data.name):
        try:
            head = Certificate(data)
        except DecodeError:
            return invalid(InvalidReason.BAD_SIGNATURE, "malformed certificate")
        if not head.valid_at(now_ms, skew_ms):
            return invalid(InvalidReason.EXPIRED, str(head.name))
        if head.name in revocation_set:
            return invalid(InvalidReason.REVOKED, str(head.name))

    current: DataPacket = data
    for _ in range(MAX_CHAIN_DEPTH):
        if current.sig_info is None or current.sig_info.key_locator is None:
            return invalid(InvalidReason.BAD_SIGNATURE, "no key locator")
        locator = current.sig_info.key_locator
        signer = _resolve_signer(locator, fetch, policy, current.name)
        if signer is None:
            return invalid(InvalidReason.UNFETCHABLE, f"no certificate for {locator}")
        if not crypto.verify(current.signed_portion(), current.sig_value or b"",
                             signer.public_key_bits):
            return invalid(InvalidReason.BAD_SIGNATURE, f"under {signer.name}")
        if not signer.valid_at(now_ms, skew_ms):
            return invalid(InvalidReason.EXPIRED, str(signer.name))
        if signer.name in revocation_set:
            return invalid(InvalidReason.REVOKED, str(signer.name))
        if not policy.accepts_link(current.name, signer.name):
            return invalid(InvalidReason.POLICY_VIOLATION,
                           f"{current.name} signed by {signer.name}")
        if signer.data.implicit_digest() == anchor_digest:
            return VALID
        current = signer.data
    return invalid(InvalidReason.DEPTH_EXCEEDED, f"no anchor within {MAX_CHAIN_DEPTH} links")


# --- revocation records ---

REVOKE_COMPONENT = NameComponent(b"REVOKE")


class RevocationSigner(enum.Enum):
    ISSUER = 1
    CERTIFICATE_KEY = 2


@dataclass
class RevocationRecord:
    """A revocation is itself a signed Data packet.

    Name: <certName>/REVOKE/<timestamp-ms>.  The Data signature covers the
    revoked name, timestamp, reason, and signer role; it must verify under
    either the certificate's own key or its issuer's key, matching
    `signed_by`.
    """

    cert_name: Name
    reason: str
    signed_by: RevocationSigner
    timestamp_ms: int
    data: DataPacket

    @classmethod
    def build(
        cls,
        cert_name: Name,
        reason: str,
        signed_by: RevocationSigner,
        signer_pair: crypto.KeyPair,
        timestamp_ms: int | None = None,
    ) -> "RevocationRecord":
        parse_cert_name(cert_name)
        timestamp_ms = int(time.time() * 1000) if timestamp_ms is None else timestamp_ms
        name = cert_name.append(REVOKE_COMPONENT, str(timestamp_ms))
        content = tlv.encode_tlv(tlv.REVOKE_REASON, reason.encode("utf-8")) + tlv.encode_tlv(
            tlv.REVOKE_SIGNED_BY, bytes([signed_by.value])
        )
        data = DataPacket(
            name=name,
            content=content,
            sig_info=SignatureInfo(SignatureType.ECDSA_SHA256, signer_pair.key_name),
        )
        data.sig_value = crypto.sign(data.signed_portion(), signer_pair)
        return cls(cert_name, reason, signed_by, timestamp_ms, data)

    @classmethod
    def from_data(cls, data: DataPacket) -> "RevocationRecord":
        name = data.name
        if len(name) < 7 or name[len(name) - 2] != REVOKE_COMPONENT:
            raise DecodeError(f"{name}: not a revocation name")
        cert_name = name[: len(name) - 2]
        parse_cert_name(cert_name)
        try:
            timestamp_ms = int(name[-1].value.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            raise DecodeError("bad revocation timestamp") from None
        reader = tlv.TlvReader(data.content)
        reason = reader.read_expected(tlv.REVOKE_REASON).decode("utf-8", "replace")
        signed_by_raw = reader.read_expected(tlv.REVOKE_SIGNED_BY)
        reader.expect_end()
        try:
            signed_by = RevocationSigner(signed_by_raw[0])
        except (IndexError, ValueError):
            raise DecodeError("bad revocation signer role") from None
        return cls(cert_name, reason, signed_by, timestamp_ms, data)

    def verify_authorization(self, cert: Certificate, issuer_bits: bytes) -> bool:
        """Check the signature against the key its `signed_by` role names."""
        expected_bits = {
            RevocationSigner.ISSUER: issuer_bits,
            RevocationSigner.CERTIFICATE_KEY: cert.public_key_bits,
        }[self.signed_by]
        return crypto.verify(self.data.signed_portion(), self.data.sig_value or b"",
                             expected_bits)
