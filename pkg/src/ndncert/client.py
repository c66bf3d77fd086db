"""Client library: profile discovery, the NEW/CHALLENGE flow, key store,
auto-renewal, and revocation requests.

Every Data from the issuer is signature-verified before its content can
influence anything, and an issued certificate is installed only after the
client has checked the name grammar, that it certifies exactly the key the
client generated, and that it chains to the configured anchor.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from . import crypto, tlv
from .certs import (
    Certificate,
    NamePattern,
    RevocationRecord,
    RevocationSigner,
    TrustPolicy,
    parse_cert_name,
    validate_chain,
    version_sort_key,
)
from .errors import (
    ChallengeFailedError,
    ClientError,
    DecodeError,
    IssuerError,
    MalformedCertNameError,
    RedirectedError,
    RenewDeniedError,
    TimeoutError_,
    UnfetchableError,
    UntrustedProfileError,
    ValidationFailedError,
)
from .messages import (
    CA_COMPONENT,
    CertRequestShell,
    ChallengePayload,
    ChallengeStatus,
    INFO_COMPONENT,
    NewRequestPayload,
    NewResponsePayload,
    REVOKE_SUBMIT_COMPONENT,
    build_new_interest,
    challenge_interest_name,
    fresh_signing_timestamp_ms,
    open_challenge_message,
    seal_challenge_message,
    sign_interest,
)
from .names import Name, decode_name_value
from .packets import DataPacket, InterestPacket
from .transport import Face

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 2.0
DEFAULT_RETRIES = 3
MAX_CHALLENGE_ROUNDS = 8
PLACEHOLDER = "_"  # issuer-id/version slots the issuer fills at issuance


# ----------------------------------------------------------------------
# key store
# ----------------------------------------------------------------------

class KeyStore:
    """Directory tree, one subdirectory per identity, holding key and cert
    files.  The newest-version certificate wins; renewals replace
    atomically."""

    def __init__(self, root: str):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)

    def _identity_dir(self, identity: Name) -> str:
        parts = [c.to_text().replace("/", "%2F") for c in identity]
        return os.path.join(self.root, *parts)

    def save_key(self, pair: crypto.KeyPair) -> str:
        directory = self._identity_dir(pair.identity)
        os.makedirs(directory, exist_ok=True)
        key_id = pair.key_name[-1].value.decode()
        path = os.path.join(directory, f"{key_id}.key")
        crypto.save_private_key(path, pair.private_key)
        return path

    def load_key(self, identity: Name, key_id: str | None = None) -> crypto.KeyPair | None:
        directory = self._identity_dir(identity)
        if not os.path.isdir(directory):
            return None
        names = sorted(n for n in os.listdir(directory) if n.endswith(".key"))
        if key_id is not None:
            names = [n for n in names if n == f"{key_id}.key"]
        if not names:
            return None
        private = crypto.load_private_key(os.path.join(directory, names[-1]))
        return crypto.keypair_from_private(private, identity)

    def save_cert(self, cert: Certificate) -> str:
        from .certs import export_cert_text

        directory = self._identity_dir(cert.identity)
        os.makedirs(directory, exist_ok=True)
        key_id = cert.key_id.value.decode("ascii", "replace")
        version = cert.version.to_text().replace("/", "%2F")
        path = os.path.join(directory, f"{key_id}.{version}.cert")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="ascii") as f:
            f.write(export_cert_text(cert))
        os.replace(tmp, path)  # atomic replace-on-renew
        return path

    def certs(self, identity: Name) -> list[Certificate]:
        from .certs import load_cert

        directory = self._identity_dir(identity)
        if not os.path.isdir(directory):
            return []
        out = []
        for name in sorted(os.listdir(directory)):
            if name.endswith(".cert"):
                try:
                    out.append(load_cert(os.path.join(directory, name)))
                except Exception:
                    logger.warning("skipping unreadable cert file %s", name)
        return out

    def latest_cert(self, identity: Name) -> Certificate | None:
        found = self.certs(identity)
        if not found:
            return None
        return max(found, key=lambda c: version_sort_key(c.version))


def default_keystore_root() -> str:
    return os.environ.get("NDNCERT_HOME") or os.path.join(
        os.path.expanduser("~"), ".ndncert"
    )


# ----------------------------------------------------------------------
# fetch helpers
# ----------------------------------------------------------------------

def _fresh_interest(name: Name) -> InterestPacket:
    return InterestPacket(name, crypto.random_bytes(8), int(time.time() * 1000))


def express(face: Face, interest: InterestPacket | bytes,
            timeout_s: float = DEFAULT_TIMEOUT_S,
            retries: int = DEFAULT_RETRIES,
            rebuild: Callable[[], InterestPacket] | None = None) -> DataPacket:
    """Express with retransmission.  `rebuild` makes each retry a fresh
    packet (required for NEW, whose byte-identical resend is Replayed);
    without it the identical bytes go out again (required for CHALLENGE,
    answered idempotently)."""
    last_error: Exception | None = None
    for attempt in range(retries):
        try:
            return face.express_interest(interest, timeout_s)
        except TimeoutError_ as exc:
            last_error = exc
            if rebuild is not None:
                interest = rebuild()
    raise last_error or TimeoutError_("unreachable")


def network_fetch(face: Face, timeout_s: float = DEFAULT_TIMEOUT_S):
    """validate_chain resolver fetching over a face."""

    def fetch(name: Name):
        try:
            return express(face, _fresh_interest(name), timeout_s, retries=2)
        except TimeoutError_:
            return None

    return fetch


def _raise_if_error(data: DataPacket) -> None:
    """Issuer protocol errors arrive as ERROR_CODE/ERROR_INFO content."""
    if not data.content or data.content[0] != tlv.ERROR_CODE:
        return
    try:
        reader = tlv.TlvReader(data.content)
        code = reader.read_expected(tlv.ERROR_CODE).decode("utf-8", "replace")
        info = reader.read_expected(tlv.ERROR_INFO).decode("utf-8", "replace")
    except DecodeError:
        return
    raise IssuerError(code, info)


def _verify_issuer_data(data: DataPacket, issuer_bits: bytes) -> None:
    if not crypto.verify(data.signed_portion(), data.sig_value or b"", issuer_bits):
        raise ValidationFailedError(f"issuer signature failed on {data.name}")


# ----------------------------------------------------------------------
# profile discovery
# ----------------------------------------------------------------------

@dataclass
class IssuerProfileView:
    ca_prefix: Name
    certificate: Certificate
    max_validity_ms: int
    challenges: list[str]
    name_patterns: list[str]
    version: int

    def allows(self, identity: Name) -> bool:
        if not self.name_patterns:
            return True
        return any(NamePattern(p).matches(identity) for p in self.name_patterns)


def _parse_profile(content: bytes) -> IssuerProfileView:
    reader = tlv.TlvReader(content)
    ca_prefix = decode_name_value(reader.read_expected(tlv.NAME))
    cert = Certificate.from_bytes(reader.read_expected(tlv.CERT_BYTES))
    max_validity_ms = tlv.decode_nonneg(reader.read_expected(tlv.MAX_VALIDITY))
    challenges: list[str] = []
    patterns: list[str] = []
    version = 0
    while not reader.at_end:
        typ, value = reader.read_tlv()
        if typ == tlv.CHALLENGE_ID:
            challenges.append(value.decode("utf-8"))
        elif typ == tlv.NAME_PATTERN:
            patterns.append(value.decode("utf-8"))
        elif typ == tlv.PROFILE_VERSION:
            version = tlv.decode_nonneg(value)
    return IssuerProfileView(ca_prefix, cert, max_validity_ms, challenges, patterns, version)


def discover_profile(face: Face, ca_prefix: Name, policy: TrustPolicy,
                     timeout_s: float = DEFAULT_TIMEOUT_S) -> IssuerProfileView:
    """Fetch and chain-validate the issuer profile before trusting it."""
    info_name = ca_prefix.append(CA_COMPONENT, INFO_COMPONENT)
    try:
        metadata = express(face, _fresh_interest(info_name), timeout_s,
                           rebuild=lambda: _fresh_interest(info_name))
    except TimeoutError_ as exc:
        raise UnfetchableError(f"no profile metadata at {info_name}") from exc
    _check_profile_signature(metadata, policy, face, timeout_s)
    try:
        latest_name = decode_name_value(
            tlv.TlvReader(metadata.content).read_expected(tlv.NAME))
    except DecodeError as exc:
        raise UntrustedProfileError(f"bad profile metadata: {exc}") from exc
    try:
        profile_data = express(face, _fresh_interest(latest_name), timeout_s,
                               rebuild=lambda: _fresh_interest(latest_name))
    except TimeoutError_ as exc:
        raise UnfetchableError(f"no profile data at {latest_name}") from exc
    _check_profile_signature(profile_data, policy, face, timeout_s)
    try:
        profile = _parse_profile(profile_data.content)
    except DecodeError as exc:
        raise UntrustedProfileError(f"bad profile encoding: {exc}") from exc
    if not profile.ca_prefix.is_prefix_of(profile.certificate.identity):
        raise UntrustedProfileError("profile prefix does not cover issuer identity")
    return profile


def _check_profile_signature(data: DataPacket, policy: TrustPolicy, face: Face,
                             timeout_s: float) -> None:
    result = validate_chain(data, policy, network_fetch(face, timeout_s))
    if not result:
        raise UntrustedProfileError(f"{result.reason}: {result.detail}")


# ----------------------------------------------------------------------
# certificate request flow
# ----------------------------------------------------------------------

RoundResponder = Callable[[int, dict[str, bytes]], dict[str, bytes]]


@dataclass
class ClientSession:
    """One certificate request in flight; phases only move forward."""

    ca_prefix: Name
    identity: Name
    pair: crypto.KeyPair
    phase: str = "idle"
    request_id: bytes | None = None
    session: crypto.SessionCrypto | None = None
    offered: list[str] = field(default_factory=list)

    def _advance(self, phase: str) -> None:
        order = ["idle", "new-sent", "in-challenge", "done", "failed"]
        if order.index(phase) < order.index(self.phase):
            raise ClientError(f"phase may not move back from {self.phase} to {phase}")
        self.phase = phase


def request_certificate(
    face: Face,
    ca_prefix: Name,
    identity: Name,
    challenge_id: str,
    inputs: dict[str, bytes] | None = None,
    *,
    policy: TrustPolicy,
    keystore: KeyStore | None = None,
    pair: crypto.KeyPair | None = None,
    validity_ms: int = 3600_000,
    profile: IssuerProfileView | None = None,
    responder: RoundResponder | None = None,
    possession_cert: Certificate | None = None,
    possession_pair: crypto.KeyPair | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    redirect_depth: int = 1,
) -> Certificate:
    """Run the full flow and install the validated certificate.

    `inputs` seeds the first challenge round (for pin: {"code": ...}).
    Later rounds take parameters from `responder`, or are computed
    internally for the possession challenge when `possession_cert`/
    `possession_pair` are given.
    """
    if profile is None:
        profile = discover_profile(face, ca_prefix, policy, timeout_s)
    issuer_bits = profile.certificate.public_key_bits
    if not profile.allows(identity):
        raise IssuerError("name-not-allowed", f"{identity} precheck failed")

    if pair is None:
        pair = crypto.generate_keypair(identity)
    if pair.identity != identity:
        raise ClientError("key pair identity does not match requested identity")
    if keystore is not None:
        keystore.save_key(pair)

    session_state = ClientSession(ca_prefix, identity, pair)
    ephemeral, ecdh_pub = crypto.generate_ephemeral()
    now = int(time.time() * 1000)
    shell = CertRequestShell(
        name=pair.key_name.append(PLACEHOLDER, PLACEHOLDER),
        public_key_bits=pair.public_bits,
        not_before_ms=now,
        not_after_ms=now + validity_ms,
    )
    payload = NewRequestPayload(ecdh_pub, shell)

    def rebuild() -> InterestPacket:
        return build_new_interest(pair, payload, ca_prefix)

    session_state._advance("new-sent")
    new_data = express(face, rebuild(), timeout_s, rebuild=rebuild)
    _verify_issuer_data(new_data, issuer_bits)
    _raise_if_error(new_data)
    response = NewResponsePayload.decode(new_data.content)

    if response.redirects:
        if redirect_depth < 1:
            raise RedirectedError("redirect depth exhausted", response.redirects)
        sub_prefix, _sub_cert = _pick_redirect(response.redirects, identity)
        logger.info("redirected to sub-issuer %s", sub_prefix)
        return request_certificate(
            face, sub_prefix, identity, challenge_id, inputs,
            policy=policy, keystore=keystore, pair=pair, validity_ms=validity_ms,
            responder=responder, possession_cert=possession_cert,
            possession_pair=possession_pair, timeout_s=timeout_s,
            redirect_depth=redirect_depth - 1,
        )

    if challenge_id not in response.offered_challenges:
        raise IssuerError("unknown-challenge",
                          f"issuer offers {response.offered_challenges}")
    session_state.offered = response.offered_challenges
    session_state.request_id = response.request_id
    session = crypto.SessionCrypto(
        crypto.derive_session_key(ephemeral, response.ecdh_pub, response.salt)
    )
    del ephemeral
    session_state.session = session
    session_state._advance("in-challenge")

    params: dict[str, bytes] = {"selected-challenge": challenge_id.encode()}
    params.update(inputs or {})
    try:
        for round_number in range(1, MAX_CHALLENGE_ROUNDS + 1):
            reply_params, status, issued_name = _challenge_round(
                face, ca_prefix, session_state, params, issuer_bits, timeout_s
            )
            if status is ChallengeStatus.SUCCESS:
                if issued_name is None:
                    raise ValidationFailedError("success reply without a certificate name")
                cert = _fetch_and_validate_issued(
                    face, issued_name, identity, pair, policy, timeout_s
                )
                if keystore is not None:
                    keystore.save_cert(cert)
                session_state._advance("done")
                return cert
            if status is ChallengeStatus.FAILURE:
                session_state._advance("failed")
                reason = reply_params.get("reason", b"").decode("utf-8", "replace")
                raise ChallengeFailedError(reason or "challenge failed")
            params = _next_round_params(
                challenge_id, round_number, reply_params, responder,
                possession_cert, possession_pair,
            )
        raise ChallengeFailedError(f"no outcome within {MAX_CHALLENGE_ROUNDS} rounds")
    finally:
        session.erase()


def _pick_redirect(redirects: list[tuple[Name, Name]], identity: Name) -> tuple[Name, Name]:
    for prefix, cert_name in redirects:
        if prefix.is_prefix_of(identity):
            return prefix, cert_name
    return redirects[0]


def _challenge_round(face: Face, ca_prefix: Name, session_state: ClientSession,
                     params: dict[str, bytes], issuer_bits: bytes, timeout_s: float):
    name = challenge_interest_name(ca_prefix, session_state.request_id)
    payload = seal_challenge_message(
        params, session_state.session, session_state.request_id, name
    )
    interest = InterestPacket(
        name=name, nonce=crypto.random_bytes(8),
        timestamp_ms=fresh_signing_timestamp_ms(),
        app_params=payload.encode(),
    )
    sign_interest(interest, session_state.pair)
    # Byte-identical retransmission: the issuer answers idempotently.
    data = express(face, interest.encode(), timeout_s)
    _verify_issuer_data(data, issuer_bits)
    _raise_if_error(data)
    reply = ChallengePayload.decode(data.content)
    return open_challenge_message(reply, session_state.session, data.name)


def _next_round_params(challenge_id: str, round_number: int,
                       reply_params: dict[str, bytes],
                       responder: RoundResponder | None,
                       possession_cert: Certificate | None,
                       possession_pair: crypto.KeyPair | None) -> dict[str, bytes]:
    if challenge_id == "possession" and possession_cert is not None \
            and possession_pair is not None and "nonce" in reply_params:
        proof = crypto.sign(reply_params["nonce"], possession_pair)
        return {"cert": possession_cert.encode(), "proof": proof}
    if responder is not None:
        return responder(round_number, reply_params)
    raise ChallengeFailedError(
        f"challenge {challenge_id!r} needs more rounds but no responder is set"
    )


def _fetch_and_validate_issued(face: Face, issued_name: Name, identity: Name,
                               pair: crypto.KeyPair, policy: TrustPolicy,
                               timeout_s: float) -> Certificate:
    try:
        identity_got, key_id, _, _ = parse_cert_name(issued_name)
    except MalformedCertNameError as exc:
        raise ValidationFailedError(f"issued name malformed: {exc}") from exc
    if identity_got != identity:
        raise ValidationFailedError(f"issued for {identity_got}, requested {identity}")
    try:
        data = express(face, _fresh_interest(issued_name), timeout_s,
                       rebuild=lambda: _fresh_interest(issued_name))
    except TimeoutError_ as exc:
        raise ValidationFailedError(f"issued cert {issued_name} not fetchable") from exc
    try:
        cert = Certificate(data)
    except (DecodeError, MalformedCertNameError) as exc:
        raise ValidationFailedError(f"issued cert undecodable: {exc}") from exc
    if cert.public_key_bits != pair.public_bits:
        raise ValidationFailedError("issued cert certifies a different key")
    result = validate_chain(cert.data, policy, network_fetch(face, timeout_s))
    if not result:
        raise ValidationFailedError(f"issued cert does not validate: {result.reason}")
    return cert


# ----------------------------------------------------------------------
# auto-renewal
# ----------------------------------------------------------------------

def renew_certificate(face: Face, ca_prefix: Name, cert: Certificate,
                      pair: crypto.KeyPair, *, policy: TrustPolicy,
                      keystore: KeyStore | None = None,
                      validity_ms: int | None = None,
                      timeout_s: float = DEFAULT_TIMEOUT_S) -> Certificate:
    """One renewal round: a possession challenge against the expiring cert.

    A refusal (challenge rejected or the name denylisted) is the implicit
    revocation signal and raises RenewDenied."""
    try:
        return request_certificate(
            face, ca_prefix, cert.identity, "possession",
            policy=policy, keystore=keystore, pair=pair,
            validity_ms=validity_ms or (cert.not_after_ms - cert.not_before_ms),
            possession_cert=cert, possession_pair=pair, timeout_s=timeout_s,
        )
    except (ChallengeFailedError, IssuerError) as exc:
        raise RenewDeniedError(str(exc)) from exc


RenewEvent = Callable[[str, object], None]


class RenewalHandle:
    """Background renewal contract; renews at notAfter − leadFraction·lifetime."""

    def __init__(self, face: Face, ca_prefix: Name, cert: Certificate,
                 pair: crypto.KeyPair, lead_fraction: float, policy: TrustPolicy,
                 keystore: KeyStore | None = None, on_event: RenewEvent | None = None,
                 timeout_s: float = DEFAULT_TIMEOUT_S):
        if not 0.0 < lead_fraction <= 1.0:
            raise ValueError("leadFraction must be in (0, 1]")
        self.face = face
        self.ca_prefix = ca_prefix
        self.cert = cert
        self.pair = pair
        self.lead_fraction = lead_fraction
        self.policy = policy
        self.keystore = keystore
        self.on_event = on_event or (lambda kind, detail: None)
        self.timeout_s = timeout_s
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="auto-renew", daemon=True)

    def start(self) -> "RenewalHandle":
        self._thread.start()
        return self

    def _fire_at_ms(self) -> int:
        lifetime = self.cert.not_after_ms - self.cert.not_before_ms
        return int(self.cert.not_after_ms - self.lead_fraction * lifetime)

    def _loop(self) -> None:
        while not self._stop.is_set():
            wait_s = max(0.0, (self._fire_at_ms() - time.time() * 1000) / 1000)
            if self._stop.wait(wait_s):
                return
            try:
                renewed = renew_certificate(
                    self.face, self.ca_prefix, self.cert, self.pair,
                    policy=self.policy, keystore=self.keystore,
                    timeout_s=self.timeout_s,
                )
            except RenewDeniedError as exc:
                self.on_event("renew-denied", exc)
                return  # terminal: surface the event and stop
            except ClientError as exc:
                self.on_event("renew-error", exc)
                continue
            self.cert = renewed
            self.on_event("renewed", renewed)

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)


def auto_renew(face: Face, ca_prefix: Name, cert: Certificate, pair: crypto.KeyPair,
               lead_fraction: float, *, policy: TrustPolicy,
               keystore: KeyStore | None = None, on_event: RenewEvent | None = None,
               timeout_s: float = DEFAULT_TIMEOUT_S) -> RenewalHandle:
    if cert.not_after_ms <= time.time() * 1000:
        raise ClientError("certificate already expired")
    return RenewalHandle(face, ca_prefix, cert, pair, lead_fraction, policy,
                         keystore, on_event, timeout_s).start()


# ----------------------------------------------------------------------
# revocation request
# ----------------------------------------------------------------------

def request_revocation(face: Face, ca_prefix: Name, cert_name: Name,
                       signer_pair: crypto.KeyPair, reason: str = "",
                       signed_by: RevocationSigner = RevocationSigner.CERTIFICATE_KEY,
                       timeout_s: float = DEFAULT_TIMEOUT_S) -> None:
    record = RevocationRecord.build(cert_name, reason, signed_by, signer_pair)
    interest = InterestPacket(
        name=ca_prefix.append(CA_COMPONENT, REVOKE_SUBMIT_COMPONENT),
        nonce=crypto.random_bytes(8),
        timestamp_ms=fresh_signing_timestamp_ms(),
        app_params=record.data.encode(),
    )
    sign_interest(interest, signer_pair)
    data = express(face, interest.encode(), timeout_s)
    _raise_if_error(data)


def fetch_revocation_set(face: Face, ca_prefix: Name, issuer_bits: bytes,
                         timeout_s: float = DEFAULT_TIMEOUT_S) -> set[Name]:
    name = ca_prefix.append(CA_COMPONENT, b"REVOKED")
    data = express(face, _fresh_interest(name), timeout_s,
                   rebuild=lambda: _fresh_interest(name))
    _verify_issuer_data(data, issuer_bits)
    revoked: set[Name] = set()
    reader = tlv.TlvReader(data.content)
    while not reader.at_end:
        typ, value = reader.read_tlv()
        if typ == tlv.ISSUED_CERT_NAME:
            inner = tlv.TlvReader(value)
            revoked.add(decode_name_value(inner.read_expected(tlv.NAME)))
    return revoked
