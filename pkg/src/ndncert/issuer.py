"""The certificate-issuer daemon core.

Serves, under <caPrefix>/CA/:

  INFO       versioned profile discovery (metadata names the latest version)
  NEW        proof-of-possession check, ECDH, challenge offer or redirect
  CHALLENGE  encrypted challenge rounds; issuance on success
  REVOKED    the live revocation set
  REVOKE     submission of signed revocation records

Every issuance, renewal, and revocation appends one transparency-log record
before the response that depends on it is sent.  Request state lives in an
in-memory table with optional file-backed snapshots per transition; no
session secret ever reaches that file.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import threading
import time
from dataclasses import dataclass, field

from . import crypto, tlv
from .certs import (
    Certificate,
    NamePattern,
    RevocationRecord,
    RevocationSigner,
    TrustPolicy,
    TrustRule,
    issue_certificate,
    load_cert,
    parse_cert_name,
    validate_chain,
)
from .challenges import (
    AssertionTokenTable,
    ChallengeContext,
    OutboxDelivery,
    default_possession_predicate,
    get_challenge,
)
from .errors import (
    AlreadyRevokedError,
    AuthenticationFailedError,
    BadSignatureError,
    ClockSkewError,
    ConfigError,
    DecodeError,
    IvReplayError,
    MalformedCertNameError,
    MalformedPayloadError,
    NameNotAllowedError,
    ProtocolError,
    StorageFailureError,
    UnauthorizedError,
    UnknownCertError,
    UnknownChallengeError,
    UnknownRequestIdError,
    ValidityTooLongError,
)
from .messages import (
    CA_COMPONENT,
    CHALLENGE_COMPONENT,
    ChallengePayload,
    ChallengeStatus,
    INFO_COMPONENT,
    NEW_COMPONENT,
    NewResponsePayload,
    REVOKED_COMPONENT,
    REVOKE_SUBMIT_COMPONENT,
    ReplayGuard,
    open_challenge_message,
    parse_new_interest,
    seal_challenge_message,
)
from .names import Name, encode_name
from .packets import (
    DataPacket,
    InterestPacket,
    SignatureInfo,
    SignatureType,
    compute_implicit_digest,
    decode_packet,
)
from .transparency import RecordType, TransparencyLog
from .transport import Forwarder, Repo

logger = logging.getLogger(__name__)

STATE_TTL_MS = 3600_000
TERMINAL_RETENTION_MS = 60_000
MAX_LIVE_REDRAWS = 8

STATUS_BEFORE_CHALLENGE = "before-challenge"
STATUS_CHALLENGE = "challenge"
STATUS_SUCCESS = "success"
STATUS_FAILURE = "failure"


@dataclass
class IssuerConfig:
    ca_prefix: Name
    cert_file: str
    key_file: str
    anchor_file: str
    max_validity_s: int
    challenges: list[str] = field(default_factory=lambda: ["pin"])
    name_patterns: list[str] = field(default_factory=list)
    redirects: list[tuple[str, str, str]] = field(default_factory=list)
    repo_dir: str | None = None
    log_file: str = "issuer.log"
    admin_socket: str | None = None
    state_file: str | None = None
    outbox_file: str | None = None
    udp_port: int | None = None
    reverify_after_s: int | None = None

    @classmethod
    def parse(cls, text: str, base_dir: str = ".") -> "IssuerConfig":
        """Plain `key = value` lines; '#' comments; some keys repeatable."""
        values: dict[str, str] = {}
        patterns: list[str] = []
        redirects: list[tuple[str, str, str]] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected key = value, got {line!r}", lineno)
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not value:
                raise ConfigError(f"empty value for {key!r}", lineno)
            if key == "name-pattern":
                patterns.append(value)
            elif key == "redirect":
                parts = value.split()
                if len(parts) != 3:
                    raise ConfigError(
                        "redirect needs: <pattern> <sub-prefix> <sub-cert-name>", lineno
                    )
                redirects.append((parts[0], parts[1], parts[2]))
            elif key in values:
                raise ConfigError(f"duplicate key {key!r}", lineno)
            else:
                values[key] = value

        def path(name: str) -> str | None:
            got = values.get(name)
            return os.path.join(base_dir, got) if got is not None else None

        for required in ("ca-prefix", "cert-file", "key-file", "anchor-file",
                         "max-validity-seconds"):
            if required not in values:
                raise ConfigError(f"missing required key {required!r}")
        try:
            max_validity_s = int(values["max-validity-seconds"])
        except ValueError:
            raise ConfigError("max-validity-seconds must be an integer") from None
        if max_validity_s <= 0:
            raise ConfigError("max-validity-seconds must be positive")
        challenges = [c.strip() for c in values.get("challenges", "pin").split(",") if c.strip()]
        udp_port = None
        if "udp-port" in values:
            try:
                udp_port = int(values["udp-port"])
            except ValueError:
                raise ConfigError("udp-port must be an integer") from None
        reverify = None
        if "reverify-after-seconds" in values:
            reverify = int(values["reverify-after-seconds"])
        return cls(
            ca_prefix=Name.from_text(values["ca-prefix"]),
            cert_file=path("cert-file"),
            key_file=path("key-file"),
            anchor_file=path("anchor-file"),
            max_validity_s=max_validity_s,
            challenges=challenges,
            name_patterns=patterns,
            redirects=redirects,
            repo_dir=path("repo-dir"),
            log_file=path("log-file") or os.path.join(base_dir, "issuer.log"),
            admin_socket=path("admin-socket"),
            state_file=path("state-file"),
            outbox_file=path("outbox-file"),
            udp_port=udp_port,
            reverify_after_s=reverify,
        )

    @classmethod
    def load(cls, config_path: str) -> "IssuerConfig":
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        return cls.parse(text, base_dir=os.path.dirname(os.path.abspath(config_path)))


@dataclass
class RequestState:
    request_id: bytes
    requester_pub_bits: bytes
    requester_key_name: Name
    requested_name: Name
    requested_identity: Name
    not_before_ms: int
    not_after_ms: int
    session: crypto.SessionCrypto
    status: str = STATUS_BEFORE_CHALLENGE
    challenge: object | None = None  # ChallengeState
    created_ms: int = 0
    terminal_ms: int | None = None
    last_interest_digest: bytes | None = None
    last_response_wire: bytes | None = None
    issued_cert_name: Name | None = None

    def snapshot(self) -> dict:
        """Persistable view: no session key, no challenge secret."""
        return {
            "request-id": self.request_id.hex(),
            "status": self.status,
            "identity": self.requested_identity.to_text(),
            "requested-name": self.requested_name.to_text(),
            "challenge": getattr(self.challenge, "challenge_id", None),
            "round": getattr(self.challenge, "round", None),
            "created-ms": self.created_ms,
            "issued-cert": self.issued_cert_name.to_text() if self.issued_cert_name else None,
        }


class Issuer:
    def __init__(
        self,
        keypair: crypto.KeyPair,
        certificate: Certificate,
        anchor: Certificate,
        *,
        ca_prefix: Name | None = None,
        max_validity_ms: int,
        challenges: list[str] | None = None,
        name_patterns: list[str] | None = None,
        redirects: list[tuple[str, str, str]] | None = None,
        repo: Repo | None = None,
        log: TransparencyLog | None = None,
        token_table: AssertionTokenTable | None = None,
        deliver=None,
        state_file: str | None = None,
        issuer_id: str | None = None,
        reverify_after_s: int | None = None,
        name_predicate=None,
        clock=None,
    ):
        self.clock = clock or time.time
        self.pair = keypair
        self.certificate = certificate
        self.anchor = anchor
        self.ca_prefix = ca_prefix or certificate.identity
        if not self.ca_prefix.is_prefix_of(certificate.identity):
            raise ConfigError("ca-prefix must be a prefix of the issuer certificate identity")
        self.issuer_id = issuer_id or "ca"
        self.max_validity_ms = max_validity_ms
        self.offered_challenges = list(challenges or ["pin"])
        for cid in self.offered_challenges:
            get_challenge(cid)  # fail fast on unknown ids
        self.name_patterns = [NamePattern(p) for p in (name_patterns or ["/**"])]
        self.redirects = [
            (NamePattern(pattern), Name.from_text(prefix), Name.from_text(cert_name))
            for pattern, prefix, cert_name in (redirects or [])
        ]
        self.repo = repo if repo is not None else Repo()
        if log is None:
            raise ConfigError("issuer requires a transparency log")
        self.log = log
        self.token_table = token_table or AssertionTokenTable()
        self.deliver = deliver
        self.state_file = state_file
        self.reverify_after_s = reverify_after_s
        self.name_predicate = name_predicate

        self.guard = ReplayGuard()
        self.requests: dict[bytes, RequestState] = {}
        self._requests_lock = threading.Lock()
        self.revoked: set[Name] = self.log.revoked_names()
        self._profile_version = 0
        self._profile_versions: dict[int, DataPacket] = {}

        anchor_identity = anchor.identity
        self.policy = TrustPolicy(anchor, [
            TrustRule(
                NamePattern(anchor_identity.to_text() + "/**"),
                NamePattern(anchor_identity.to_text() + "/**"),
                signer_prefix_of_subject=True,
            ),
            TrustRule(NamePattern(anchor_identity.to_text() + "/**"),
                      NamePattern(anchor.name.to_text())),
        ])
        # The issuer serves its own certificate (and the anchor, if it is the
        # anchor holder) for availability.
        self.repo.insert(certificate)
        self._bump_profile()

    def _now_ms(self) -> int:
        return int(self.clock() * 1000)

    # ------------------------------------------------------------------
    # profile publication (RDR-style)
    # ------------------------------------------------------------------

    def _info_name(self) -> Name:
        return self.ca_prefix.append(CA_COMPONENT, INFO_COMPONENT)

    def _bump_profile(self) -> None:
        self._profile_version += 1
        content = b"".join([
            encode_name(self.ca_prefix),
            tlv.encode_tlv(tlv.CERT_BYTES, self.certificate.encode()),
            tlv.encode_tlv(tlv.MAX_VALIDITY, tlv.encode_nonneg(self.max_validity_ms)),
            b"".join(tlv.encode_tlv(tlv.CHALLENGE_ID, c.encode()) for c in
                     self.offered_challenges),
            b"".join(tlv.encode_tlv(tlv.NAME_PATTERN, p.text.encode()) for p in
                     self.name_patterns),
            tlv.encode_tlv(tlv.PROFILE_VERSION, tlv.encode_nonneg(self._profile_version)),
        ])
        data = self._signed_data(
            self._info_name().append(str(self._profile_version)), content,
            freshness_ms=3600_000,
        )
        self._profile_versions[self._profile_version] = data

    def reload(self, *, challenges=None, name_patterns=None, redirects=None,
               max_validity_ms=None) -> int:
        """Apply profile-affecting changes and publish a new version."""
        if challenges is not None:
            for cid in challenges:
                get_challenge(cid)
            self.offered_challenges = list(challenges)
        if name_patterns is not None:
            self.name_patterns = [NamePattern(p) for p in name_patterns]
        if redirects is not None:
            self.redirects = [
                (NamePattern(p), Name.from_text(prefix), Name.from_text(cert))
                for p, prefix, cert in redirects
            ]
        if max_validity_ms is not None:
            self.max_validity_ms = max_validity_ms
        self._bump_profile()
        return self._profile_version

    # ------------------------------------------------------------------
    # packet helpers
    # ------------------------------------------------------------------

    def _signed_data(self, name: Name, content: bytes, freshness_ms: int = 0) -> DataPacket:
        data = DataPacket(
            name=name, content=content, freshness_ms=freshness_ms,
            sig_info=SignatureInfo(SignatureType.ECDSA_SHA256, self.pair.key_name),
        )
        data.sig_value = crypto.sign(data.signed_portion(), self.pair)
        return data

    def _error_data(self, interest: InterestPacket, error: ProtocolError) -> DataPacket:
        content = tlv.encode_tlv(tlv.ERROR_CODE, error.code.encode()) + tlv.encode_tlv(
            tlv.ERROR_INFO, str(error).encode()[:200]
        )
        return self._signed_data(interest.name, content)

    # ------------------------------------------------------------------
    # request-state table
    # ------------------------------------------------------------------

    def _gc(self, now_ms: int) -> None:
        with self._requests_lock:
            dead = []
            for rid, state in self.requests.items():
                if state.terminal_ms is not None:
                    if now_ms - state.terminal_ms > TERMINAL_RETENTION_MS:
                        dead.append(rid)
                elif now_ms - state.created_ms > STATE_TTL_MS:
                    dead.append(rid)
            for rid in dead:
                state = self.requests.pop(rid)
                if not state.session.erased:
                    state.session.erase()

    def _fresh_request_id(self) -> bytes:
        with self._requests_lock:
            for _ in range(MAX_LIVE_REDRAWS):
                rid = crypto.random_bytes(8)
                if rid not in self.requests:
                    return rid
        raise StorageFailureError("request id space exhausted")

    def _persist_state(self, state: RequestState) -> None:
        if not self.state_file:
            return
        try:
            with open(self.state_file, "a", encoding="utf-8") as f:
                f.write(json.dumps(state.snapshot()) + "\n")
        except OSError:
            logger.exception("state persistence failed")

    # ------------------------------------------------------------------
    # NEW
    # ------------------------------------------------------------------

    def handle_new(self, interest: InterestPacket) -> DataPacket:
        now = self._now_ms()
        self._gc(now)
        try:
            payload = parse_new_interest(interest, self.guard, now_ms=now)
        except ProtocolError as exc:
            return self._error_data(interest, exc)

        shell = payload.cert_request
        identity = shell.identity

        redirect = self._match_redirect(identity)
        if redirect:
            response = NewResponsePayload(redirects=redirect)
            return self._signed_data(interest.name, response.encode())

        if not any(p.matches(identity) for p in self.name_patterns):
            return self._error_data(
                interest, NameNotAllowedError(f"{identity} matches no allowed pattern")
            )
        if shell.not_after_ms - shell.not_before_ms > self.max_validity_ms:
            return self._error_data(
                interest, ValidityTooLongError(
                    f"requested validity exceeds {self.max_validity_ms} ms")
            )
        if shell.not_after_ms <= now:
            return self._error_data(interest, MalformedPayloadError("validity in the past"))

        ephemeral, ecdh_pub = crypto.generate_ephemeral()
        salt = crypto.random_bytes(crypto.SALT_SIZE)
        session = crypto.SessionCrypto(
            crypto.derive_session_key(ephemeral, payload.ecdh_pub, salt)
        )
        del ephemeral
        request_id = self._fresh_request_id()
        state = RequestState(
            request_id=request_id,
            requester_pub_bits=shell.public_key_bits,
            requester_key_name=shell.key_name,
            requested_name=shell.name,
            requested_identity=identity,
            not_before_ms=shell.not_before_ms,
            not_after_ms=shell.not_after_ms,
            session=session,
            created_ms=now,
        )
        with self._requests_lock:
            self.requests[request_id] = state
        self._persist_state(state)

        response = NewResponsePayload(
            ecdh_pub=ecdh_pub, salt=salt, request_id=request_id,
            offered_challenges=list(self.offered_challenges),
        )
        return self._signed_data(
            interest.name.append(request_id.hex()), response.encode()
        )

    def _match_redirect(self, identity: Name) -> list[tuple[Name, Name]]:
        return [
            (prefix, cert_name)
            for pattern, prefix, cert_name in self.redirects
            if pattern.matches(identity)
        ]

    # ------------------------------------------------------------------
    # CHALLENGE
    # ------------------------------------------------------------------

    def handle_challenge(self, interest: InterestPacket) -> DataPacket:
        now = self._now_ms()
        self._gc(now)
        wire = interest.encode()
        digest = compute_implicit_digest(wire)
        try:
            if interest.app_params is None:
                raise MalformedPayloadError("CHALLENGE interest has no parameters")
            payload = ChallengePayload.decode(interest.app_params)
            with self._requests_lock:
                state = self.requests.get(payload.request_id)
            if state is None:
                raise UnknownRequestIdError(payload.request_id.hex())

            # Idempotent re-fetch: a byte-identical retransmission gets the
            # stored response, with no state advance.
            if state.last_interest_digest == digest and state.last_response_wire:
                return decode_packet(state.last_response_wire)

            if state.status in (STATUS_SUCCESS, STATUS_FAILURE):
                raise UnknownRequestIdError("request already terminal")
            if interest.sig_info is None or not crypto.verify(
                interest.signed_portion(), interest.sig_value or b"",
                state.requester_pub_bits,
            ):
                raise BadSignatureError("CHALLENGE signature does not verify")
            self.guard.check_and_insert(state.requester_key_name, interest.nonce,
                                        interest.timestamp_ms, now_ms=now)
            params, _, _ = open_challenge_message(payload, state.session, interest.name)
        except (AuthenticationFailedError, IvReplayError) as exc:
            # AEAD failures reply with an error and leave all state unchanged.
            error = ProtocolError(str(exc))
            error.code = (
                "authentication-failed" if isinstance(exc, AuthenticationFailedError)
                else "iv-replay"
            )
            return self._error_data(interest, error)
        except ProtocolError as exc:
            return self._error_data(interest, exc)

        response = self._advance_challenge(interest, state, params, now)
        state.last_interest_digest = digest
        state.last_response_wire = response.encode()
        self._persist_state(state)
        return response

    def _challenge_context(self, state: RequestState, now: int) -> ChallengeContext:
        def chain_validator(cert: Certificate) -> bool:
            result = validate_chain(
                cert.data, self.policy, self._local_fetch, self.revoked, now_ms=now
            )
            if not result:
                logger.info("possession cert rejected: %s %s", result.reason, result.detail)
            return bool(result)

        def predicate(identity: Name, challenge_id: str, evidence: dict) -> bool:
            base = self.name_predicate or default_possession_predicate
            if not base(identity, challenge_id, evidence):
                return False
            if self.reverify_after_s is not None and "cert" in evidence:
                age_ms = now - evidence["cert"].not_before_ms
                if age_ms > self.reverify_after_s * 1000:
                    logger.info("possession cert too old; identity re-verification required")
                    return False
            return True

        return ChallengeContext(
            identity=state.requested_identity,
            now_ms=now,
            token_table=self.token_table,
            deliver=self.deliver,
            chain_validator=chain_validator,
            name_predicate=predicate,
        )

    def _local_fetch(self, name: Name):
        hits = self.repo.fetch_fn(name)
        if hits:
            return hits
        if name.is_prefix_of(self.anchor.name):
            return self.anchor.data
        return None

    def _advance_challenge(self, interest: InterestPacket, state: RequestState,
                           params: dict[str, bytes], now: int) -> DataPacket:
        ctx = self._challenge_context(state, now)
        visible: dict[str, bytes] = {}
        try:
            if state.status == STATUS_BEFORE_CHALLENGE:
                selected = params.pop("selected-challenge", None)
                if selected is None:
                    raise MalformedPayloadError("no selected-challenge parameter")
                challenge_id = selected.decode("utf-8", "replace")
                if challenge_id not in self.offered_challenges:
                    raise UnknownChallengeError(f"{challenge_id!r} not offered")
                challenge = get_challenge(challenge_id)
                state.challenge, visible = challenge.start(ctx, params)
                state.status = STATUS_CHALLENGE
            elif state.status == STATUS_CHALLENGE:
                challenge = get_challenge(state.challenge.challenge_id)
                state.challenge, visible = challenge.submit(state.challenge, params, ctx)
            else:
                raise UnknownRequestIdError("request already terminal")
        except ProtocolError as exc:
            state.status = STATUS_FAILURE
            state.terminal_ms = now
            state.session.erase()
            return self._error_data(interest, exc)

        if state.challenge.status is ChallengeStatus.SUCCESS:
            try:
                cert = self._issue_for(state, now)
            except (ValidityTooLongError, ClockSkewError, ValueError) as exc:
                state.status = STATUS_FAILURE
                state.terminal_ms = now
                response = self._sealed_reply(
                    interest, state, {"reason": str(exc).encode()[:200]},
                    ChallengeStatus.FAILURE,
                )
                state.session.erase()
                return response
            except StorageFailureError as exc:
                state.status = STATUS_FAILURE
                state.terminal_ms = now
                state.session.erase()
                return self._error_data(interest, exc)
            state.status = STATUS_SUCCESS
            state.terminal_ms = now
            state.issued_cert_name = cert.name
            response = self._sealed_reply(
                interest, state, {}, ChallengeStatus.SUCCESS, issued_cert_name=cert.name
            )
            state.session.erase()
            return response

        if state.challenge.status is ChallengeStatus.FAILURE:
            state.status = STATUS_FAILURE
            state.terminal_ms = now
            reason = state.challenge.failure_reason or "ChallengeFailed"
            response = self._sealed_reply(
                interest, state, {"reason": reason.encode()}, ChallengeStatus.FAILURE
            )
            state.session.erase()
            return response

        return self._sealed_reply(interest, state, visible, ChallengeStatus.NEED_MORE)

    def _sealed_reply(self, interest: InterestPacket, state: RequestState,
                      params: dict[str, bytes], status: ChallengeStatus,
                      issued_cert_name: Name | None = None) -> DataPacket:
        payload = seal_challenge_message(
            params, state.session, state.request_id, interest.name,
            status=status, issued_cert_name=issued_cert_name,
        )
        return self._signed_data(interest.name, payload.encode())

    def _issue_for(self, state: RequestState, now: int) -> Certificate:
        """Build, log (write-ahead), and export one certificate."""
        not_before = max(state.not_before_ms, now - 1000)
        cert = issue_certificate(
            state.requester_pub_bits,
            state.requested_identity,
            not_before,
            state.not_after_ms,
            self.pair,
            self.issuer_id,
            max_validity_ms=self.max_validity_ms,
            now_ms=now,
        )
        record_type = RecordType.ISSUANCE
        challenge_state = state.challenge
        if challenge_state is not None and challenge_state.challenge_id == "possession":
            presented = challenge_state.extra.get("presented_identity")
            if presented == state.requested_identity.to_text():
                record_type = RecordType.RENEWAL
        # Log before anything observable: a failed append fails the issuance.
        self.log.append(record_type, cert.name, cert.data.implicit_digest(), now)
        self.repo.insert(cert)
        return cert

    # ------------------------------------------------------------------
    # INFO / REVOKED / REVOKE handlers
    # ------------------------------------------------------------------

    def handle_info(self, interest: InterestPacket) -> DataPacket | None:
        info_name = self._info_name()
        name = interest.name.strip_digest()
        if name == info_name:
            latest = info_name.append(str(self._profile_version))
            return self._signed_data(info_name, encode_name(latest))
        if info_name.is_prefix_of(name) and len(name) == len(info_name) + 1:
            try:
                version = int(name[-1].value)
            except ValueError:
                return None
            return self._profile_versions.get(version)
        return None

    def handle_revoked(self, interest: InterestPacket) -> DataPacket:
        content = b"".join(
            tlv.encode_tlv(tlv.ISSUED_CERT_NAME, encode_name(name))
            for name in sorted(self.revoked, key=lambda n: n.to_text())
        )
        return self._signed_data(self.ca_prefix.append(CA_COMPONENT, REVOKED_COMPONENT),
                                 content)

    def handle_revoke(self, interest: InterestPacket) -> DataPacket:
        try:
            if interest.app_params is None:
                raise MalformedPayloadError("no revocation record attached")
            try:
                record_data = decode_packet(interest.app_params)
                if not isinstance(record_data, DataPacket):
                    raise DecodeError("not a Data packet")
                record = RevocationRecord.from_data(record_data)
            except (DecodeError, MalformedCertNameError) as exc:
                raise MalformedPayloadError(f"bad revocation record: {exc}") from exc
            self.submit_revocation(record)
        except ProtocolError as exc:
            return self._error_data(interest, exc)
        content = tlv.encode_tlv(tlv.ISSUED_CERT_NAME, encode_name(record.cert_name))
        return self._signed_data(interest.name, content)

    def submit_revocation(self, record: RevocationRecord) -> RevocationRecord:
        """Validate authorization and append the revocation; see revoke() for
        the issuer-initiated variant."""
        now = self._now_ms()
        cert = self.repo.lookup(record.cert_name)
        if cert is None:
            raise UnknownCertError(str(record.cert_name))
        if record.cert_name in self.revoked:
            raise AlreadyRevokedError(str(record.cert_name))
        if not record.verify_authorization(cert, self.pair.public_bits):
            if not self._namespace_owner_authorized(record, cert, now):
                raise UnauthorizedError("revocation signature matches no authorized key")
        self.log.append(RecordType.REVOCATION, record.cert_name,
                        record.data.implicit_digest(), now)
        self.revoked.add(record.cert_name)
        return record

    def _namespace_owner_authorized(self, record: RevocationRecord, cert: Certificate,
                                    now: int) -> bool:
        """Owner proof: the record is freshly signed under a chain-valid
        certificate whose identity is an ancestor of the revoked identity
        (possession of an ancestor key, in one round)."""
        if abs(record.timestamp_ms - now) > 120_000:
            return False
        locator = record.data.sig_info.key_locator if record.data.sig_info else None
        if locator is None:
            return False
        candidates = self._local_fetch(locator)
        if candidates is None:
            return False
        if isinstance(candidates, DataPacket):
            candidates = [candidates]
        for packet in candidates:
            try:
                signer_cert = Certificate(packet)
            except (DecodeError, MalformedCertNameError):
                continue
            owner = signer_cert.identity
            revoked_identity = parse_cert_name(record.cert_name)[0]
            if not owner.is_prefix_of(revoked_identity) or len(owner) >= len(revoked_identity):
                continue
            if not crypto.verify(record.data.signed_portion(), record.data.sig_value or b"",
                                 signer_cert.public_key_bits):
                continue
            if validate_chain(signer_cert.data, self.policy, self._local_fetch,
                              self.revoked, now_ms=now):
                return True
        return False

    def revoke(self, cert_name: Name, reason: str = "") -> RevocationRecord:
        """Issuer-initiated revocation (admin path)."""
        record = RevocationRecord.build(cert_name, reason, RevocationSigner.ISSUER, self.pair)
        return self.submit_revocation(record)

    # ------------------------------------------------------------------
    # dispatch and registration
    # ------------------------------------------------------------------

    def handle_interest(self, interest: InterestPacket) -> DataPacket | None:
        name = interest.name.strip_digest()
        base = len(self.ca_prefix)
        if len(name) <= base or name[base].value != CA_COMPONENT:
            return None
        if len(name) <= base + 1:
            return None
        step = name[base + 1].value
        if step == NEW_COMPONENT:
            return self.handle_new(interest)
        if step == CHALLENGE_COMPONENT:
            return self.handle_challenge(interest)
        if step == INFO_COMPONENT:
            return self.handle_info(interest)
        if step == REVOKED_COMPONENT:
            return self.handle_revoked(interest)
        if step == REVOKE_SUBMIT_COMPONENT:
            return self.handle_revoke(interest)
        return None

    def register_on(self, forwarder: Forwarder) -> list:
        regs = [
            forwarder.register_prefix(self.ca_prefix.append(CA_COMPONENT),
                                      self.handle_interest),
            forwarder.register_prefix(self.certificate.identity, self.repo.handler),
        ]
        return regs


# ----------------------------------------------------------------------
# admin channel (the local "secure channel" to the name authority)
# ----------------------------------------------------------------------

class AdminServer:
    """Line-JSON command socket for token provisioning and admin control."""

    def __init__(self, issuer: Issuer, socket_path: str):
        self.issuer = issuer
        self.socket_path = socket_path
        if os.path.exists(socket_path):
            os.unlink(socket_path)
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.bind(socket_path)
        os.chmod(socket_path, 0o600)
        self._sock.listen(4)
        self._sock.settimeout(0.2)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="admin", daemon=True)

    def start(self) -> "AdminServer":
        self._thread.start()
        return self

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                try:
                    raw = conn.makefile("r", encoding="utf-8").readline()
                    reply = self._handle_line(raw)
                except Exception as exc:  # never kill the admin loop
                    reply = {"ok": False, "error": f"internal: {exc}"}
                conn.sendall((json.dumps(reply) + "\n").encode("utf-8"))

    def _handle_line(self, raw: str) -> dict:
        try:
            command = json.loads(raw)
        except json.JSONDecodeError:
            return {"ok": False, "error": "bad json"}
        cmd = command.get("cmd")
        if cmd == "ping":
            return {"ok": True, "profile-version": self.issuer._profile_version}
        if cmd == "token-insert":
            identity = Name.from_text(command["identity"])
            expiry_ms = int(time.time() * 1000) + int(command.get("expiry-s", 300)) * 1000
            self.issuer.token_table.insert(identity, str(command["token"]), expiry_ms)
            return {"ok": True}
        if cmd == "revoke":
            try:
                record = self.issuer.revoke(Name.from_text(command["cert-name"]),
                                            command.get("reason", ""))
            except ProtocolError as exc:
                return {"ok": False, "error": exc.code}
            return {"ok": True, "cert-name": record.cert_name.to_text()}
        if cmd == "reload":
            version = self.issuer.reload(
                challenges=command.get("challenges"),
                name_patterns=command.get("name-patterns"),
                max_validity_ms=command.get("max-validity-ms"),
            )
            return {"ok": True, "profile-version": version}
        if cmd == "status":
            with self.issuer._requests_lock:
                live = len(self.issuer.requests)
            return {"ok": True, "live-requests": live,
                    "revoked": len(self.issuer.revoked)}
        return {"ok": False, "error": f"unknown command {cmd!r}"}

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self._sock.close()
        if os.path.exists(self.socket_path):
            os.unlink(self.socket_path)


def admin_request(socket_path: str, command: dict, timeout_s: float = 2.0) -> dict:
    with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
        sock.settimeout(timeout_s)
        sock.connect(socket_path)
        sock.sendall((json.dumps(command) + "\n").encode("utf-8"))
        reply = sock.makefile("r", encoding="utf-8").readline()
    return json.loads(reply)


def issuer_from_config(config: IssuerConfig) -> Issuer:
    for label, path in (("key-file", config.key_file), ("cert-file", config.cert_file),
                        ("anchor-file", config.anchor_file)):
        if not os.path.exists(path):
            raise ConfigError(f"{label} not found: {path}")
    certificate = load_cert(config.cert_file)
    anchor = load_cert(config.anchor_file)
    private = crypto.load_private_key(config.key_file)
    pair = crypto.keypair_from_private(private, certificate.identity)
    if pair.key_name != certificate.key_name:
        raise ConfigError("key-file does not match cert-file key")
    deliver = OutboxDelivery(config.outbox_file) if config.outbox_file else None
    repo = Repo(config.repo_dir) if config.repo_dir else Repo()
    return Issuer(
        pair,
        certificate,
        anchor,
        ca_prefix=config.ca_prefix,
        max_validity_ms=config.max_validity_s * 1000,
        challenges=config.challenges,
        name_patterns=config.name_patterns or None,
        redirects=config.redirects,
        repo=repo,
        log=TransparencyLog(config.log_file, pair),
        deliver=deliver,
        state_file=config.state_file,
        issuer_id=certificate.identity[-1].value.decode("utf-8", "replace"),
        reverify_after_s=config.reverify_after_s,
    )
