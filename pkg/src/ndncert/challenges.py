"""Pluggable identity-verification challenges.

Each challenge implements the same two-step surface (start, submit) over a
shared state record, so new verification means can be added without
touching the issuer.  Built-ins: "pin" (out-of-band code, optionally
pre-provisioned by the name authority), "email" (code sent through a
delivery hook), and "possession" (sign a fresh nonce with an existing
certificate's key and present a chain the issuer's policy accepts).

Secrets are compared in constant time and only ever travel inside the
session AEAD or through out-of-band hooks.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from . import crypto
from .certs import Certificate
from .errors import (
    DecodeError,
    MalformedCertNameError,
    MissingParameterError,
    UnknownChallengeError,
)
from .messages import ChallengeStatus
from .names import Name

PIN_DIGITS = 6
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_TIME_LIMIT_S = 300
POSSESSION_NONCE_SIZE = 16

FAIL_OUT_OF_ATTEMPTS = "OutOfAttempts"
FAIL_EXPIRED = "Expired"
FAIL_MALFORMED = "MalformedParams"
FAIL_PROOF = "ProofRejected"


@dataclass(frozen=True)
class ChallengeDescriptor:
    id: str
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    time_limit_s: int = DEFAULT_TIME_LIMIT_S
    # Requester-supplied parameter keys, by round, for documentation and prompts.
    parameter_keys: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("maxAttempts must be >= 1")
        if self.time_limit_s <= 0:
            raise ValueError("timeLimit must be positive")


@dataclass
class ChallengeState:
    challenge_id: str
    round: int
    remaining_attempts: int
    deadline_ms: int
    secret_expected: bytes | None = None
    status: ChallengeStatus = ChallengeStatus.NEED_MORE
    failure_reason: str = ""
    extra: dict = field(default_factory=dict)

    def fail(self, reason: str) -> "ChallengeState":
        self.status = ChallengeStatus.FAILURE
        self.failure_reason = reason
        self.secret_expected = None
        return self

    def succeed(self) -> "ChallengeState":
        self.status = ChallengeStatus.SUCCESS
        self.secret_expected = None
        return self


@dataclass
class TokenEntry:
    token: str
    expiry_ms: int
    used: bool = False


class AssertionTokenTable:
    """Single-use short codes provisioned by the name authority, per identity."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, TokenEntry] = {}

    def insert(self, identity: Name, token: str, expiry_ms: int) -> None:
        with self._lock:
            self._entries[identity.to_text()] = TokenEntry(token, expiry_ms)

    def lookup(self, identity: Name, now_ms: int) -> str | None:
        with self._lock:
            entry = self._entries.get(identity.to_text())
            if entry is None or entry.used or entry.expiry_ms <= now_ms:
                return None
            return entry.token

    def consume(self, identity: Name, code: bytes, now_ms: int) -> bool:
        """Atomically verify and retire the token; expired or reused never match."""
        with self._lock:
            entry = self._entries.get(identity.to_text())
            if entry is None or entry.used or entry.expiry_ms <= now_ms:
                return False
            if not crypto.constant_time_equal(entry.token.encode("utf-8"), code):
                return False
            entry.used = True
            return True


# Hook signature: (destination, code).  The default implementation appends
# outbox lines; real deployments plug in their own transport.
DeliveryHook = Callable[[str, str], None]


class OutboxDelivery:
    """Writes one `address<TAB>code<TAB>timestamp` line per delivery."""

    def __init__(self, path):
        self.path = path

    def __call__(self, address: str, code: str) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(f"{address}\t{code}\t{int(time.time() * 1000)}\n")


@dataclass
class ChallengeContext:
    """Issuer-side collaborators a challenge may need."""

    identity: Name
    now_ms: int
    token_table: AssertionTokenTable | None = None
    deliver: DeliveryHook | None = None
    # Bound by the issuer to validate_chain under its policy and revocations.
    chain_validator: Callable[[Certificate], bool] | None = None
    # Optional naming-policy callback: (requested identity, challenge id, evidence).
    name_predicate: Callable[[Name, str, dict], bool] | None = None


class Challenge:
    """Interface every verification means implements."""

    descriptor: ChallengeDescriptor

    @property
    def id(self) -> str:
        return self.descriptor.id

    def start(self, ctx: ChallengeContext,
              params: dict[str, bytes]) -> tuple[ChallengeState, dict[str, bytes]]:
        raise NotImplementedError

    def submit(self, state: ChallengeState, params: dict[str, bytes],
               ctx: ChallengeContext) -> tuple[ChallengeState, dict[str, bytes]]:
        raise NotImplementedError

    def _new_state(self, ctx: ChallengeContext) -> ChallengeState:
        return ChallengeState(
            challenge_id=self.id,
            round=1,
            remaining_attempts=self.descriptor.max_attempts,
            deadline_ms=ctx.now_ms + self.descriptor.time_limit_s * 1000,
        )

    def _check_open(self, state: ChallengeState, ctx: ChallengeContext) -> bool:
        if state.status is not ChallengeStatus.NEED_MORE:
            return False
        if ctx.now_ms > state.deadline_ms:
            state.fail(FAIL_EXPIRED)
            return False
        return True


def _random_pin() -> str:
    return f"{secrets.randbelow(10 ** PIN_DIGITS):0{PIN_DIGITS}d}"


class _CodeChallenge(Challenge):
    """Shared compare-a-short-code machinery for pin and email."""

    def _verify_code(self, state: ChallengeState, code: bytes,
                     ctx: ChallengeContext) -> tuple[ChallengeState, dict[str, bytes]]:
        if state.extra.get("token_sourced"):
            ok = ctx.token_table.consume(ctx.identity, code, ctx.now_ms)
        else:
            ok = crypto.constant_time_equal(state.secret_expected or b"", code)
        if ok:
            return state.succeed(), {}
        state.remaining_attempts -= 1
        if state.remaining_attempts <= 0:
            return state.fail(FAIL_OUT_OF_ATTEMPTS), {}
        state.round += 1
        return state, {"remaining-attempts": str(state.remaining_attempts).encode()}

    def submit(self, state, params, ctx):
        if not self._check_open(state, ctx):
            return state, {}
        code = params.get("code")
        if code is None:
            return state, {"error": FAIL_MALFORMED.encode()}
        return self._verify_code(state, code, ctx)


class PinChallenge(_CodeChallenge):
    """Out-of-band PIN: pre-provisioned assertion token when one exists for
    the requested name, otherwise a fresh code pushed through the delivery
    hook.  A `code` handed in with the selection is verified immediately."""

    descriptor = ChallengeDescriptor("pin", parameter_keys=(("code",),))

    def start(self, ctx, params):
        state = self._new_state(ctx)
        token = ctx.token_table.lookup(ctx.identity, ctx.now_ms) if ctx.token_table else None
        if token is not None:
            state.extra["token_sourced"] = True
            state.secret_expected = token.encode("utf-8")
        else:
            code = _random_pin()
            state.secret_expected = code.encode("utf-8")
            if ctx.deliver is not None:
                ctx.deliver(ctx.identity.to_text(), code)
        if "code" in params:
            return self._verify_code(state, params["code"], ctx)
        return state, {}


class EmailChallenge(_CodeChallenge):
    """Code mailed to the address parameter through the delivery hook."""

    descriptor = ChallengeDescriptor("email", parameter_keys=(("email",), ("code",)))

    def start(self, ctx, params):
        address = params.get("email")
        if address is None:
            raise MissingParameterError("email address parameter required")
        state = self._new_state(ctx)
        code = _random_pin()
        state.secret_expected = code.encode("utf-8")
        state.extra["email"] = address.decode("utf-8", "replace")
        if ctx.deliver is None:
            raise MissingParameterError("no delivery hook configured")
        ctx.deliver(state.extra["email"], code)
        return state, {}


class PossessionChallenge(Challenge):
    """Prove control of an existing certificate accepted by the issuer's
    policy: sign a fresh 16-byte nonce with its key.  Single round trip."""

    descriptor = ChallengeDescriptor(
        "possession", max_attempts=1, parameter_keys=(("cert", "proof"),)
    )

    def start(self, ctx, params):
        state = self._new_state(ctx)
        nonce = crypto.random_bytes(POSSESSION_NONCE_SIZE)
        state.secret_expected = nonce
        return state, {"nonce": nonce}

    def submit(self, state, params, ctx):
        if not self._check_open(state, ctx):
            return state, {}
        cert_bytes = params.get("cert")
        proof = params.get("proof")
        if cert_bytes is None or proof is None:
            return state, {"error": FAIL_MALFORMED.encode()}
        try:
            cert = Certificate.from_bytes(cert_bytes)
        except (DecodeError, MalformedCertNameError):
            return state.fail(FAIL_MALFORMED), {}
        nonce = state.secret_expected or b""
        ok = crypto.verify(nonce, proof, cert.public_key_bits)
        if ok and ctx.chain_validator is not None:
            ok = bool(ctx.chain_validator(cert))
        elif ctx.chain_validator is None:
            ok = False
        if ok:
            predicate = ctx.name_predicate or default_possession_predicate
            ok = predicate(ctx.identity, self.id, {"cert": cert})
        if ok:
            state.extra["presented_identity"] = cert.identity.to_text()
            return state.succeed(), {}
        state.remaining_attempts -= 1
        if state.remaining_attempts <= 0:
            return state.fail(FAIL_PROOF), {}
        state.round += 1
        return state, {"error": FAIL_PROOF.encode()}


def default_possession_predicate(identity: Name, challenge_id: str, evidence: dict) -> bool:
    """Presented certificate must cover the requested name: same identity
    (renewal) or an ancestor of it (namespace-owner operations)."""
    cert: Certificate = evidence["cert"]
    return cert.identity == identity or (
        cert.identity.is_prefix_of(identity) and len(cert.identity) < len(identity)
    )


_REGISTRY: dict[str, Challenge] = {}


def register_challenge(challenge: Challenge) -> None:
    _REGISTRY[challenge.id] = challenge


def get_challenge(challenge_id: str) -> Challenge:
    try:
        return _REGISTRY[challenge_id]
    except KeyError:
        raise UnknownChallengeError(f"no challenge {challenge_id!r}") from None


def registered_challenges() -> list[str]:
    return sorted(_REGISTRY)


register_challenge(PinChallenge())
register_challenge(EmailChallenge())
register_challenge(PossessionChallenge())
