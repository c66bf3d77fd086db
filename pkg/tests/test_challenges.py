from __future__ import annotations

import secrets
import time

import pytest

from ndncert import crypto
from ndncert.certs import (
    NamePattern,
    TrustPolicy,
    TrustRule,
    issue_certificate,
    self_signed_anchor,
    validate_chain,
)
from ndncert.challenges import (
    AssertionTokenTable,
    ChallengeContext,
    OutboxDelivery,
    get_challenge,
    registered_challenges,
)
from ndncert.errors import MissingParameterError, UnknownChallengeError
from ndncert.messages import ChallengeStatus
from ndncert.names import Name


def now_ms() -> int:
    return int(time.time() * 1000)


def ctx(identity="/ndn/alice", **kw) -> ChallengeContext:
    return ChallengeContext(identity=Name.from_text(identity), now_ms=now_ms(), **kw)


class TestRegistry:
    def test_builtins_present(self):
        assert {"pin", "email", "possession"} <= set(registered_challenges())

    def test_unknown_challenge(self):
        with pytest.raises(UnknownChallengeError):
            get_challenge("carrier-pigeon")


class TestPin:
    def test_start_defaults(self):
        deliveries = []
        state, visible = get_challenge("pin").start(
            ctx(deliver=lambda a, c: deliveries.append((a, c))), {}
        )
        assert state.remaining_attempts == 3
        assert len(state.secret_expected) == 6
        assert state.secret_expected.decode().isdigit()
        assert deliveries == [("/ndn/alice", state.secret_expected.decode())]

    def test_correct_code_first_attempt(self):
        pin = get_challenge("pin")
        context = ctx()
        state, _ = pin.start(context, {})
        code = state.secret_expected
        state, _ = pin.submit(state, {"code": code}, context)
        assert state.status is ChallengeStatus.SUCCESS
        assert state.secret_expected is None  # dropped on completion

    def test_three_wrong_codes_fail(self):
        pin = get_challenge("pin")
        context = ctx()
        state, _ = pin.start(context, {})
        for i in range(3):
            state, _ = pin.submit(state, {"code": b"000000"}, context)
        assert state.status is ChallengeStatus.FAILURE
        assert state.failure_reason == "OutOfAttempts"

    def test_wrong_then_right(self):
        pin = get_challenge("pin")
        context = ctx()
        state, _ = pin.start(context, {})
        code = state.secret_expected
        state, visible = pin.submit(state, {"code": b"999999x"}, context)
        assert state.status is ChallengeStatus.NEED_MORE
        assert visible["remaining-attempts"] == b"2"
        state, _ = pin.submit(state, {"code": code}, context)
        assert state.status is ChallengeStatus.SUCCESS

    def test_deadline(self):
        pin = get_challenge("pin")
        context = ctx()
        state, _ = pin.start(context, {})
        late = ChallengeContext(identity=context.identity,
                                now_ms=state.deadline_ms + 1)
        state, _ = pin.submit(state, {"code": state.secret_expected}, late)
        assert state.status is ChallengeStatus.FAILURE
        assert state.failure_reason == "Expired"

    def test_immediate_code_with_selection(self):
        table = AssertionTokenTable()
        identity = Name.from_text("/ndn/alice")
        table.insert(identity, "271828", now_ms() + 60_000)
        context = ctx(token_table=table)
        state, _ = get_challenge("pin").start(context, {"code": b"271828"})
        assert state.status is ChallengeStatus.SUCCESS

    def test_missing_code_does_not_burn_attempt(self):
        pin = get_challenge("pin")
        context = ctx()
        state, visible = pin.start(context, {})
        state, visible = pin.submit(state, {}, context)
        assert state.remaining_attempts == 3
        assert visible["error"] == b"MalformedParams"


class TestTokenTable:
    def test_single_use(self):
        table = AssertionTokenTable()
        identity = Name.from_text("/ndn/alice")
        table.insert(identity, "123456", now_ms() + 60_000)
        assert table.consume(identity, b"123456", now_ms())
        assert not table.consume(identity, b"123456", now_ms())

    def test_expired_never_verifies(self):
        table = AssertionTokenTable()
        identity = Name.from_text("/ndn/alice")
        table.insert(identity, "123456", now_ms() - 1)
        assert table.lookup(identity, now_ms()) is None
        assert not table.consume(identity, b"123456", now_ms())

    def test_token_pin_flow_consumes(self):
        table = AssertionTokenTable()
        identity = Name.from_text("/ndn/alice")
        table.insert(identity, "555000", now_ms() + 60_000)
        pin = get_challenge("pin")
        context = ctx(token_table=table)
        state, _ = pin.start(context, {})
        state, _ = pin.submit(state, {"code": b"555000"}, context)
        assert state.status is ChallengeStatus.SUCCESS
        # retired: a second session cannot reuse it
        assert table.lookup(identity, now_ms()) is None


class TestEmail:
    def test_missing_address(self):
        with pytest.raises(MissingParameterError):
            get_challenge("email").start(ctx(deliver=lambda a, c: None), {})

    def test_delivery_hook_called_once(self):
        deliveries = []
        context = ctx(deliver=lambda a, c: deliveries.append((a, c)))
        state, _ = get_challenge("email").start(context, {"email": b"a@b.c"})
        assert len(deliveries) == 1
        address, code = deliveries[0]
        assert address == "a@b.c"
        assert code.encode() == state.secret_expected
        state, _ = get_challenge("email").submit(state, {"code": code.encode()}, context)
        assert state.status is ChallengeStatus.SUCCESS

    def test_outbox_format(self, tmp_path):
        outbox = tmp_path / "outbox"
        deliver = OutboxDelivery(outbox)
        context = ctx(deliver=deliver)
        get_challenge("email").start(context, {"email": b"x@y.z"})
        line = outbox.read_text().strip()
        address, code, stamp = line.split("\t")
        assert address == "x@y.z"
        assert len(code) == 6 and code.isdigit()
        assert int(stamp) > 0


def _possession_fixture():
    root = crypto.generate_keypair(Name.from_text("/ndn"))
    anchor = self_signed_anchor(root, 86400_000)
    alice = crypto.generate_keypair(Name.from_text("/ndn/alice"))
    alice_cert = issue_certificate(alice.public_bits, alice.identity, now_ms(),
                                   now_ms() + 3600_000, root, "root")
    policy = TrustPolicy(anchor, [TrustRule(NamePattern("/ndn/**"), NamePattern("/ndn/**"),
                                            signer_prefix_of_subject=True)])
    store = {anchor.name: anchor, alice_cert.name: alice_cert}

    def fetch(name):
        hits = [c.data for c in store.values() if name.is_prefix_of(c.name)]
        return hits or None

    def chain_validator(cert):
        return bool(validate_chain(cert.data, policy, fetch))

    return root, anchor, alice, alice_cert, chain_validator


class TestPossession:
    def test_start_returns_16_byte_nonce(self):
        state, visible = get_challenge("possession").start(ctx(), {})
        assert len(visible["nonce"]) == 16
        assert state.round == 1

    def test_valid_proof_succeeds(self):
        root, anchor, alice, alice_cert, validator = _possession_fixture()
        context = ctx(chain_validator=validator)
        challenge = get_challenge("possession")
        state, visible = challenge.start(context, {})
        proof = crypto.sign(visible["nonce"], alice)
        state, _ = challenge.submit(
            state, {"cert": alice_cert.encode(), "proof": proof}, context
        )
        assert state.status is ChallengeStatus.SUCCESS

    def test_wrong_nonce_signature_fails(self):
        root, anchor, alice, alice_cert, validator = _possession_fixture()
        context = ctx(chain_validator=validator)
        challenge = get_challenge("possession")
        state, visible = challenge.start(context, {})
        proof = crypto.sign(b"not the nonce", alice)
        state, _ = challenge.submit(
            state, {"cert": alice_cert.encode(), "proof": proof}, context
        )
        assert state.status is ChallengeStatus.FAILURE

    def test_cross_anchor_cert_fails_even_with_valid_signature(self):
        root, anchor, alice, alice_cert, validator = _possession_fixture()
        # A parallel hierarchy signs a cert for the same identity text.
        other_root = crypto.generate_keypair(Name.from_text("/ndn"))
        mallory = crypto.generate_keypair(Name.from_text("/ndn/alice"))
        rogue_cert = issue_certificate(mallory.public_bits, mallory.identity, now_ms(),
                                       now_ms() + 3600_000, other_root, "root")
        context = ctx(chain_validator=validator)
        challenge = get_challenge("possession")
        state, visible = challenge.start(context, {})
        proof = crypto.sign(visible["nonce"], mallory)
        assert crypto.verify(visible["nonce"], proof, mallory.public_bits)
        state, _ = challenge.submit(
            state, {"cert": rogue_cert.encode(), "proof": proof}, context
        )
        assert state.status is ChallengeStatus.FAILURE

    def test_identity_scope_rule(self):
        # Cert for /ndn/alice cannot back a request for /ndn/bob.
        root, anchor, alice, alice_cert, validator = _possession_fixture()
        context = ctx(identity="/ndn/bob", chain_validator=validator)
        challenge = get_challenge("possession")
        state, visible = challenge.start(context, {})
        proof = crypto.sign(visible["nonce"], alice)
        state, _ = challenge.submit(
            state, {"cert": alice_cert.encode(), "proof": proof}, context
        )
        assert state.status is ChallengeStatus.FAILURE

    def test_ancestor_identity_allowed(self):
        # Cert for /ndn/alice may request names under /ndn/alice/devices/...
        root, anchor, alice, alice_cert, validator = _possession_fixture()
        context = ctx(identity="/ndn/alice/devices/pi", chain_validator=validator)
        challenge = get_challenge("possession")
        state, visible = challenge.start(context, {})
        proof = crypto.sign(visible["nonce"], alice)
        state, _ = challenge.submit(
            state, {"cert": alice_cert.encode(), "proof": proof}, context
        )
        assert state.status is ChallengeStatus.SUCCESS


class TestGuessingResistance:
    def test_random_adversary_at_small_scale(self):
        # q=2 guesses per session over a 6-digit space: expected successes
        # across 600 sessions ~ 0.0012; more than one would be astonishing.
        pin = get_challenge("pin")
        successes = 0
        for _ in range(600):
            context = ctx()
            state, _ = pin.start(context, {})
            for _ in range(2):
                guess = f"{secrets.randbelow(10 ** 6):06d}".encode()
                state, _ = pin.submit(state, {"code": guess}, context)
                if state.status is ChallengeStatus.SUCCESS:
                    successes += 1
                    break
        assert successes <= 1
