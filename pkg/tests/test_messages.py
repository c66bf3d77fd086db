from __future__ import annotations

import time

import pytest

from ndncert import crypto
from ndncert.errors import (
    AuthenticationFailedError,
    BadSignatureError,
    IvReplayError,
    MalformedPayloadError,
    ReplayedError,
    StaleTimestampError,
)
from ndncert.messages import (
    CertRequestShell,
    ChallengePayload,
    ChallengeStatus,
    NewRequestPayload,
    NewResponsePayload,
    ReplayGuard,
    build_new_interest,
    challenge_interest_name,
    new_interest_name,
    open_challenge_message,
    parse_new_interest,
    seal_challenge_message,
)
from ndncert.names import Name
from ndncert.packets import decode_packet


def now_ms() -> int:
    return int(time.time() * 1000)


def make_request(identity="/ndn/alice"):
    pair = crypto.generate_keypair(Name.from_text(identity))
    _, ecdh_pub = crypto.generate_ephemeral()
    shell = CertRequestShell(
        name=pair.key_name.append("_", "_"),
        public_key_bits=pair.public_bits,
        not_before_ms=now_ms(),
        not_after_ms=now_ms() + 3600_000,
    )
    return pair, NewRequestPayload(ecdh_pub, shell)


class TestNewInterest:
    def test_name_prefix(self):
        pair, payload = make_request()
        interest = build_new_interest(pair, payload, Name.from_text("/ndn"))
        assert Name.from_text("/ndn/CA/NEW").is_prefix_of(interest.name)

    def test_signature_verifies_under_requester_key(self):
        pair, payload = make_request()
        interest = build_new_interest(pair, payload, Name.from_text("/ndn"))
        assert crypto.verify(interest.signed_portion(), interest.sig_value, pair.public_key)

    def test_fresh_nonce_changes_wire_bytes(self):
        pair, payload = make_request()
        a = build_new_interest(pair, payload, Name.from_text("/ndn"))
        b = build_new_interest(pair, payload, Name.from_text("/ndn"))
        assert a.encode() != b.encode()

    def test_parse_inverse(self):
        pair, payload = make_request()
        interest = build_new_interest(pair, payload, Name.from_text("/ndn"))
        parsed = parse_new_interest(decode_packet(interest.encode()), ReplayGuard())
        assert parsed.ecdh_pub == payload.ecdh_pub
        assert parsed.cert_request.public_key_bits == pair.public_bits
        assert parsed.cert_request.identity == Name.from_text("/ndn/alice")

    def test_replayed_interest_rejected(self):
        pair, payload = make_request()
        interest = build_new_interest(pair, payload, Name.from_text("/ndn"))
        guard = ReplayGuard()
        parse_new_interest(interest, guard)
        with pytest.raises(ReplayedError):
            parse_new_interest(decode_packet(interest.encode()), guard)

    def test_stale_after_window(self):
        pair, payload = make_request()
        interest = build_new_interest(pair, payload, Name.from_text("/ndn"))
        guard = ReplayGuard()
        with pytest.raises(StaleTimestampError):
            parse_new_interest(interest, guard, now_ms=now_ms() + 61_000)

    def test_proof_of_possession_mismatch(self):
        pair, payload = make_request()
        other = crypto.generate_keypair(Name.from_text("/ndn/alice"))
        # signed by a key other than the one inside the payload
        interest = build_new_interest(other, payload, Name.from_text("/ndn"))
        with pytest.raises(BadSignatureError):
            parse_new_interest(interest, ReplayGuard())

    def test_unsigned_rejected(self):
        pair, payload = make_request()
        interest = build_new_interest(pair, payload, Name.from_text("/ndn"))
        interest.sig_info = None
        interest.sig_value = None
        with pytest.raises(BadSignatureError):
            parse_new_interest(interest, ReplayGuard())

    def test_keyid_mismatch_is_malformed(self):
        pair, payload = make_request()
        bogus = payload.cert_request.name[:-4].append(b"KEY", "deadbeef", "_", "_")
        payload.cert_request.name = bogus
        with pytest.raises(MalformedPayloadError):
            payload.validate()

    def test_off_curve_ecdh_is_malformed(self):
        pair, payload = make_request()
        bad = bytearray(payload.ecdh_pub)
        bad[-1] ^= 1
        payload.ecdh_pub = bytes(bad)
        with pytest.raises(MalformedPayloadError):
            NewRequestPayload.decode(payload.encode())


class TestNewResponse:
    def test_offer_round_trip(self):
        _, ecdh_pub = crypto.generate_ephemeral()
        payload = NewResponsePayload(
            ecdh_pub=ecdh_pub,
            salt=crypto.random_bytes(32),
            request_id=crypto.random_bytes(8),
            offered_challenges=["pin", "email", "possession"],
        )
        again = NewResponsePayload.decode(payload.encode())
        assert again.offered_challenges == ["pin", "email", "possession"]
        assert again.redirects == []
        assert again.salt == payload.salt

    def test_redirect_round_trip(self):
        payload = NewResponsePayload(
            redirects=[(Name.from_text("/ndn/campus1"),
                        Name.from_text("/ndn/campus1/KEY/1/root/2"))]
        )
        again = NewResponsePayload.decode(payload.encode())
        assert again.redirects == payload.redirects
        assert again.offered_challenges == []

    def test_both_riders_rejected(self):
        _, ecdh_pub = crypto.generate_ephemeral()
        payload = NewResponsePayload(
            ecdh_pub=ecdh_pub, salt=bytes(32), request_id=bytes(8),
            offered_challenges=["pin"],
            redirects=[(Name.from_text("/a"), Name.from_text("/a/KEY/1/x/2"))],
        )
        with pytest.raises(MalformedPayloadError):
            payload.encode()

    def test_neither_rider_rejected(self):
        with pytest.raises(MalformedPayloadError):
            NewResponsePayload().encode()


def _session_pair():
    salt = crypto.random_bytes(32)
    x_priv, x_pub = crypto.generate_ephemeral()
    y_priv, y_pub = crypto.generate_ephemeral()
    a = crypto.SessionCrypto(crypto.derive_session_key(x_priv, y_pub, salt))
    b = crypto.SessionCrypto(crypto.derive_session_key(y_priv, x_pub, salt))
    return a, b


class TestChallengeSealing:
    def test_round_trip(self):
        a, b = _session_pair()
        rid = crypto.random_bytes(8)
        name = challenge_interest_name(Name.from_text("/ndn"), rid)
        payload = seal_challenge_message({"selected-challenge": b"pin"}, a, rid, name)
        params, status, cert_name = open_challenge_message(
            ChallengePayload.decode(payload.encode()), b, name
        )
        assert params == {"selected-challenge": b"pin"}
        assert status is None and cert_name is None

    def test_status_and_cert_name_ride_inside(self):
        a, b = _session_pair()
        rid = bytes(8)
        name = challenge_interest_name(Name.from_text("/ndn"), rid)
        issued = Name.from_text("/ndn/alice/KEY/1/ca/2")
        payload = seal_challenge_message({}, a, rid, name,
                                         status=ChallengeStatus.SUCCESS,
                                         issued_cert_name=issued)
        params, status, cert_name = open_challenge_message(payload, b, name)
        assert status is ChallengeStatus.SUCCESS
        assert cert_name == issued

    def test_pin_not_in_ciphertext(self):
        a, _ = _session_pair()
        rid = bytes(8)
        name = challenge_interest_name(Name.from_text("/ndn"), rid)
        pin = b"314159"
        payload = seal_challenge_message({"code": pin}, a, rid, name)
        assert pin not in payload.encode()

    def test_stale_iv_counter_rejected(self):
        a, b = _session_pair()
        rid = bytes(8)
        name = challenge_interest_name(Name.from_text("/ndn"), rid)
        first = seal_challenge_message({"round": b"1"}, a, rid, name)
        second = seal_challenge_message({"round": b"2"}, a, rid, name)
        open_challenge_message(second, b, name)
        with pytest.raises(IvReplayError):
            open_challenge_message(first, b, name)

    def test_tampered_ciphertext(self):
        a, b = _session_pair()
        rid = bytes(8)
        name = challenge_interest_name(Name.from_text("/ndn"), rid)
        payload = seal_challenge_message({"code": b"123456"}, a, rid, name)
        bad = bytearray(payload.ciphertext)
        bad[3] ^= 1
        payload.ciphertext = bytes(bad)
        with pytest.raises(AuthenticationFailedError):
            open_challenge_message(payload, b, name)

    def test_name_binding(self):
        a, b = _session_pair()
        rid = bytes(8)
        name = challenge_interest_name(Name.from_text("/ndn"), rid)
        payload = seal_challenge_message({"x": b"y"}, a, rid, name)
        with pytest.raises(AuthenticationFailedError):
            open_challenge_message(payload, b, name.append("extra"))

    def test_session_binding(self):
        a, _ = _session_pair()
        _, other = _session_pair()
        rid = bytes(8)
        name = challenge_interest_name(Name.from_text("/ndn"), rid)
        payload = seal_challenge_message({"x": b"y"}, a, rid, name)
        with pytest.raises(AuthenticationFailedError):
            open_challenge_message(payload, other, name)

    def test_parameter_bounds(self):
        a, _ = _session_pair()
        rid = bytes(8)
        name = new_interest_name(Name.from_text("/ndn"))
        with pytest.raises(MalformedPayloadError):
            seal_challenge_message({"k" * 33: b"v"}, a, rid, name)
        with pytest.raises(MalformedPayloadError):
            seal_challenge_message({"k": b"v" * 1025}, a, rid, name)


class TestReplayGuard:
    def test_monotonic_timestamp_per_key(self):
        guard = ReplayGuard()
        key = Name.from_text("/a/KEY/1")
        t = now_ms()
        guard.check_and_insert(key, b"n1" * 4, t, now_ms=t)
        with pytest.raises(ReplayedError):
            guard.check_and_insert(key, b"n2" * 4, t, now_ms=t)
        guard.check_and_insert(key, b"n3" * 4, t + 1, now_ms=t + 1)

    def test_keys_are_independent(self):
        guard = ReplayGuard()
        t = now_ms()
        guard.check_and_insert(Name.from_text("/a/KEY/1"), b"x" * 8, t, now_ms=t)
        guard.check_and_insert(Name.from_text("/b/KEY/1"), b"x" * 8, t, now_ms=t)

    def test_timestamp_window_both_sides(self):
        guard = ReplayGuard()
        key = Name.from_text("/a/KEY/1")
        t = now_ms()
        with pytest.raises(StaleTimestampError):
            guard.check_and_insert(key, b"n" * 8, t - 61_000, now_ms=t)
        with pytest.raises(StaleTimestampError):
            guard.check_and_insert(key, b"m" * 8, t + 61_000, now_ms=t)
