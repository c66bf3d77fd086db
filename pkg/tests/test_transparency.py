from __future__ import annotations

import time

import pytest

from ndncert import crypto
from ndncert.names import Name
from ndncert.packets import compute_implicit_digest
from ndncert.transparency import (
    GENESIS_HASH,
    LogRecord,
    RecordType,
    TransparencyLog,
    verify_chain,
)


def now_ms() -> int:
    return int(time.time() * 1000)


@pytest.fixture()
def log(tmp_path, root_pair):
    return TransparencyLog(tmp_path / "issuance.log", root_pair)


def _digest(i: int) -> bytes:
    return compute_implicit_digest(i.to_bytes(4, "big"))


def _cert_name(i: int) -> Name:
    return Name.from_text(f"/ndn/user{i}/KEY/{i:02x}/ca/{i}")


class TestAppend:
    def test_genesis(self, log):
        record = log.append(RecordType.ISSUANCE, _cert_name(0), _digest(0), now_ms())
        assert record.sequence == 0
        assert record.prev_hash == GENESIS_HASH

    def test_chain_rule(self, log):
        first = log.append(RecordType.ISSUANCE, _cert_name(0), _digest(0), now_ms())
        second = log.append(RecordType.RENEWAL, _cert_name(0), _digest(1), now_ms())
        assert second.prev_hash == first.record_hash
        assert second.sequence == 1

    def test_persisted_across_reopen(self, log, root_pair):
        log.append(RecordType.ISSUANCE, _cert_name(0), _digest(0), now_ms())
        reopened = TransparencyLog(log.path, root_pair)
        record = reopened.append(RecordType.REVOCATION, _cert_name(0), _digest(2), now_ms())
        assert record.sequence == 1
        assert verify_chain(log.path, root_pair.public_bits).ok

    def test_record_round_trip(self, log):
        record = log.append(RecordType.ISSUANCE, _cert_name(3), _digest(3), now_ms())
        assert LogRecord.decode(record.encode()) == record


class TestQuery:
    def test_unknown_name_empty(self, log):
        log.append(RecordType.ISSUANCE, _cert_name(0), _digest(0), now_ms())
        assert log.query_records(Name.from_text("/nobody")) == []

    def test_issue_then_revoke_in_order(self, log):
        name = _cert_name(5)
        log.append(RecordType.ISSUANCE, name, _digest(0), now_ms())
        log.append(RecordType.ISSUANCE, _cert_name(6), _digest(1), now_ms())
        log.append(RecordType.REVOCATION, name, _digest(2), now_ms())
        got = log.query_records(name)
        assert [r.record_type for r in got] == [RecordType.ISSUANCE, RecordType.REVOCATION]
        assert got[0].sequence < got[1].sequence

    def test_key_name_prefix_query_spans_versions(self, log):
        key_name = Name.from_text("/ndn/alice/KEY/aa")
        v1 = key_name.append("ca", "100")
        v2 = key_name.append("ca", "101")
        log.append(RecordType.ISSUANCE, v1, _digest(0), now_ms())
        log.append(RecordType.RENEWAL, v2, _digest(1), now_ms())
        got = log.query_records(key_name)
        assert [r.cert_name for r in got] == [v1, v2]

    def test_revoked_names(self, log):
        name = _cert_name(9)
        log.append(RecordType.ISSUANCE, name, _digest(0), now_ms())
        assert log.revoked_names() == set()
        log.append(RecordType.REVOCATION, name, _digest(1), now_ms())
        assert log.revoked_names() == {name}


class TestVerifyChain:
    def test_untouched_100_record_log(self, log, root_pair):
        for i in range(100):
            kind = RecordType.REVOCATION if i % 7 == 0 else RecordType.ISSUANCE
            log.append(kind, _cert_name(i), _digest(i), now_ms())
        assert verify_chain(log.path, root_pair.public_bits).ok

    def test_wrong_issuer_key_detected(self, log, root_pair):
        log.append(RecordType.ISSUANCE, _cert_name(0), _digest(0), now_ms())
        other = crypto.generate_keypair(Name.from_text("/ndn"))
        status = verify_chain(log.path, other.public_bits)
        assert not status.ok and status.broken_at == 0

    def test_deleted_middle_record(self, log, root_pair):
        for i in range(5):
            log.append(RecordType.ISSUANCE, _cert_name(i), _digest(i), now_ms())
        with open(log.path) as f:
            lines = f.read().splitlines()
        del lines[2]
        with open(log.path, "w") as f:
            f.write("\n".join(lines) + "\n")
        status = verify_chain(log.path, root_pair.public_bits)
        assert not status.ok and status.broken_at == 2

    def test_single_byte_tamper_sweep(self, log, root_pair):
        # Exhaustive: every byte position, three different mutations.
        for i in range(8):
            log.append(RecordType.ISSUANCE, _cert_name(i), _digest(i), now_ms())
        with open(log.path, "rb") as f:
            original = f.read()
        assert verify_chain(log.path, root_pair.public_bits).ok
        for position in range(len(original)):
            for mask in (0x01, 0x20, 0xFF):
                mutated = bytearray(original)
                mutated[position] ^= mask
                if mutated == original:
                    continue
                with open(log.path, "wb") as f:
                    f.write(bytes(mutated))
                status = verify_chain(log.path, root_pair.public_bits)
                assert not status.ok, f"undetected tamper at byte {position} mask {mask:#x}"
        with open(log.path, "wb") as f:
            f.write(original)

    def test_truncation_detected(self, log, root_pair):
        for i in range(3):
            log.append(RecordType.ISSUANCE, _cert_name(i), _digest(i), now_ms())
        with open(log.path, "rb") as f:
            original = f.read()
        with open(log.path, "wb") as f:
            f.write(original[:-10])
        assert not verify_chain(log.path, root_pair.public_bits).ok

    def test_empty_log_is_ok(self, tmp_path, root_pair):
        path = tmp_path / "fresh.log"
        path.write_text("")
        assert verify_chain(path, root_pair.public_bits).ok
