"""Append-only hash-chained record of issuance, renewal, and revocation.

One base64 line per record in a single-writer file.  Each record hashes
(sequence, type, cert name, payload digest, previous hash, timestamp); the
previous-hash link makes any byte-level tamper, deletion, or reordering
detectable, and the issuer signature over the same material pins the chain
to the issuer key.

Appends are flushed to disk before the caller may send the response that
depends on them: no unlogged issuance can be observed.
"""

from __future__ import annotations

import base64
import enum
import os
import threading
from dataclasses import dataclass

from . import crypto, tlv
from .errors import DecodeError, StorageFailureError
from .names import Name, decode_name_value, encode_name
from .packets import compute_implicit_digest

HASH_SIZE = 32
GENESIS_HASH = bytes(HASH_SIZE)


class RecordType(enum.IntEnum):
    ISSUANCE = 1
    RENEWAL = 2
    REVOCATION = 3


@dataclass(frozen=True)
class LogRecord:
    sequence: int
    record_type: RecordType
    cert_name: Name
    payload_digest: bytes
    prev_hash: bytes
    record_hash: bytes
    timestamp_ms: int
    signature: bytes

    def hash_preimage(self) -> bytes:
        return b"".join([
            self.sequence.to_bytes(8, "big"),
            bytes([self.record_type]),
            encode_name(self.cert_name),
            self.payload_digest,
            self.prev_hash,
            self.timestamp_ms.to_bytes(8, "big"),
        ])

    def compute_hash(self) -> bytes:
        return compute_implicit_digest(self.hash_preimage())

    def signed_portion(self) -> bytes:
        return self.hash_preimage() + self.record_hash

    def encode(self) -> bytes:
        inner = b"".join([
            tlv.encode_tlv(tlv.LOG_SEQUENCE, self.sequence.to_bytes(8, "big")),
            tlv.encode_tlv(tlv.LOG_RECORD_TYPE, bytes([self.record_type])),
            encode_name(self.cert_name),
            tlv.encode_tlv(tlv.LOG_PAYLOAD_DIGEST, self.payload_digest),
            tlv.encode_tlv(tlv.LOG_PREV_HASH, self.prev_hash),
            tlv.encode_tlv(tlv.LOG_RECORD_HASH, self.record_hash),
            tlv.encode_tlv(tlv.LOG_TIMESTAMP, self.timestamp_ms.to_bytes(8, "big")),
            tlv.encode_tlv(tlv.LOG_SIGNATURE, self.signature),
        ])
        return tlv.encode_tlv(tlv.LOG_RECORD, inner)

    @classmethod
    def decode(cls, buf: bytes) -> "LogRecord":
        outer = tlv.TlvReader(buf)
        reader = tlv.TlvReader(outer.read_expected(tlv.LOG_RECORD))
        outer.expect_end()
        sequence = int.from_bytes(reader.read_expected(tlv.LOG_SEQUENCE), "big")
        type_raw = reader.read_expected(tlv.LOG_RECORD_TYPE)
        cert_name = decode_name_value(reader.read_expected(tlv.NAME))
        payload_digest = reader.read_expected(tlv.LOG_PAYLOAD_DIGEST)
        prev_hash = reader.read_expected(tlv.LOG_PREV_HASH)
        record_hash = reader.read_expected(tlv.LOG_RECORD_HASH)
        timestamp_ms = int.from_bytes(reader.read_expected(tlv.LOG_TIMESTAMP), "big")
        signature = reader.read_expected(tlv.LOG_SIGNATURE)
        reader.expect_end()
        if len(payload_digest) != HASH_SIZE or len(prev_hash) != HASH_SIZE \
                or len(record_hash) != HASH_SIZE:
            raise DecodeError("bad digest length in log record")
        try:
            record_type = RecordType(type_raw[0])
        except (IndexError, ValueError):
            raise DecodeError("bad record type") from None
        return cls(sequence, record_type, cert_name, payload_digest, prev_hash,
                   record_hash, timestamp_ms, signature)


@dataclass(frozen=True)
class ChainStatus:
    ok: bool
    broken_at: int | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _encode_line(record: LogRecord) -> str:
    return base64.b64encode(record.encode()).decode("ascii")


class TransparencyLog:
    """Single-writer, line-oriented, hash-chained log file."""

    def __init__(self, path, issuer_pair: crypto.KeyPair | None = None):
        self.path = str(path)
        self._issuer_pair = issuer_pair
        self._lock = threading.Lock()
        self._tail_hash = GENESIS_HASH
        self._next_sequence = 0
        for record in self.read_records():
            self._tail_hash = record.record_hash
            self._next_sequence = record.sequence + 1

    def append(self, record_type: RecordType, cert_name: Name, payload_digest: bytes,
               timestamp_ms: int) -> LogRecord:
        """Persist (flush + fsync) before returning; callers reply only after."""
        if self._issuer_pair is None:
            raise StorageFailureError("log opened without a signing key")
        if len(payload_digest) != HASH_SIZE:
            raise ValueError("payload digest must be 32 bytes")
        with self._lock:
            partial = LogRecord(
                sequence=self._next_sequence,
                record_type=record_type,
                cert_name=cert_name,
                payload_digest=payload_digest,
                prev_hash=self._tail_hash,
                record_hash=b"\x00" * HASH_SIZE,
                timestamp_ms=timestamp_ms,
                signature=b"",
            )
            record_hash = partial.compute_hash()
            record = LogRecord(
                sequence=partial.sequence,
                record_type=record_type,
                cert_name=cert_name,
                payload_digest=payload_digest,
                prev_hash=partial.prev_hash,
                record_hash=record_hash,
                timestamp_ms=timestamp_ms,
                signature=crypto.sign(partial.hash_preimage() + record_hash,
                                      self._issuer_pair),
            )
            try:
                with open(self.path, "a", encoding="ascii") as f:
                    f.write(_encode_line(record) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as exc:
                raise StorageFailureError(f"log append failed: {exc}") from exc
            self._tail_hash = record_hash
            self._next_sequence = record.sequence + 1
            return record

    def read_records(self) -> list[LogRecord]:
        """Best-effort parse of the current file (a read-side snapshot)."""
        records = []
        try:
            with open(self.path, "r", encoding="ascii") as f:
                lines = f.read().splitlines()
        except FileNotFoundError:
            return []
        for line in lines:
            records.append(LogRecord.decode(base64.b64decode(line, validate=True)))
        return records

    def query_records(self, name: Name) -> list[LogRecord]:
        """Records whose cert name equals or extends `name`, in sequence order.

        Passing a key name therefore returns the records of every version
        issued for that key.
        """
        return [r for r in self.read_records() if name.is_prefix_of(r.cert_name)]

    def revoked_names(self) -> set[Name]:
        return {r.cert_name for r in self.read_records()
                if r.record_type is RecordType.REVOCATION}


def verify_chain(path, issuer_public_bits: bytes) -> ChainStatus:
    """Recompute every hash, link, and signature from the raw file bytes.

    The base64 of each line is required to be canonical (decode + re-encode
    must reproduce the line) so no single-byte mutation can hide in padding
    slack.  Structural checks (parse, sequence, links, hashes) run over the
    whole file before any signature is verified; `broken_at` carries the
    first failing record index (or line number for unparseable lines).
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        return ChainStatus(False, 0, f"unreadable: {exc}")
    if raw and not raw.endswith(b"\n"):
        return ChainStatus(False, max(raw.count(b"\n") - 1, 0), "missing final newline")

    records: list[LogRecord] = []
    prev_hash = GENESIS_HASH
    for index, line in enumerate(raw.split(b"\n")[:-1] if raw else []):
        try:
            decoded = base64.b64decode(line, validate=True)
            if base64.b64encode(decoded) != line:
                raise ValueError("non-canonical base64")
            record = LogRecord.decode(decoded)
        except (ValueError, DecodeError) as exc:
            return ChainStatus(False, index, f"unparseable record: {exc}")
        if record.sequence != index:
            return ChainStatus(False, index, "sequence gap")
        if record.prev_hash != prev_hash:
            return ChainStatus(False, index, "previous-hash link broken")
        if record.compute_hash() != record.record_hash:
            return ChainStatus(False, index, "record hash mismatch")
        prev_hash = record.record_hash
        records.append(record)
    for index, record in enumerate(records):
        if not crypto.verify(record.signed_portion(), record.signature,
                             issuer_public_bits):
            return ChainStatus(False, index, "issuer signature does not verify")
    return ChainStatus(True)
