"""Packet-size and crypto-timing measurements.

Every measured packet is a real wire packet captured from a live loopback
exchange (issuer /ndn, identity /ndn/alice, prime256v1 keys, AES-GCM-128),
never a synthetic estimate.  Timings are medians over many runs, reported
in microseconds.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field

from . import crypto
from .names import Name
from .packets import decode_packet
from .transport import Face

PACKET_CATEGORIES = (
    "new-interest",
    "new-data",
    "challenge-interest",
    "challenge-data",
    "certificate",
)
CRYPTO_OPS = ("sign", "verify", "ecdh", "hkdf", "aead-seal", "aead-open")


class RecordingFace(Face):
    """Wraps a face, capturing wire bytes in both directions."""

    def __init__(self, inner: Face):
        self.inner = inner
        self.exchanges: list[tuple[bytes, bytes]] = []

    def _request(self, wire: bytes, timeout_s: float) -> bytes | None:
        reply = self.inner._request(wire, timeout_s)
        if reply is not None:
            self.exchanges.append((wire, reply))
        return reply


@dataclass
class BenchReport:
    packet_sizes: dict[str, int] = field(default_factory=dict)
    op_times_us: dict[str, float] = field(default_factory=dict)
    runs: int = 0

    def lines(self) -> list[str]:
        out = ["packet sizes (bytes)"]
        for name in PACKET_CATEGORIES:
            out.append(f"  {name:<20} {self.packet_sizes.get(name, 0):>6}")
        out.append(f"crypto operation times (us, median of {self.runs} runs)")
        for name in CRYPTO_OPS:
            out.append(f"  {name:<20} {self.op_times_us.get(name, 0.0):>10.1f}")
        return out

    def records(self) -> list[dict]:
        out = []
        for name in PACKET_CATEGORIES:
            out.append({"kind": "packet-size", "name": name,
                        "bytes": self.packet_sizes.get(name, 0)})
        for name in CRYPTO_OPS:
            out.append({"kind": "crypto-time", "name": name,
                        "us": self.op_times_us.get(name, 0.0), "runs": self.runs})
        return out

    def write_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for record in self.records():
                f.write(json.dumps(record) + "\n")


def _median_us(fn, runs: int) -> float:
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e6)
    return statistics.median(samples)


def _classify(name: Name) -> str | None:
    text = name.to_text()
    if "/CA/NEW" in text:
        return "new"
    if "/CA/CHALLENGE" in text:
        return "challenge"
    return None


def measure_packet_sizes(exchanges: list[tuple[bytes, bytes]],
                         cert_wire: bytes) -> dict[str, int]:
    sizes: dict[str, int] = {"certificate": len(cert_wire)}
    for interest_wire, data_wire in exchanges:
        kind = _classify(decode_packet(interest_wire).name)
        if kind == "new" and "new-interest" not in sizes:
            sizes["new-interest"] = len(interest_wire)
            sizes["new-data"] = len(data_wire)
        elif kind == "challenge" and "challenge-interest" not in sizes:
            sizes["challenge-interest"] = len(interest_wire)
            sizes["challenge-data"] = len(data_wire)
    return sizes


def measure_crypto_ops(runs: int = 1000) -> dict[str, float]:
    pair = crypto.generate_keypair(Name.from_text("/ndn/alice"))
    message = crypto.random_bytes(300)  # order of a signed-portion payload
    signature = crypto.sign(message, pair)
    public = pair.public_key

    static_priv, _ = crypto.generate_ephemeral()
    _, peer_pub = crypto.generate_ephemeral()
    salt = crypto.random_bytes(32)
    shared = crypto.derive_session_key(static_priv, peer_pub, salt)

    session_a = crypto.SessionCrypto(shared)
    session_b = crypto.SessionCrypto(shared)
    plaintext = crypto.random_bytes(64)
    ad = crypto.random_bytes(48)
    sealed: list[tuple[bytes, bytes]] = []

    def seal():
        sealed.append(session_a.seal(plaintext, ad))

    def open_():
        iv, ct = sealed.pop(0)
        session_b.open(iv, ct, ad)

    times = {
        "sign": _median_us(lambda: crypto.sign(message, pair), runs),
        "verify": _median_us(lambda: crypto.verify(message, signature, public), runs),
        "ecdh": _median_us(
            lambda: crypto.derive_session_key(static_priv, peer_pub, salt), runs),
        "hkdf": _median_us(
            lambda: crypto.hkdf_sha256(salt, shared, b"bench", 16), runs),
    }
    times["aead-seal"] = _median_us(seal, runs)
    times["aead-open"] = _median_us(open_, runs)
    return times


def run_bench(runs: int = 1000) -> BenchReport:
    """Full measurement: live loopback issuance plus isolated crypto ops."""
    import pathlib
    import tempfile

    from .client import request_certificate

    with tempfile.TemporaryDirectory() as workdir:
        setup = _build_bench_ca(pathlib.Path(workdir))
        face = RecordingFace(setup["face"])
        setup["token_table"].insert(Name.from_text("/ndn/alice"), "123456",
                                    int(time.time() * 1000) + 300_000)
        cert = request_certificate(
            face, Name.from_text("/ndn"), Name.from_text("/ndn/alice"),
            "pin", {"code": b"123456"}, policy=setup["policy"],
        )
    report = BenchReport(runs=runs)
    report.packet_sizes = measure_packet_sizes(face.exchanges, cert.encode())
    report.op_times_us = measure_crypto_ops(runs)
    return report


def _build_bench_ca(workdir) -> dict:
    from .certs import self_signed_anchor, NamePattern, TrustPolicy, TrustRule
    from .challenges import AssertionTokenTable
    from .issuer import Issuer
    from .transparency import TransparencyLog
    from .transport import Forwarder, LoopbackFace, Repo

    pair = crypto.generate_keypair(Name.from_text("/ndn"))
    anchor = self_signed_anchor(pair, 86400_000)
    forwarder = Forwarder(cache_capacity=16)
    token_table = AssertionTokenTable()
    issuer = Issuer(
        pair, anchor, anchor,
        max_validity_ms=3600_000,
        challenges=["pin"],
        name_patterns=["/ndn/**"],
        repo=Repo(workdir / "repo"),
        log=TransparencyLog(workdir / "bench.log", pair),
        token_table=token_table,
        issuer_id="root",
    )
    issuer.register_on(forwarder)
    policy = TrustPolicy(anchor, [
        TrustRule(NamePattern("/ndn/**"), NamePattern("/ndn/**"),
                  signer_prefix_of_subject=True),
    ])
    return {
        "face": LoopbackFace(forwarder),
        "token_table": token_table,
        "policy": policy,
    }
