from __future__ import annotations

import random
import time

import pytest

from ndncert import crypto
from ndncert.certs import issue_certificate
from ndncert.errors import DuplicatePrefixError, TimeoutError_
from ndncert.names import Name, NameComponent
from ndncert.packets import DataPacket, SignatureInfo, SignatureType, decode_packet
from ndncert.transport import (
    ContentCache,
    Forwarder,
    LoopbackFace,
    Repo,
    UdpFace,
    UdpServer,
    interest_matches_data,
)
from ndncert.messages import sign_interest
from ndncert.packets import InterestPacket


def now_ms() -> int:
    return int(time.time() * 1000)


def make_interest(name: str) -> InterestPacket:
    return InterestPacket(Name.from_text(name), crypto.random_bytes(8), now_ms())


def make_data(name: str, content=b"x", freshness_ms=0) -> DataPacket:
    return DataPacket(
        name=Name.from_text(name), content=content, freshness_ms=freshness_ms,
        sig_info=SignatureInfo(SignatureType.SHA256_DIGEST), sig_value=bytes(64),
    )


class TestDispatch:
    def test_prefix_routing(self):
        fwd = Forwarder()
        hits = []

        def handler(interest):
            hits.append(interest.name)
            return make_data(interest.name.to_text())

        fwd.register_prefix(Name.from_text("/ndn/CA"), handler)
        face = LoopbackFace(fwd)
        data = face.express_interest(make_interest("/ndn/CA/NEW/x"))
        assert data.name == Name.from_text("/ndn/CA/NEW/x")
        assert hits == [Name.from_text("/ndn/CA/NEW/x")]

    def test_longest_prefix_wins(self):
        fwd = Forwarder()
        fwd.register_prefix(Name.from_text("/ndn"),
                            lambda i: make_data(i.name.to_text(), b"short"))
        fwd.register_prefix(Name.from_text("/ndn/CA"),
                            lambda i: make_data(i.name.to_text(), b"long"))
        face = LoopbackFace(fwd)
        assert face.express_interest(make_interest("/ndn/CA/NEW")).content == b"long"
        assert face.express_interest(make_interest("/ndn/other")).content == b"short"

    def test_unmatched_interest_times_out(self):
        fwd = Forwarder()
        fwd.register_prefix(Name.from_text("/ndn"), lambda i: None)
        face = LoopbackFace(fwd)
        with pytest.raises(TimeoutError_):
            face.express_interest(make_interest("/elsewhere"), timeout_s=0.05)

    def test_duplicate_prefix_rejected(self):
        fwd = Forwarder()
        fwd.register_prefix(Name.from_text("/a"), lambda i: None)
        with pytest.raises(DuplicatePrefixError):
            fwd.register_prefix(Name.from_text("/a"), lambda i: None)

    def test_unregister(self):
        fwd = Forwarder()
        reg = fwd.register_prefix(Name.from_text("/a"), lambda i: make_data("/a/x"))
        fwd.unregister(reg)
        assert fwd.dispatch(make_interest("/a/x").encode()) is None

    def test_mismatched_data_suppressed(self):
        fwd = Forwarder()
        fwd.register_prefix(Name.from_text("/a"), lambda i: make_data("/b/wrong"))
        assert fwd.dispatch(make_interest("/a/x").encode()) is None

    def test_handler_exception_contained(self):
        fwd = Forwarder()

        def boom(interest):
            raise RuntimeError("producer bug")

        fwd.register_prefix(Name.from_text("/a"), boom)
        assert fwd.dispatch(make_interest("/a/x").encode()) is None


class TestDigestMatching:
    def test_full_name_fetch(self):
        data = make_data("/a/b")
        digest_name = data.full_name()
        assert interest_matches_data(digest_name, data)
        other = make_data("/a/b", content=b"different")
        assert not interest_matches_data(digest_name, other)


class TestContentCache:
    def test_capacity_zero_never_hits(self):
        cache = ContentCache(0)
        data = make_data("/a/b", freshness_ms=10_000)
        cache.insert(data, data.encode())
        assert cache.lookup(Name.from_text("/a/b")) is None

    def test_hit_serves_when_producer_offline(self):
        fwd = Forwarder(cache_capacity=4)
        calls = []

        def handler(interest):
            calls.append(1)
            return make_data("/a/b", freshness_ms=10_000)

        reg = fwd.register_prefix(Name.from_text("/a"), handler)
        face = LoopbackFace(fwd)
        face.express_interest(make_interest("/a/b"))
        fwd.unregister(reg)  # producer goes offline
        data = face.express_interest(make_interest("/a/b"))
        assert data.name == Name.from_text("/a/b")
        assert len(calls) == 1

    def test_zero_freshness_not_cached(self):
        cache = ContentCache(4)
        data = make_data("/a/b", freshness_ms=0)
        cache.insert(data, data.encode())
        assert cache.lookup(Name.from_text("/a/b")) is None

    def test_plain_data_evicted_before_key_data(self):
        # KEY entries carry double retention weight: under pressure the
        # same-aged plain entry is the one that goes.
        cache = ContentCache(2)
        key_data = make_data("/ndn/alice/KEY/1/ca/2", freshness_ms=60_000)
        plain_a = make_data("/bulk/a", freshness_ms=60_000)
        plain_b = make_data("/bulk/b", freshness_ms=60_000)
        cache.insert(key_data, key_data.encode())
        cache.insert(plain_a, plain_a.encode())
        cache.insert(plain_b, plain_b.encode())  # forces eviction
        assert cache.lookup(Name.from_text("/ndn/alice/KEY/1/ca/2")) is not None
        assert cache.lookup(Name.from_text("/bulk/a")) is None
        # One more round of pressure spends the second chance.
        plain_c = make_data("/bulk/c", freshness_ms=60_000)
        cache.insert(plain_c, plain_c.encode())
        assert cache.lookup(Name.from_text("/ndn/alice/KEY/1/ca/2")) is not None

    def test_expiry(self):
        cache = ContentCache(4)
        data = make_data("/a/b", freshness_ms=1)
        cache.insert(data, data.encode())
        time.sleep(0.01)
        assert cache.lookup(Name.from_text("/a/b")) is None


class TestRepo:
    def _cert(self, root_pair, identity="/ndn/alice"):
        pair = crypto.generate_keypair(Name.from_text(identity))
        return pair, issue_certificate(pair.public_bits, pair.identity, now_ms(),
                                       now_ms() + 3600_000, root_pair, "root")

    def test_exact_and_prefix_fetch(self, root_pair, tmp_path):
        repo = Repo(tmp_path / "repo")
        pair, cert = self._cert(root_pair)
        repo.insert(cert)
        assert repo.lookup(cert.name) is cert
        assert repo.latest(pair.key_name).name == cert.name

    def test_latest_version_wins(self, root_pair):
        repo = Repo()
        pair = crypto.generate_keypair(Name.from_text("/ndn/alice"))
        old = issue_certificate(pair.public_bits, pair.identity, now_ms(),
                                now_ms() + 3600_000, root_pair, "root")
        new = issue_certificate(pair.public_bits, pair.identity, now_ms(),
                                now_ms() + 3600_000, root_pair, "root")
        repo.insert(old)
        repo.insert(new)
        assert repo.latest(pair.key_name).version == new.version

    def test_persistence_round_trip(self, root_pair, tmp_path):
        repo_dir = tmp_path / "repo"
        _, cert = self._cert(root_pair)
        Repo(repo_dir).insert(cert)
        reloaded = Repo(repo_dir)
        assert reloaded.lookup(cert.name) == cert

    def test_remove(self, root_pair, tmp_path):
        repo_dir = tmp_path / "repo"
        repo = Repo(repo_dir)
        _, cert = self._cert(root_pair)
        repo.insert(cert)
        assert repo.remove(cert.name)
        assert repo.lookup(cert.name) is None
        assert Repo(repo_dir).lookup(cert.name) is None

    def test_served_through_forwarder(self, root_pair):
        repo = Repo()
        pair, cert = self._cert(root_pair)
        repo.insert(cert)
        fwd = Forwarder()
        fwd.register_prefix(Name.from_text("/ndn"), repo.handler)
        face = LoopbackFace(fwd)
        got = face.express_interest(make_interest(cert.name.to_text()))
        assert got.name == cert.name
        by_prefix = face.express_interest(make_interest(pair.key_name.to_text()))
        assert by_prefix.name == cert.name


class TestUdp:
    def test_basic_exchange(self):
        fwd = Forwarder()
        fwd.register_prefix(Name.from_text("/svc"),
                            lambda i: make_data(i.name.to_text(), b"pong"))
        server = UdpServer(fwd).start()
        try:
            face = UdpFace("127.0.0.1", server.port)
            data = face.express_interest(make_interest("/svc/ping"), timeout_s=2)
            assert data.content == b"pong"
            face.close()
        finally:
            server.stop()

    def test_timeout_when_no_producer(self):
        fwd = Forwarder()
        server = UdpServer(fwd).start()
        try:
            face = UdpFace("127.0.0.1", server.port)
            with pytest.raises(TimeoutError_):
                face.express_interest(make_interest("/nope"), timeout_s=0.3)
            face.close()
        finally:
            server.stop()

    def test_loss_injection_with_retries(self):
        fwd = Forwarder()
        fwd.register_prefix(Name.from_text("/svc"),
                            lambda i: make_data(i.name.to_text(), b"pong"))
        server = UdpServer(fwd).start()
        try:
            face = UdpFace("127.0.0.1", server.port, loss_rate=0.05,
                           rng=random.Random(7))
            successes = 0
            for n in range(40):
                for attempt in range(3):
                    try:
                        face.express_interest(make_interest(f"/svc/{n}"), timeout_s=0.25)
                        successes += 1
                        break
                    except TimeoutError_:
                        continue
            assert successes == 40
            face.close()
        finally:
            server.stop()
