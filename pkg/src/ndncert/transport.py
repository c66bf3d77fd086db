"""Interest/Data exchange substrate.

A Forwarder dispatches Interests to the longest registered prefix, fronted
by an optional content cache.  Faces drive it: the loopback face calls the
forwarder synchronously (FIFO per face by construction); UDP faces carry
one packet per datagram with an 8800-byte ceiling and no fragmentation.

This is a test substrate for the protocol, not a general forwarder: no
routing, no multi-hop strategy, no congestion control.
"""

from __future__ import annotations

import logging
import os
import random
import socket
import threading
import time
from dataclasses import dataclass

from .certs import Certificate, version_sort_key
from .errors import DecodeError, DuplicatePrefixError, TimeoutError_
from .names import Name
from .packets import (
    DataPacket,
    InterestPacket,
    MAX_PACKET_SIZE,
    compute_implicit_digest,
    decode_packet,
)

logger = logging.getLogger(__name__)


def interest_matches_data(interest_name: Name, data: DataPacket,
                          data_wire: bytes | None = None) -> bool:
    """PIT rule: the Interest name must be a prefix of (or equal to,
    including implicit digest) the Data name."""
    base = interest_name.strip_digest()
    if not base.is_prefix_of(data.name):
        return False
    if len(interest_name) and interest_name[-1].is_digest:
        if base != data.name:
            return False
        wire = data_wire if data_wire is not None else data.encode()
        return compute_implicit_digest(wire) == interest_name[-1].value
    return True


@dataclass
class CacheEntry:
    wire: bytes
    name: Name
    weight: int
    expires_ms: int


class ContentCache:
    """LRU of capacity N with second-chance retention.

    Certificate Data (a KEY component in the name) enters with weight 2 and
    survives one eviction pass, realizing the cache priority for
    certificates; everything else has weight 1.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._entries: dict[str, CacheEntry] = {}
        self._lock = threading.Lock()

    def insert(self, data: DataPacket, wire: bytes) -> None:
        if self.capacity <= 0 or data.freshness_ms <= 0:
            return
        now = int(time.time() * 1000)
        weight = 2 if any(c.value == b"KEY" for c in data.name) else 1
        with self._lock:
            key = data.name.to_text()
            self._entries.pop(key, None)
            self._entries[key] = CacheEntry(wire, data.name, weight,
                                            now + data.freshness_ms)
            while len(self._entries) > self.capacity:
                victim_key = next(iter(self._entries))
                victim = self._entries.pop(victim_key)
                if victim.weight > 1:
                    victim.weight -= 1
                    self._entries[victim_key] = victim  # second chance: back to tail
                else:
                    logger.debug("cache evict %s", victim_key)

    def lookup(self, interest_name: Name) -> bytes | None:
        """Exact-name hits only (digest-checked when the name carries one).

        Prefix resolution stays with producers: a cache has no way to know
        whether a longer-named Data is the right answer for a shorter
        Interest once versions move.
        """
        now = int(time.time() * 1000)
        base = interest_name.strip_digest()
        with self._lock:
            entry = self._entries.get(base.to_text())
            if entry is None:
                return None
            if entry.expires_ms <= now:
                del self._entries[base.to_text()]
                return None
            if len(interest_name) and interest_name[-1].is_digest:
                if compute_implicit_digest(entry.wire) != interest_name[-1].value:
                    return None
            self._entries.pop(base.to_text())
            self._entries[base.to_text()] = entry  # LRU touch
            return entry.wire

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class Registration:
    prefix: Name
    handler: "InterestHandler"


InterestHandler = "Callable[[InterestPacket], DataPacket | bytes | None]"


class Forwarder:
    """Longest-prefix dispatch to registered producers plus a content cache."""

    def __init__(self, cache_capacity: int = 0):
        self._registrations: list[Registration] = []
        self._lock = threading.Lock()
        self.cache = ContentCache(cache_capacity)

    def register_prefix(self, prefix: Name, handler) -> Registration:
        if len(prefix) == 0:
            raise ValueError("prefix must be non-empty")
        with self._lock:
            if any(r.prefix == prefix for r in self._registrations):
                raise DuplicatePrefixError(str(prefix))
            registration = Registration(prefix, handler)
            self._registrations.append(registration)
            return registration

    def unregister(self, registration: Registration) -> None:
        with self._lock:
            self._registrations = [r for r in self._registrations if r is not registration]

    def _route(self, name: Name) -> Registration | None:
        with self._lock:
            best = None
            for reg in self._registrations:
                if reg.prefix.is_prefix_of(name):
                    if best is None or len(reg.prefix) > len(best.prefix):
                        best = reg
        return best

    def dispatch(self, interest_wire: bytes) -> bytes | None:
        if len(interest_wire) > MAX_PACKET_SIZE:
            return None
        try:
            interest = decode_packet(interest_wire)
        except DecodeError:
            return None
        if not isinstance(interest, InterestPacket):
            return None

        cached = self.cache.lookup(interest.name)
        if cached is not None:
            return cached

        registration = self._route(interest.name.strip_digest())
        if registration is None:
            return None
        try:
            produced = registration.handler(interest)
        except Exception:
            logger.exception("handler for %s failed", registration.prefix)
            return None
        if produced is None:
            return None
        if isinstance(produced, DataPacket):
            wire = produced.encode()
            data = produced
        else:
            wire = produced
            data = decode_packet(wire)
        if len(wire) > MAX_PACKET_SIZE:
            logger.error("produced Data exceeds %d bytes, dropped", MAX_PACKET_SIZE)
            return None
        if not interest_matches_data(interest.name, data, wire):
            return None
        self.cache.insert(data, wire)
        return wire


class Face:
    """Synchronous one-in-one-out Interest/Data exchange."""

    def _request(self, wire: bytes, timeout_s: float) -> bytes | None:
        raise NotImplementedError

    def express_interest(self, interest: InterestPacket | bytes,
                         timeout_s: float = 2.0) -> DataPacket:
        wire = interest.encode() if isinstance(interest, InterestPacket) else interest
        name = decode_packet(wire).name
        reply = self._request(wire, timeout_s)
        if reply is None:
            raise TimeoutError_(f"no data for {name}")
        data = decode_packet(reply)
        if not isinstance(data, DataPacket) or not interest_matches_data(name, data, reply):
            raise TimeoutError_(f"no matching data for {name}")
        return data

    def close(self) -> None:
        pass


class LoopbackFace(Face):
    def __init__(self, forwarder: Forwarder):
        self.forwarder = forwarder
        self._lock = threading.Lock()  # FIFO per face

    def _request(self, wire: bytes, timeout_s: float) -> bytes | None:
        with self._lock:
            return self.forwarder.dispatch(wire)


class UdpFace(Face):
    """Client side: one datagram out, one in, per exchange.

    `loss_rate` drops packets on send and receive for loss-injection tests;
    pass a seeded `rng` for determinism.
    """

    def __init__(self, host: str, port: int, loss_rate: float = 0.0,
                 rng: random.Random | None = None):
        self.addr = (host, port)
        self.loss_rate = loss_rate
        self._rng = rng or random.Random()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(("127.0.0.1" if host in ("127.0.0.1", "localhost") else "0.0.0.0", 0))

    def _lost(self) -> bool:
        return self.loss_rate > 0 and self._rng.random() < self.loss_rate

    def _request(self, wire: bytes, timeout_s: float) -> bytes | None:
        if len(wire) > MAX_PACKET_SIZE:
            raise ValueError("packet exceeds the 8800-byte datagram ceiling")
        deadline = time.monotonic() + timeout_s
        if not self._lost():
            self._sock.sendto(wire, self.addr)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self._sock.settimeout(remaining)
            try:
                reply, _ = self._sock.recvfrom(MAX_PACKET_SIZE)
            except socket.timeout:
                return None
            if self._lost():
                continue
            return reply

    def close(self) -> None:
        self._sock.close()


class UdpServer:
    """Receive loop feeding a forwarder; replies go back to the sender."""

    def __init__(self, forwarder: Forwarder, host: str = "127.0.0.1", port: int = 0):
        self.forwarder = forwarder
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.1)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="udp-server", daemon=True)

    def start(self) -> "UdpServer":
        self._thread.start()
        return self

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                wire, sender = self._sock.recvfrom(MAX_PACKET_SIZE)
            except socket.timeout:
                continue
            except OSError:
                break
            reply = self.forwarder.dispatch(wire)
            if reply is not None:
                try:
                    self._sock.sendto(reply, sender)
                except OSError:
                    logger.exception("udp reply failed")

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self._sock.close()


class Repo:
    """Certificate store serving fetches by exact name or key-name prefix."""

    def __init__(self, directory=None):
        self._certs: dict[Name, Certificate] = {}
        self._lock = threading.Lock()
        self.directory = str(directory) if directory is not None else None
        if self.directory:
            os.makedirs(self.directory, exist_ok=True)
            self._load()

    def _load(self) -> None:
        from .certs import load_cert

        for entry in sorted(os.listdir(self.directory)):
            if not entry.endswith(".cert"):
                continue
            try:
                cert = load_cert(os.path.join(self.directory, entry))
            except Exception:
                logger.warning("skipping unreadable cert file %s", entry)
                continue
            self._certs[cert.name] = cert

    def _file_for(self, name: Name) -> str:
        stem = name.to_text().strip("/").replace("/", "_")
        suffix = compute_implicit_digest(name.to_text().encode())[:4].hex()
        return os.path.join(self.directory, f"{stem}.{suffix}.cert")

    def insert(self, cert: Certificate) -> None:
        with self._lock:
            self._certs[cert.name] = cert
            if self.directory:
                from .certs import save_cert

                save_cert(self._file_for(cert.name), cert)

    def remove(self, name: Name) -> bool:
        with self._lock:
            found = self._certs.pop(name, None)
            if found and self.directory:
                try:
                    os.unlink(self._file_for(name))
                except FileNotFoundError:
                    pass
            return found is not None

    def lookup(self, name: Name) -> Certificate | None:
        with self._lock:
            return self._certs.get(name)

    def candidates(self, prefix: Name) -> list[Certificate]:
        with self._lock:
            return [c for c in self._certs.values() if prefix.is_prefix_of(c.name)]

    def latest(self, prefix: Name) -> Certificate | None:
        found = self.candidates(prefix)
        if not found:
            return None
        return max(found, key=lambda c: version_sort_key(c.version))

    def handler(self, interest: InterestPacket) -> DataPacket | None:
        name = interest.name.strip_digest()
        exact = self.lookup(name)
        if exact is not None:
            return exact.data
        newest = self.latest(name)
        return newest.data if newest is not None else None

    def fetch_fn(self, name: Name):
        """Local resolver for validate_chain: all candidates under a name."""
        hits = self.candidates(name)
        return [c.data for c in hits] or None

    def names(self) -> list[Name]:
        with self._lock:
            return list(self._certs)
