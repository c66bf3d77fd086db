"""Cryptographic suite: ECDSA P-256, ephemeral ECDH, HKDF-SHA256, AES-GCM-128.

Signatures travel as raw fixed-width 64-byte (r, s).  Session keys are
derived as HKDF(salt, g^xy) truncated to 128 bits; the shared secret and
ephemeral scalars are dropped as soon as derivation completes and nothing
here offers a way to persist them.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import secrets
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthenticationFailedError, CryptoError, InvalidPointError, IvReplayError
from .names import Name

CURVE = ec.SECP256R1()
SIGNATURE_SIZE = 64
AES_KEY_SIZE = 16
SALT_SIZE = 32
IV_SIZE = 12
ECDH_PUB_SIZE = 65  # uncompressed X9.62 point
KEY_MARKER = b"KEY"


def key_id_for(public_key_bits: bytes) -> str:
    """Hex of the first 8 bytes of SHA-256 over the public key encoding."""
    return hashlib.sha256(public_key_bits).digest()[:8].hex()


def public_key_bits(public_key: ec.EllipticCurvePublicKey) -> bytes:
    """SubjectPublicKeyInfo DER, the at-rest and in-cert key encoding."""
    return public_key.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def load_public_key_bits(bits: bytes) -> ec.EllipticCurvePublicKey:
    try:
        key = serialization.load_der_public_key(bits)
    except Exception as exc:
        raise CryptoError(f"bad public key encoding: {exc}") from exc
    if not isinstance(key, ec.EllipticCurvePublicKey):
        raise CryptoError("not an EC public key")
    return key


@dataclass
class KeyPair:
    private_key: ec.EllipticCurvePrivateKey = field(repr=False)
    key_name: Name

    @property
    def public_key(self) -> ec.EllipticCurvePublicKey:
        return self.private_key.public_key()

    @property
    def public_bits(self) -> bytes:
        return public_key_bits(self.public_key)

    @property
    def identity(self) -> Name:
        return self.key_name[:-2]


def generate_keypair(identity: Name) -> KeyPair:
    if len(identity) == 0:
        raise ValueError("identity must be non-empty")
    private_key = ec.generate_private_key(CURVE)
    bits = public_key_bits(private_key.public_key())
    key_name = identity.append(KEY_MARKER, key_id_for(bits))
    return KeyPair(private_key, key_name)


def keypair_from_private(private_key: ec.EllipticCurvePrivateKey, identity: Name) -> KeyPair:
    bits = public_key_bits(private_key.public_key())
    return KeyPair(private_key, identity.append(KEY_MARKER, key_id_for(bits)))


def sign(message: bytes, key: KeyPair) -> bytes:
    der = key.private_key.sign(message, ec.ECDSA(hashes.SHA256()))
    r, s = decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(message: bytes, signature: bytes, public_key) -> bool:
    """True iff `signature` (raw 64-byte r||s) verifies; malformed input is False."""
    if isinstance(public_key, bytes):
        try:
            public_key = load_public_key_bits(public_key)
        except CryptoError:
            return False
    if len(signature) != SIGNATURE_SIZE:
        return False
    r = int.from_bytes(signature[:32], "big")
    s = int.from_bytes(signature[32:], "big")
    try:
        der = encode_dss_signature(r, s)
        public_key.verify(der, message, ec.ECDSA(hashes.SHA256()))
        return True
    except (InvalidSignature, ValueError):
        return False


# --- key files at rest ---

def save_private_key(path, private_key: ec.EllipticCurvePrivateKey) -> None:
    der = private_key.private_bytes(
        serialization.Encoding.DER,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    flags = os.O_WRONLY | os.O_CREAT | os.O_TRUNC
    fd = os.open(str(path), flags, 0o600)
    try:
        os.write(fd, der)
    finally:
        os.close(fd)


def load_private_key(path) -> ec.EllipticCurvePrivateKey:
    with open(path, "rb") as f:
        der = f.read()
    key = serialization.load_der_private_key(der, password=None)
    if not isinstance(key, ec.EllipticCurvePrivateKey):
        raise CryptoError(f"{path}: not an EC private key")
    return key


# --- ECDH + HKDF ---

def hkdf_sha256(salt: bytes, ikm: bytes, info: bytes, length: int) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


def generate_ephemeral() -> tuple[ec.EllipticCurvePrivateKey, bytes]:
    """Fresh scalar plus its uncompressed public point for the wire."""
    private = ec.generate_private_key(CURVE)
    point = private.public_key().public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
    )
    return private, point


def decode_ecdh_point(point: bytes) -> ec.EllipticCurvePublicKey:
    if len(point) != ECDH_PUB_SIZE or point[0] != 0x04:
        raise InvalidPointError("ECDH value is not an uncompressed point")
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, point)
    except ValueError as exc:
        raise InvalidPointError(f"ECDH point rejected: {exc}") from exc


_SESSION_INFO = b"session-key"


def derive_session_key(own_ephemeral: ec.EllipticCurvePrivateKey, peer_point: bytes,
                       salt: bytes) -> bytes:
    """Both peers of one exchange derive the same 16-byte AES key."""
    peer = decode_ecdh_point(peer_point)
    shared = own_ephemeral.exchange(ec.ECDH(), peer)
    try:
        return hkdf_sha256(salt, shared, _SESSION_INFO, AES_KEY_SIZE)
    finally:
        del shared


class SessionCrypto:
    """One endpoint's handle on an established session key.

    Seals with a per-endpoint IV of 4 random prefix bytes plus a 64-bit
    monotonic counter; on open, the counter must strictly advance before
    decryption is attempted, and advances only on authentication success.
    `erase()` zeroes the key, after which the session is unusable.
    """

    def __init__(self, aes_key: bytes):
        if len(aes_key) != AES_KEY_SIZE:
            raise CryptoError("session key must be 16 bytes")
        self._key = bytearray(aes_key)
        self._send_prefix = secrets.token_bytes(4)
        self._send_counter = 0
        self._recv_last: int | None = None
        self._erased = False

    def _aead(self) -> AESGCM:
        if self._erased:
            raise CryptoError("session key erased")
        return AESGCM(bytes(self._key))

    def seal(self, plaintext: bytes, associated_data: bytes) -> tuple[bytes, bytes]:
        """Returns (iv, ciphertext-with-tag)."""
        self._send_counter += 1
        iv = self._send_prefix + struct.pack(">Q", self._send_counter)
        return iv, self._aead().encrypt(iv, plaintext, associated_data)

    def open(self, iv: bytes, ciphertext: bytes, associated_data: bytes) -> bytes:
        if len(iv) != IV_SIZE:
            raise AuthenticationFailedError("bad IV length")
        counter = struct.unpack(">Q", iv[4:])[0]
        if self._recv_last is not None and counter <= self._recv_last:
            raise IvReplayError(f"IV counter {counter} did not advance")
        try:
            plaintext = self._aead().decrypt(iv, ciphertext, associated_data)
        except InvalidTag:
            raise AuthenticationFailedError("AEAD authentication failed") from None
        self._recv_last = counter
        return plaintext

    def erase(self) -> None:
        for i in range(len(self._key)):
            self._key[i] = 0
        self._erased = True

    @property
    def erased(self) -> bool:
        return self._erased


def constant_time_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


def random_bytes(n: int) -> bytes:
    return secrets.token_bytes(n)
