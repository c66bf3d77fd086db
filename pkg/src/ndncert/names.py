"""Hierarchical names: the universal identifier for packets, keys, and certs.

Canonical text form is '/'-separated with percent-escaping of bytes outside
the unreserved set.  An empty component renders as "..." and a component of
only periods gains three extra periods, so text -> binary -> text is
idempotent on canonical text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

from . import tlv
from .errors import DecodeError

_UNRESERVED = frozenset(
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~:"
)
_DIGEST_PREFIX = "sha256digest="


@dataclass(frozen=True)
class NameComponent:
    value: bytes = b""
    typ: int = tlv.GENERIC_COMPONENT

    def __post_init__(self):
        if self.typ not in (tlv.GENERIC_COMPONENT, tlv.IMPLICIT_DIGEST_COMPONENT):
            raise ValueError(f"unsupported component type {self.typ}")
        if self.typ == tlv.IMPLICIT_DIGEST_COMPONENT and len(self.value) != 32:
            raise ValueError("digest component must be 32 bytes")
        if not isinstance(self.value, bytes):
            object.__setattr__(self, "value", bytes(self.value))

    @property
    def is_digest(self) -> bool:
        return self.typ == tlv.IMPLICIT_DIGEST_COMPONENT

    @classmethod
    def digest(cls, value: bytes) -> "NameComponent":
        return cls(value, tlv.IMPLICIT_DIGEST_COMPONENT)

    def to_text(self) -> str:
        if self.is_digest:
            return _DIGEST_PREFIX + self.value.hex()
        if not self.value:
            return "..."
        if all(b == 0x2E for b in self.value):
            return self.value.decode("ascii") + "..."
        out = []
        for b in self.value:
            if b in _UNRESERVED:
                out.append(chr(b))
            else:
                out.append(f"%{b:02X}")
        return "".join(out)

    @classmethod
    def from_text(cls, text: str) -> "NameComponent":
        if text.startswith(_DIGEST_PREFIX):
            raw = bytes.fromhex(text[len(_DIGEST_PREFIX):])
            return cls.digest(raw)
        if text and set(text) == {"."}:
            if len(text) < 3:
                raise ValueError(f"bad dot component {text!r}")
            return cls(text[3:].encode("ascii"))
        out = bytearray()
        i = 0
        while i < len(text):
            ch = text[i]
            if ch == "%":
                if i + 3 > len(text):
                    raise ValueError(f"bad escape in {text!r}")
                out.append(int(text[i + 1 : i + 3], 16))
                i += 3
            else:
                out.extend(ch.encode("utf-8"))
                i += 1
        return cls(bytes(out))


class Name:
    """Immutable ordered list of components."""

    __slots__ = ("components",)

    def __init__(self, components: Iterable[NameComponent | bytes | str] = ()):
        comps = []
        for c in components:
            if isinstance(c, NameComponent):
                comps.append(c)
            elif isinstance(c, bytes):
                comps.append(NameComponent(c))
            elif isinstance(c, str):
                comps.append(NameComponent(c.encode("utf-8")))
            else:
                raise TypeError(f"bad component {c!r}")
        object.__setattr__(self, "components", tuple(comps))

    def __setattr__(self, *a):  # pragma: no cover
        raise AttributeError("Name is immutable")

    @classmethod
    def from_text(cls, text: str) -> "Name":
        text = text.strip()
        if text.startswith("/"):
            text = text[1:]
        if not text:
            return cls()
        return cls([NameComponent.from_text(seg) for seg in text.split("/") if seg != ""])

    def to_text(self) -> str:
        if not self.components:
            return "/"
        return "/" + "/".join(c.to_text() for c in self.components)

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Name({self.to_text()!r})"

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self) -> Iterator[NameComponent]:
        return iter(self.components)

    def __getitem__(self, idx):
        got = self.components[idx]
        if isinstance(idx, slice):
            return Name(got)
        return got

    def __eq__(self, other) -> bool:
        return isinstance(other, Name) and self.components == other.components

    def __hash__(self) -> int:
        return hash(self.components)

    def append(self, *comps: NameComponent | bytes | str) -> "Name":
        return Name(list(self.components) + list(comps))

    def __add__(self, other: "Name") -> "Name":
        return Name(self.components + other.components)

    def is_prefix_of(self, other: "Name") -> bool:
        if len(self) > len(other):
            return False
        return other.components[: len(self)] == self.components

    def strip_digest(self) -> "Name":
        """Name without a trailing implicit-digest component, if any."""
        if self.components and self.components[-1].is_digest:
            return Name(self.components[:-1])
        return self


def encode_name(name: Name) -> bytes:
    inner = b"".join(tlv.encode_tlv(c.typ, c.value) for c in name.components)
    return tlv.encode_tlv(tlv.NAME, inner)


def decode_name_value(value: bytes) -> Name:
    """Decode the inside of a Name TLV."""
    reader = tlv.TlvReader(value)
    comps = []
    while not reader.at_end:
        typ, comp_value = reader.read_tlv()
        if typ == tlv.GENERIC_COMPONENT:
            comps.append(NameComponent(comp_value))
        elif typ == tlv.IMPLICIT_DIGEST_COMPONENT:
            if len(comp_value) != 32:
                raise DecodeError("digest component must be 32 bytes")
            comps.append(NameComponent.digest(comp_value))
        else:
            raise DecodeError(f"unsupported name component type {typ}")
    return Name(comps)


def decode_name(buf: bytes) -> Name:
    reader = tlv.TlvReader(buf)
    name = decode_name_value(reader.read_expected(tlv.NAME))
    reader.expect_end()
    return name
