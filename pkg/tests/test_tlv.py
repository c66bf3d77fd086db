from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from ndncert import tlv
from ndncert.errors import DecodeError, TruncatedError


class TestVarnum:
    @pytest.mark.parametrize(
        "n,encoded",
        [
            (0, b"\x00"),
            (252, b"\xfc"),
            (253, b"\xfd\x00\xfd"),
            (0xFFFF, b"\xfd\xff\xff"),
            (0x10000, b"\xfe\x00\x01\x00\x00"),
            (0xFFFFFFFF, b"\xfe\xff\xff\xff\xff"),
        ],
    )
    def test_boundaries(self, n, encoded):
        assert tlv.encode_varnum(n) == encoded

    @given(st.integers(min_value=0, max_value=0xFFFFFFFF))
    def test_round_trip(self, n):
        reader = tlv.TlvReader(tlv.encode_varnum(n) + b"\x00")
        assert reader._read_varnum() == n

    def test_non_canonical_rejected(self):
        # 3-byte form for a value that fits one byte
        reader = tlv.TlvReader(b"\xfd\x00\x10")
        with pytest.raises(DecodeError):
            reader._read_varnum()

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            tlv.encode_varnum(0x100000000)
        with pytest.raises(ValueError):
            tlv.encode_varnum(-1)


class TestReader:
    def test_read_tlv(self):
        buf = tlv.encode_tlv(8, b"abc") + tlv.encode_tlv(21, b"")
        reader = tlv.TlvReader(buf)
        assert reader.read_tlv() == (8, b"abc")
        assert reader.read_tlv() == (21, b"")
        assert reader.at_end

    def test_truncated_value(self):
        buf = tlv.encode_tlv(8, b"abcdef")[:-2]
        with pytest.raises(TruncatedError):
            tlv.TlvReader(buf).read_tlv()

    def test_truncated_mid_length(self):
        with pytest.raises(TruncatedError):
            tlv.TlvReader(b"\x08\xfd\x01").read_tlv()

    @given(st.binary(max_size=300), st.integers(min_value=1, max_value=1000))
    def test_fuzz_no_crash(self, payload, typ):
        buf = tlv.encode_tlv(typ % 0xFFFF + 1, payload)
        reader = tlv.TlvReader(buf)
        assert reader.read_tlv() == (typ % 0xFFFF + 1, payload)


class TestNonnegInteger:
    @pytest.mark.parametrize(
        "n,size", [(0, 1), (255, 1), (256, 2), (0xFFFF, 2), (0x10000, 4), (2**32, 8)]
    )
    def test_shortest_form(self, n, size):
        assert len(tlv.encode_nonneg(n)) == size
        assert tlv.decode_nonneg(tlv.encode_nonneg(n)) == n

    def test_non_canonical_rejected(self):
        with pytest.raises(DecodeError):
            tlv.decode_nonneg(b"\x00\x05")
        with pytest.raises(DecodeError):
            tlv.decode_nonneg(b"\x01\x02\x03")


class TestCriticality:
    def test_rule(self):
        assert tlv.is_critical(7)
        assert tlv.is_critical(31)
        assert tlv.is_critical(129)  # odd
        assert not tlv.is_critical(128)
        assert not tlv.is_critical(36)

    def test_app_range_is_skippable(self):
        for name in dir(tlv):
            value = getattr(tlv, name)
            if name.isupper() and not name.startswith("_") and isinstance(value, int) \
                    and 128 <= value < 1024:
                assert value % 2 == 0, f"{name} must be even (non-critical)"
