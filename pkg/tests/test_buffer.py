import pytest
from hypothesis import given, strategies as st

from tblab import (
    BufferCapacityError,
    BufferMessage,
    ChunkRangeError,
    TraceError,
    dec,
    decode_bits,
    encode_bits,
    lags,
    metrics,
    write_bm,
)


def bm(offset, flags, **kw):
    return BufferMessage.from_bits(offset, flags, **kw)


class TestMetrics:
    def test_mixed_bitmap(self):
        m = metrics(bm(0, [1, 1, 1, 0, 1]))
        assert (m.playable, m.fill, m.width) == (3, 4, 4)

    def test_empty(self):
        m = metrics(BufferMessage(10))
        assert (m.playable, m.fill, m.width) == (0, 0, 0)

    def test_hole_at_head(self):
        m = metrics(bm(0, [0, 1, 1]))
        assert (m.playable, m.fill, m.width) == (0, 2, 2)

    def test_downloaded_passthrough(self):
        assert metrics(bm(0, [1]), downloaded=7).downloaded == 7


class TestWriteBm:
    def test_expansion(self):
        out = write_bm(bm(100, [1]), 105)
        assert out.to_bit_list() == [1, 0, 0, 0, 0, 1]
        assert out.offset == 100

    def test_idempotent(self):
        once = write_bm(bm(100, [1]), 105)
        assert write_bm(once, 105) == once

    def test_below_head_rejected(self):
        with pytest.raises(ChunkRangeError):
            write_bm(bm(100, [1]), 99)

    def test_capacity_cap(self):
        small = BufferMessage(0, 0, max_width=8)
        with pytest.raises(BufferCapacityError):
            write_bm(small, 8)
        assert write_bm(small, 7).width == 7

    def test_never_decreases_counters(self):
        base = bm(0, [1, 0, 1, 1, 0, 1])
        for chunk in range(12):
            out = write_bm(base, chunk)
            assert out.fill >= base.fill
            assert out.playable >= base.playable
            assert out.width >= base.width


class TestDec:
    def test_head_drop(self):
        out = dec(bm(100, [1, 1, 0, 1]))
        assert out.offset == 101
        assert out.to_bit_list() == [1, 0, 1]
        assert out.playable == 1

    def test_hole_exposed(self):
        out = dec(bm(100, [1, 0, 1]))
        assert out.offset == 101
        assert out.to_bit_list() == [0, 1]
        assert out.playable == 0

    def test_drain_past_content(self):
        out = dec(BufferMessage(100))
        assert out.offset == 101
        assert out.fill == 0


class TestLags:
    def test_worked_example(self):
        # fill 200 with playable 190: a hole after the first 190 chunks
        flags = [1] * 190 + [0] + [1] * 10
        msg = bm(790, flags)
        assert (msg.fill, msg.playable) == (200, 190)
        out = lags(msg, service_head=1000, downloaded_head=790 + 200)
        assert out.offset_lag == 210
        assert out.download_lag == 10
        assert out.playable_lag == 20

    def test_scope_equals_service_head(self):
        msg = bm(10, [1, 1, 1])
        assert lags(msg, msg.scope, msg.offset + msg.fill).scope_lag == 0

    def test_empty_at_service_head(self):
        out = lags(BufferMessage(50), 50, 50)
        assert (out.offset_lag, out.scope_lag, out.download_lag, out.playable_lag) == (0, 0, 0, 0)

    def test_inconsistent_trace(self):
        with pytest.raises(TraceError):
            lags(bm(100, [1]), 99, 100)

    def test_ordering(self):
        msg = bm(0, [1, 1, 0, 1, 1, 0, 1])
        out = lags(msg, 20, msg.offset + msg.fill)
        assert out.offset_lag >= out.playable_lag >= out.download_lag


class TestRle:
    def test_known_encoding(self):
        msg = bm(0, [1, 1, 1, 0, 1])
        assert encode_bits(msg.bits) == "1x3,0x1,1x1"
        assert decode_bits("1x3,0x1,1x1") == msg.bits

    def test_empty(self):
        assert encode_bits(0) == ""
        assert decode_bits("") == 0

    def test_long_runs(self):
        text = "1x200,0x3,1x7"
        assert encode_bits(decode_bits(text)) == text

    @pytest.mark.parametrize("bad", ["1x0", "2x5", "0x3", "1x3,0x2", "1x", "x3", "1y3"])
    def test_malformed(self, bad):
        with pytest.raises(TraceError):
            decode_bits(bad)

    @given(st.lists(st.booleans(), max_size=300))
    def test_round_trip(self, flags):
        # normalize: the encoding cannot represent trailing zeros
        while flags and not flags[-1]:
            flags.pop()
        bits = BufferMessage.from_bits(0, flags).bits
        assert decode_bits(encode_bits(bits)) == bits


ops = st.lists(
    st.one_of(
        st.tuples(st.just("write"), st.integers(min_value=0, max_value=400)),
        st.tuples(st.just("dec"), st.just(0)),
    ),
    max_size=60,
)


class TestProperties:
    @given(ops)
    def test_recomputed_metrics_match_incremental(self, sequence):
        """Counters maintained alongside the ops always equal a fresh
        recompute from the bitmap."""
        msg = BufferMessage(0)
        held: set[int] = set()
        for op, arg in sequence:
            if op == "write":
                chunk = msg.offset + arg  # arg is relative, always in range
                msg = write_bm(msg, chunk)
                held.add(chunk)
            else:
                held.discard(msg.offset)
                msg = dec(msg)
            held = {c for c in held if c >= msg.offset}
            assert msg.fill == len(held)
            expected_playable = 0
            while msg.offset + expected_playable in held:
                expected_playable += 1
            assert msg.playable == expected_playable
            assert msg.width == (max(held) - msg.offset if held else 0)
            # structural invariants
            assert msg.playable <= msg.fill <= msg.width + 1
            assert (msg.playable >= 1) == bool(msg.bits & 1)

    @given(ops)
    def test_dec_advances_offset_and_never_adds(self, sequence):
        msg = BufferMessage(0)
        for op, arg in sequence:
            if op == "write":
                msg = write_bm(msg, msg.offset + arg)
            else:
                out = dec(msg)
                assert out.offset == msg.offset + 1
                assert out.fill <= msg.fill
                msg = out
