"""Chunk bitmaps, buffer messages, and derived buffer metrics.

In a mesh-pull live streaming system the video is cut into chunks with
consecutive integer ids.  A peer advertises its buffer as a *buffer
message*: the id of the chunk at the buffer head (the ``offset``, which is
also the playback point) plus a presence bitmap where bit ``i`` stands for
chunk ``offset + i``.

The bitmap is stored as an arbitrary-precision integer with bit 0 at the
buffer head, so all per-message operations are word-wide C loops instead
of per-bit Python loops.  An integer has no leading zeros, which makes the
"bitmap ends at its last stored chunk" normalization automatic.

Derived quantities used throughout the package:

* ``width``     position of the last stored chunk relative to the head
* ``fill``      total number of stored chunks
* ``playable``  length of the gap-free run starting at the head
* ``scope``     absolute id of the last stored chunk (``offset + width``)

The head chunk itself may be absent (playable 0); a peer can legitimately
advertise an offset it has not fetched yet.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import ChunkRangeError, BufferCapacityError, TraceError

#: Hard cap on bitmap positions.  Real deployments buffer a few thousand
#: chunks; the cap only guards against unbounded growth on bad input.
DEFAULT_MAX_WIDTH = 4096


def _trailing_ones(bits: int) -> int:
    # ((bits + 1) & ~bits) isolates the lowest zero bit.
    return ((bits + 1) & ~bits).bit_length() - 1


@dataclass(frozen=True, slots=True)
class BufferMessage:
    """A peer's advertised buffer: head offset plus presence bitmap.

    Value-semantic and immutable; ``write_bm`` and ``dec`` return new
    messages.  Chunk ids are non-negative integers (any realistic stream
    length fits in 64 bits, Python ints never wrap).
    """

    offset: int
    bits: int = 0
    max_width: int = DEFAULT_MAX_WIDTH

    def __post_init__(self):
        if self.offset < 0:
            raise ChunkRangeError(f"offset must be >= 0, got {self.offset}")
        if self.bits < 0:
            raise ValueError("bitmap integer must be non-negative")
        if self.bits.bit_length() > self.max_width:
            raise BufferCapacityError(
                f"bitmap spans {self.bits.bit_length()} positions, cap is {self.max_width}"
            )

    @classmethod
    def from_bits(cls, offset: int, flags, max_width: int = DEFAULT_MAX_WIDTH) -> "BufferMessage":
        """Build from an iterable of 0/1 flags, head first."""
        bits = 0
        for i, flag in enumerate(flags):
            if flag:
                bits |= 1 << i
        return cls(offset, bits, max_width)

    @property
    def length(self) -> int:
        """Number of bitmap positions up to and including the last 1."""
        return self.bits.bit_length()

    @property
    def width(self) -> int:
        """Index of the last stored chunk; 0 for an empty buffer."""
        return max(0, self.bits.bit_length() - 1)

    @property
    def scope(self) -> int:
        """Absolute id of the last stored chunk (equals offset when empty)."""
        return self.offset + self.width

    @property
    def fill(self) -> int:
        return self.bits.bit_count()

    @property
    def playable(self) -> int:
        return _trailing_ones(self.bits)

    def has(self, chunk_id: int) -> bool:
        i = chunk_id - self.offset
        return i >= 0 and bool(self.bits >> i & 1)

    def to_bit_list(self) -> list[int]:
        return [self.bits >> i & 1 for i in range(self.length)]


@dataclass(frozen=True, slots=True)
class BufferMetrics:
    """Buffer progress snapshot.  ``downloaded`` is the cumulative fetched
    count maintained by whoever owns the buffer (a bitmap alone cannot know
    it); ``metrics`` reports it as passed through."""

    width: int
    fill: int
    playable: int
    downloaded: int = 0


@dataclass(frozen=True, slots=True)
class LagSet:
    """Distances of one peer's progress curves behind the service curve."""

    offset_lag: int
    scope_lag: int
    download_lag: int
    playable_lag: int


def metrics(bm: BufferMessage, downloaded: int = 0) -> BufferMetrics:
    """Derive width / fill / playable from the bitmap."""
    return BufferMetrics(
        width=bm.width, fill=bm.fill, playable=bm.playable, downloaded=downloaded
    )


def write_bm(bm: BufferMessage, chunk_id: int) -> BufferMessage:
    """Mark ``chunk_id`` as stored, expanding the bitmap if needed.

    Idempotent.  Raises ChunkRangeError for ids below the head (the chunk
    was already played or dropped) and BufferCapacityError past the cap.
    """
    i = chunk_id - bm.offset
    if i < 0:
        raise ChunkRangeError(
            f"chunk {chunk_id} is below buffer offset {bm.offset}"
        )
    if i >= bm.max_width:
        raise BufferCapacityError(
            f"chunk {chunk_id} would need bitmap position {i}, cap is {bm.max_width}"
        )
    return BufferMessage(bm.offset, bm.bits | (1 << i), bm.max_width)


def dec(bm: BufferMessage) -> BufferMessage:
    """Drop the head chunk: offset advances by one, bitmap shifts down.

    Playable is recomputed from the new bitmap rather than decremented, so
    it can never go negative when the head position was already empty.
    """
    return BufferMessage(bm.offset + 1, bm.bits >> 1, bm.max_width)


def lags(bm: BufferMessage, service_head: int, downloaded_head: int) -> LagSet:
    """The four progress lags of a peer relative to the service curve.

    ``downloaded_head`` is the peer's download curve value, normally
    ``offset + fill``.  Raises TraceError when the service head is below
    the peer offset, which no consistent trace can produce.
    """
    if service_head < bm.offset:
        raise TraceError(
            f"service head {service_head} below peer offset {bm.offset}"
        )
    return LagSet(
        offset_lag=service_head - bm.offset,
        scope_lag=service_head - bm.scope,
        download_lag=service_head - downloaded_head,
        playable_lag=service_head - (bm.offset + bm.playable),
    )


# --- run-length bitmap codec -------------------------------------------
#
# Trace files carry bitmaps as e.g. "1x200,0x3,1x7" (head-first runs).
# The empty bitmap encodes as "".  A valid encoding never ends in a zero
# run: the last stored chunk defines the bitmap end.


def encode_bits(bits: int) -> str:
    if bits == 0:
        return ""
    raw = bin(bits)[2:][::-1]  # LSB (head) first
    return ",".join(
        f"{ch}x{len(list(grp))}" for ch, grp in itertools.groupby(raw)
    )


def decode_bits(text: str) -> int:
    if text == "":
        return 0
    bits = 0
    pos = 0
    last_flag = "0"
    for token in text.split(","):
        try:
            flag, count_s = token.split("x")
            count = int(count_s)
        except ValueError:
            raise TraceError(f"malformed run {token!r} in bitmap encoding")
        if flag not in ("0", "1") or count <= 0:
            raise TraceError(f"malformed run {token!r} in bitmap encoding")
        if flag == "1":
            bits |= ((1 << count) - 1) << pos
        pos += count
        last_flag = flag
    if last_flag == "0":
        raise TraceError("bitmap encoding ends in a zero run")
    return bits
