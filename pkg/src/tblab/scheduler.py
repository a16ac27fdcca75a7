"""Threshold-bipolar chunk fetching for a newly joined peer.

The strategy has two poles around a playable-video threshold C_sch:

* low mode  (playable <= C_sch): fetch the lowest missing-but-available
  chunk, building the gap-free run at the buffer head as fast as possible;
* high mode (playable  > C_sch): fetch the highest missing-but-available
  chunk, spreading fresh content, and additionally pull the tracker's
  newest chunk when it lies beyond the host's own bitmap.

Both poles pick from the availability set: chunk ids the host lacks but at
least one connected neighbor advertises.  Because low mode fills the head
run contiguously, the minimum of the availability set is automatically at
or beyond the playable frontier; that equivalence is asserted by tests
rather than assumed.

The scheduler is a pure function of (host state, neighbor snapshot); it
returns chunk ids only.  Picking which neighbor serves the chunk, retry,
and parallelism are the caller's concern (the simulator issues several
invocations per time slot to model parallel request threads).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Optional, Sequence

from .buffer import BufferMessage, dec, write_bm
from .errors import ChunkRangeError, ConfigError


@dataclass(frozen=True, slots=True)
class TBParams:
    """Protocol design parameters, normalized by the playback rate.

    beta     turnover threshold factor; the threshold in chunks is
             round(beta * r) for playback rate r
    tau_off  offset setup time in seconds (fetch start to drain start)
    w_star   saturated buffer width in seconds of content
    theta    initial offset headroom in chunks above the oldest buffered
             chunk; None selects the w_star/3 rule at join time
    """

    beta: float = 90.0
    tau_off: float = 70.0
    w_star: float = 210.0
    theta: Optional[int] = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigError("beta", "must be > 0")
        if self.tau_off <= 0:
            raise ConfigError("tau_off", "must be > 0")
        if self.w_star <= self.beta:
            raise ConfigError("w_star", "threshold must fit inside the buffer (w_star > beta)")
        if self.theta is not None and self.theta < 0:
            raise ConfigError("theta", "must be >= 0")


class Action(str, Enum):
    FETCH_LOW = "fetch-low"
    FETCH_HIGH = "fetch-high"
    FETCH_TRACKER = "fetch-tracker"
    IDLE = "idle"


@dataclass(frozen=True, slots=True)
class Decision:
    action: Action
    chunk: Optional[int] = None


IDLE_DECISION = Decision(Action.IDLE)


@dataclass(frozen=True, slots=True)
class CandidateSet:
    """Chunks missing from the host and advertised by >= 1 neighbor.

    Stored as a bitmask rebased at the host offset, so min/max lookups are
    integer bit tricks rather than set scans.
    """

    base: int
    mask: int

    @property
    def empty(self) -> bool:
        return self.mask == 0

    @property
    def min_id(self) -> int:
        if self.mask == 0:
            raise ValueError("empty candidate set has no minimum")
        return self.base + ((self.mask & -self.mask).bit_length() - 1)

    @property
    def max_id(self) -> int:
        if self.mask == 0:
            raise ValueError("empty candidate set has no maximum")
        return self.base + self.mask.bit_length() - 1

    def __contains__(self, chunk_id: int) -> bool:
        i = chunk_id - self.base
        return i >= 0 and bool(self.mask >> i & 1)

    def __iter__(self) -> Iterator[int]:
        m, i = self.mask, 0
        while m:
            if m & 1:
                yield self.base + i
            m >>= 1
            i += 1

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(self)


@dataclass(frozen=True, slots=True)
class HostState:
    """A joining peer: its buffer plus protocol bookkeeping.

    Counters: ``downloaded`` counts distinct stored chunks, ``duplicates``
    completions of already-held chunks, ``wasted`` completions that arrived
    below the offset, ``missed`` the ids that were absent when the drain
    dropped them.
    """

    bm: BufferMessage
    tb: TBParams
    threshold_chunks: int
    up_time: float = 0.0
    init_offset: int = 0
    draining: bool = False
    downloaded: int = 0
    duplicates: int = 0
    wasted: int = 0
    missed: tuple[int, ...] = ()

    @classmethod
    def join(
        cls,
        offset: int,
        tb: TBParams,
        r: float,
        up_time: float = 0.0,
        max_width: int | None = None,
    ) -> "HostState":
        threshold = max(1, round(tb.beta * r))
        bm = BufferMessage(offset, 0, max_width) if max_width else BufferMessage(offset)
        return cls(
            bm=bm,
            tb=tb,
            threshold_chunks=threshold,
            up_time=up_time,
            init_offset=offset,
        )

    @property
    def in_low_mode(self) -> bool:
        return self.bm.playable <= self.threshold_chunks


def candidate_set(host: HostState, neighbors: Sequence[BufferMessage]) -> CandidateSet:
    """Availability set: ids >= host offset that the host lacks and some
    neighbor advertises."""
    f = host.bm.offset
    avail = 0
    for nb in neighbors:
        if nb.offset >= f:
            avail |= nb.bits << (nb.offset - f)
        else:
            avail |= nb.bits >> (f - nb.offset)
    return CandidateSet(base=f, mask=avail & ~host.bm.bits)


def next_request(
    host: HostState,
    candidates: CandidateSet,
    service_head: Optional[int] = None,
) -> list[Decision]:
    """One scheduling step.  Returns the decisions this state calls for.

    Low mode yields at most one FETCH_LOW.  High mode may yield FETCH_HIGH
    and, when the tracker head lies beyond the host bitmap, FETCH_TRACKER
    as well (parallel request threads).  The tracker entry is dropped if it
    would duplicate the high fetch.  [IDLE] when no rule yields an id.
    """
    if host.in_low_mode:
        if candidates.empty:
            return [IDLE_DECISION]
        return [Decision(Action.FETCH_LOW, candidates.min_id)]

    out: list[Decision] = []
    if not candidates.empty:
        out.append(Decision(Action.FETCH_HIGH, candidates.max_id))
    if (
        service_head is not None
        and service_head > host.bm.offset + host.bm.length
        and not (out and out[0].chunk == service_head)
    ):
        out.append(Decision(Action.FETCH_TRACKER, service_head))
    return out or [IDLE_DECISION]


def on_fetch_complete(host: HostState, chunk_id: int) -> HostState:
    """Account for a completed fetch.

    Late arrivals (below the offset) are dropped and counted as wasted;
    already-held chunks leave the buffer unchanged and bump the duplicate
    counter.
    """
    try:
        new_bm = write_bm(host.bm, chunk_id)
    except ChunkRangeError:
        return replace(host, wasted=host.wasted + 1)
    if new_bm.bits == host.bm.bits:
        return replace(host, duplicates=host.duplicates + 1)
    return replace(host, bm=new_bm, downloaded=host.downloaded + 1)


def drain_tick(host: HostState, now: float, r: float) -> HostState:
    """Advance the playback drain to time ``now``.

    The offset target is init_offset + round(r * (now - up_time - tau_off))
    once the setup time has elapsed; each advance drops the head chunk and
    records a playback miss if that chunk was never fetched.
    """
    elapsed = now - host.up_time - host.tb.tau_off
    if elapsed < 0:
        return host
    target = host.init_offset + round(r * elapsed)
    if target <= host.bm.offset:
        return host if host.draining else replace(host, draining=True)
    bm = host.bm
    missed = list(host.missed)
    while bm.offset < target:
        if not bm.bits & 1:
            missed.append(bm.offset)
        bm = dec(bm)
    return replace(host, bm=bm, draining=True, missed=tuple(missed))
