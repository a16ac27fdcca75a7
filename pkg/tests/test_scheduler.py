import random

import pytest

from tblab import (
    Action,
    BufferMessage,
    ConfigError,
    HostState,
    TBParams,
    candidate_set,
    drain_tick,
    next_request,
    on_fetch_complete,
)


def window(lo, hi):
    """Neighbor holding every chunk in [lo, hi]."""
    return BufferMessage(lo, (1 << (hi - lo + 1)) - 1, max_width=hi - lo + 2)


def host_with(offset, flags, threshold, r=1.0, tb=None):
    host = HostState.join(offset, tb or TBParams(), r, max_width=8192)
    bm = BufferMessage.from_bits(offset, flags, max_width=8192)
    return HostState(
        bm=bm,
        tb=host.tb,
        threshold_chunks=threshold,
        up_time=host.up_time,
        init_offset=offset,
    )


class TestTBParams:
    def test_defaults_valid(self):
        p = TBParams()
        assert p.beta == 90.0 and p.w_star == 210.0

    @pytest.mark.parametrize(
        "kw", [dict(beta=0), dict(tau_off=0), dict(w_star=50.0), dict(theta=-1)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TBParams(**kw)


class TestCandidateSet:
    def test_simple_overlap(self):
        host = host_with(100, [1] * 5, threshold=10)
        cands = candidate_set(host, [window(100, 110)])
        assert cands.ids == frozenset(range(105, 111))

    def test_no_neighbors(self):
        host = host_with(100, [1] * 5, threshold=10)
        assert candidate_set(host, []).empty

    def test_disjoint_neighbors_brute_force(self):
        """Union of contributions minus host holdings, against a plain
        set-arithmetic oracle on random small bitmaps."""
        rng = random.Random(7)
        for _ in range(200):
            f = rng.randrange(0, 50)
            host_flags = [rng.random() < 0.5 for _ in range(rng.randrange(0, 40))]
            host = host_with(f, host_flags, threshold=rng.randrange(1, 30))
            neighbors = []
            held_by_neighbors = set()
            for _ in range(rng.randrange(0, 4)):
                lo = rng.randrange(0, 80)
                flags = [rng.random() < 0.6 for _ in range(rng.randrange(1, 40))]
                neighbors.append(BufferMessage.from_bits(lo, flags, max_width=256))
                held_by_neighbors |= {lo + i for i, b in enumerate(flags) if b}
            host_held = {f + i for i, b in enumerate(host_flags) if b}
            expected = {c for c in held_by_neighbors if c >= f and c not in host_held}
            assert candidate_set(host, neighbors).ids == frozenset(expected)


class TestNextRequest:
    def test_low_mode_minimum(self):
        host = host_with(100, [1] * 50, threshold=900)
        cands = candidate_set(host, [window(150, 151), window(300, 300)])
        assert cands.ids == frozenset({150, 151, 300})
        decisions = next_request(host, cands)
        assert decisions == [type(decisions[0])(Action.FETCH_LOW, 150)]

    def test_high_mode_dual_decision(self):
        # playable 950 out of a 1600-position bitmap, threshold 900
        flags = [1] * 950 + [0] * 649 + [1]
        host = host_with(0, flags, threshold=900)
        assert host.bm.playable == 950 and host.bm.length == 1600
        cands = candidate_set(host, [window(960, 960), window(1500, 1500)])
        decisions = next_request(host, cands, service_head=2000)
        assert [(d.action, d.chunk) for d in decisions] == [
            (Action.FETCH_HIGH, 1500),
            (Action.FETCH_TRACKER, 2000),
        ]

    def test_idle_when_nothing_applies(self):
        flags = [1] * 950 + [0] * 649 + [1]
        host = host_with(0, flags, threshold=900)
        empty = candidate_set(host, [])
        decisions = next_request(host, empty, service_head=1600)  # s <= f + |BM|
        assert decisions == [type(decisions[0])(Action.IDLE, None)]

    def test_low_mode_never_fetches_tracker(self):
        host = host_with(0, [1] * 10, threshold=900)
        decisions = next_request(host, candidate_set(host, []), service_head=5000)
        assert decisions[0].action is Action.IDLE

    def test_tracker_duplicate_suppressed(self):
        # highest candidate IS the tracker head: one fetch, not two
        flags = [1] * 950 + [0] * 649 + [1]
        host = host_with(0, flags, threshold=900)
        cands = candidate_set(host, [window(1990, 2000)])
        decisions = next_request(host, cands, service_head=2000)
        assert [(d.action, d.chunk) for d in decisions] == [(Action.FETCH_HIGH, 2000)]

    def test_randomized_properties(self):
        """Mode dichotomy, min/max selection vs brute force, and no
        decision naming a held or below-offset chunk."""
        rng = random.Random(11)
        for _ in range(500):
            f = rng.randrange(0, 100)
            flags = [rng.random() < 0.7 for _ in range(rng.randrange(0, 120))]
            host = host_with(f, flags, threshold=rng.randrange(1, 80))
            neighbors = [
                window(rng.randrange(0, 150), rng.randrange(150, 260))
                for _ in range(rng.randrange(0, 3))
            ]
            cands = candidate_set(host, neighbors)
            head = rng.choice([None, rng.randrange(0, 400)])
            decisions = next_request(host, cands, service_head=head)
            ids = sorted(cands.ids)
            low = host.bm.playable <= host.threshold_chunks
            kinds = {d.action for d in decisions}
            if low:
                assert kinds <= {Action.FETCH_LOW, Action.IDLE}
            else:
                assert kinds <= {Action.FETCH_HIGH, Action.FETCH_TRACKER, Action.IDLE}
            for d in decisions:
                if d.chunk is None:
                    continue
                assert d.chunk >= host.bm.offset
                assert not host.bm.has(d.chunk)
                if d.action is Action.FETCH_LOW:
                    assert d.chunk == ids[0]
                    assert d.chunk >= host.bm.offset + host.bm.playable
                elif d.action is Action.FETCH_HIGH:
                    assert d.chunk == ids[-1]


class TestOnFetchComplete:
    def test_fills_first_hole(self):
        host = host_with(10, [1, 1, 0, 1], threshold=5)
        out = on_fetch_complete(host, 12)
        assert out.bm.playable >= host.bm.playable + 1
        assert out.downloaded == host.downloaded + 1

    def test_far_above_scope(self):
        host = host_with(10, [1, 1], threshold=5)
        out = on_fetch_complete(host, 40)
        assert out.bm.width == 30
        assert out.bm.playable == host.bm.playable

    def test_duplicate_counted(self):
        host = host_with(10, [1, 1], threshold=5)
        out = on_fetch_complete(host, 11)
        assert out.bm == host.bm
        assert out.duplicates == 1

    def test_late_arrival_wasted(self):
        host = host_with(10, [1, 1], threshold=5)
        out = on_fetch_complete(host, 9)
        assert out.bm == host.bm
        assert out.wasted == 1


class TestDrainTick:
    def test_before_setup_time_unchanged(self):
        host = HostState.join(100, TBParams(tau_off=70.0), r=10.0)
        out = drain_tick(host, now=69.9, r=10.0)
        assert out.bm.offset == 100 and not out.draining

    def test_linear_drain(self):
        host = HostState.join(100, TBParams(tau_off=70.0), r=10.0)
        host = on_fetch_complete(host, 100)
        out = drain_tick(host, now=80.0, r=10.0)
        assert out.bm.offset == 100 + 100
        assert out.draining

    def test_head_hole_counts_miss(self):
        host = HostState.join(100, TBParams(tau_off=70.0), r=1.0)
        for c in (100, 102):
            host = on_fetch_complete(host, c)
        out = drain_tick(host, now=73.0, r=1.0)
        assert out.bm.offset == 103
        assert out.missed == (101,)

    def test_draining_flag_at_boundary(self):
        host = HostState.join(100, TBParams(tau_off=70.0), r=1.0)
        assert drain_tick(host, now=70.0, r=1.0).draining


class TestIdealSequences:
    def test_low_mode_fetches_consecutive_ids(self):
        """With everything available and no draining, repeated low-mode
        fetching walks strictly consecutive ids and keeps the buffer a
        gap-free prefix."""
        tb = TBParams(beta=30, tau_off=1e9)
        host = HostState.join(1000, tb, r=1.0)
        supply = [window(900, 1400)]
        fetched = []
        while host.in_low_mode:
            decisions = next_request(host, candidate_set(host, supply))
            assert decisions[0].action is Action.FETCH_LOW
            fetched.append(decisions[0].chunk)
            host = on_fetch_complete(host, decisions[0].chunk)
            assert host.bm.fill == host.bm.playable  # no holes ever
        assert fetched == list(range(1000, 1000 + len(fetched)))
        assert host.bm.playable == host.threshold_chunks + 1

    def test_playable_pinned_at_threshold_while_draining(self):
        """After the first crossing, with ideal availability, playable
        stays within [threshold - drain step, threshold + 1] under
        interleaved fetch/drain ticks until convergence."""
        r = 1.0
        tb = TBParams(beta=10, tau_off=5.0, w_star=80.0)
        host = HostState.join(20, tb, r)
        # supply window wider than the join lag, so nothing expires unfetched
        supply = lambda s: [window(max(0, s - 80), s)]
        s0 = 80
        crossed = False
        for step in range(1, 200):
            now = float(step)
            s = s0 + step
            for _ in range(3):  # r_p = 3 r
                cands = candidate_set(host, supply(s))
                decisions = next_request(host, cands, service_head=s)
                if decisions[0].action is Action.IDLE:
                    break
                host = on_fetch_complete(host, decisions[0].chunk)
            host = drain_tick(host, now, r)
            if host.bm.playable > host.threshold_chunks:
                crossed = True
            converged = host.bm.offset + host.bm.fill >= s
            if crossed and not converged and host.draining:
                assert (
                    host.threshold_chunks - 1
                    <= host.bm.playable
                    <= host.threshold_chunks + 1
                )
        assert crossed
