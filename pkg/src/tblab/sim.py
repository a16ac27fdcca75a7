"""Slotted swarm simulator for a single joining host.

The world is advanced in fixed time slots.  Each slot, in order:

1. the tracker head (the service curve) advances by r * slot with
   fractional accumulation;
2. stable peers are synthesized: every one of them holds exactly the
   chunks [head - w_star*r, head - scope_lag].  They are an environment,
   not simulated agents; all converged peers share the same offset curve,
   and sliding that window is also what makes old chunks expire;
3. the host spends its per-slot request budget on scheduler decisions
   against fresh neighbor snapshots.  Granted fetches complete in the same
   slot (an optional fixed RTT delays completion); a neighbor refuses a
   request with probability reject_prob, which consumes the budget unit;
4. the playback drain advances the host offset;
5. at every report interval a progress sample is appended to each trace.

Runs are deterministic given the config and seed.  The tracker buffers a
fixed two minutes of content, so its window is round(120 * r) chunks at
every slot.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Optional

from .buffer import DEFAULT_MAX_WIDTH, BufferMessage
from .errors import ConfigError, JoinTooEarlyError
from .model import ModelParams, classify, convergence_time, scheduling_turnover
from .scheduler import (
    Action,
    HostState,
    TBParams,
    candidate_set,
    drain_tick,
    next_request,
    on_fetch_complete,
)
from .traceio import (
    ProgressSample,
    Trace,
    atomic_write_text,
    config_hash,
    write_manifest,
    write_trace,
)
from .version import __version__ as _version

#: The tracker buffers this many seconds of content (its window in chunks
#: is round(TRACKER_WINDOW_SECONDS * r)).
TRACKER_WINDOW_SECONDS = 120.0


def tracker_window_chunks(r: float) -> int:
    return round(TRACKER_WINDOW_SECONDS * r)


@dataclass
class TrackerState:
    """Service frontier plus the tracker's own buffered window."""

    head: int
    width: int

    @property
    def offset(self) -> int:
        return self.head - self.width


@dataclass
class SwarmConfig:
    """One simulation scenario.  See module docstring for semantics."""

    r: float = 10.0
    gamma_p: float = 3.0
    tb: TBParams = field(default_factory=TBParams)
    n_stable: int = 4
    scope_lag: int = 0
    reject_prob: float = 0.0
    report_interval: float = 5.0
    slot: float = 0.1
    duration: float = 300.0
    seed: int = 0
    rtt: float = 0.0
    preroll: float = 0.0
    initial_head: Optional[int] = None
    log_decisions: bool = False

    def validate(self) -> None:
        if self.r <= 0:
            raise ConfigError("r", "must be > 0")
        if self.gamma_p <= 0:
            raise ConfigError("gamma_p", "must be > 0")
        if not isinstance(self.n_stable, int) or self.n_stable < 0:
            raise ConfigError("n_stable", "must be an integer >= 0")
        if self.scope_lag < 0 or self.scope_lag >= self.w_chunks:
            raise ConfigError("scope_lag", "must be in [0, w_star*r)")
        if not 0 <= self.reject_prob < 1:
            raise ConfigError("reject_prob", "must be in [0, 1)")
        if self.slot <= 0:
            raise ConfigError("slot", "must be > 0")
        if self.report_interval < self.slot:
            raise ConfigError("report_interval", "must be >= slot")
        ratio = self.report_interval / self.slot
        if abs(ratio - round(ratio)) > 1e-6:
            raise ConfigError("report_interval", "must be an integer multiple of slot")
        if self.duration <= 0:
            raise ConfigError("duration", "must be > 0")
        if self.rtt < 0:
            raise ConfigError("rtt", "must be >= 0")
        if self.preroll < 0:
            raise ConfigError("preroll", "must be >= 0")

    @property
    def r_p(self) -> float:
        return self.gamma_p * self.r

    @property
    def w_chunks(self) -> int:
        return round(self.tb.w_star * self.r)

    @property
    def theta_chunks(self) -> int:
        if self.tb.theta is not None:
            return self.tb.theta
        return round(self.tb.w_star * self.r / 3)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dc_fields(self) if f.name != "tb"}
        d["tb"] = {
            "beta": self.tb.beta,
            "tau_off": self.tb.tau_off,
            "w_star": self.tb.w_star,
            "theta": self.tb.theta,
        }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SwarmConfig":
        known = {f.name for f in dc_fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        kwargs = dict(data)
        tb_data = kwargs.pop("tb", {})
        if not isinstance(tb_data, dict):
            raise ConfigError("tb", "must be an object")
        tb_known = {"beta", "tau_off", "w_star", "theta"}
        for key in tb_data:
            if key not in tb_known:
                raise ConfigError(f"tb.{key}", "unknown field")
        cfg = cls(tb=TBParams(**tb_data), **kwargs)
        cfg.validate()
        return cfg


def host_budget(r_p: float, slot: float, carry: float) -> tuple[int, float]:
    """Requests the host may issue this slot, with fractional carry.

    floor accumulation: the long-run request rate is exactly r_p.
    """
    if r_p < 0:
        raise ConfigError("r_p", "must be >= 0")
    acc = carry + r_p * slot
    n = int(acc + 1e-9)
    return n, max(0.0, acc - n)


def choose_initial_offset(tracker: TrackerState, tb: TBParams, r: float) -> int:
    """Joining rule: take the full offset lag w_star behind the service
    head, then step theta (default w_star/3) chunks back up.  With the
    default rule the drained offset meets the stable peers' offset curve
    exactly when the drain starts."""
    w_chunks = round(tb.w_star * r)
    if tracker.head < w_chunks:
        raise JoinTooEarlyError(
            f"stream holds {tracker.head} chunks, need {w_chunks} for a full offset lag"
        )
    headroom = tb.theta if tb.theta is not None else round(tb.w_star * r / 3)
    return tracker.head - w_chunks + headroom


def model_params_for(cfg: SwarmConfig) -> ModelParams:
    """Analytical parameters matching a simulation config.

    Chunk quantities use the simulator's quantized values (rounded window
    and threshold) so predictions and traces share one chunk grid.  The
    model origin is the oldest buffered chunk at join time; subtract
    ``model_origin`` from absolute trace ids before comparing.
    """
    return ModelParams(
        r=cfg.r,
        r_p=cfg.r_p,
        c_sch=max(1, round(cfg.tb.beta * cfg.r)),
        tau_off=cfg.tb.tau_off,
        theta=cfg.theta_chunks,
        w_star=cfg.w_chunks,
        scope_lag=0.0,
    )


@dataclass
class SimResult:
    cfg: SwarmConfig
    traces: list[Trace]
    host: HostState
    model_origin: int
    decisions: list[dict]
    rejected: int

    @property
    def host_trace(self) -> Trace:
        return self.traces[0]


class Simulation:
    """Stepwise simulator state.  ``run`` drives it to completion; tests
    may call ``step`` and inspect the tracker and host directly."""

    def __init__(self, cfg: SwarmConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        w = cfg.w_chunks
        head0 = cfg.initial_head if cfg.initial_head is not None else w
        head0 += round(cfg.r * cfg.preroll)
        self.tracker = TrackerState(head=head0, width=tracker_window_chunks(cfg.r))
        self._head0 = head0
        theta = choose_initial_offset(self.tracker, cfg.tb, cfg.r)
        max_width = max(DEFAULT_MAX_WIDTH, 2 * (w + tracker_window_chunks(cfg.r)))
        self.host = HostState.join(theta, cfg.tb, cfg.r, up_time=0.0, max_width=max_width)
        self.model_origin = head0 - w
        self.slot_index = 0
        self._carry = 0.0
        self._pending: list[tuple[float, int]] = []  # (complete_time, chunk) when rtt > 0
        self._in_flight: set[int] = set()
        self.decisions: list[dict] = []
        self.rejected = 0
        self.host_samples: list[ProgressSample] = []
        self.stable_samples: list[ProgressSample] = []
        self._slots_per_report = round(cfg.report_interval / cfg.slot)
        self._record(0.0)

    @property
    def t(self) -> float:
        return self.slot_index * self.cfg.slot

    def _stable_bm(self) -> BufferMessage:
        cfg = self.cfg
        lo = self.tracker.head - cfg.w_chunks
        length = cfg.w_chunks - cfg.scope_lag + 1
        return BufferMessage(lo, (1 << length) - 1, max_width=length + 1)

    def _neighbors(self) -> list[BufferMessage]:
        if self.cfg.n_stable == 0:
            return []
        bm = self._stable_bm()
        return [bm] * self.cfg.n_stable

    def _log(self, t: float, decision) -> None:
        if self.cfg.log_decisions:
            self.decisions.append(
                {"t": t, "decision": decision.action.value, "chunk": decision.chunk}
            )

    def _resolve(self, decision, t: float) -> None:
        chunk = decision.chunk
        if decision.action is Action.FETCH_TRACKER:
            granted = self.tracker.offset <= chunk <= self.tracker.head
        else:
            # grant-time causality: a neighbor must advertise the chunk
            granted = any(nb.has(chunk) for nb in self._neighbors_cache)
            if granted and self.cfg.n_stable > 0:
                self.rng.randrange(self.cfg.n_stable)  # which neighbor serves
                if self.rng.random() < self.cfg.reject_prob:
                    self.rejected += 1
                    granted = False
        if not granted:
            return
        if self.cfg.rtt > 0:
            self._pending.append((t + self.cfg.rtt, chunk))
            self._in_flight.add(chunk)
        else:
            self.host = on_fetch_complete(self.host, chunk)

    def _complete_pending(self, t: float) -> None:
        if not self._pending:
            return
        due = [c for (when, c) in self._pending if when <= t + 1e-12]
        self._pending = [(when, c) for (when, c) in self._pending if when > t + 1e-12]
        for chunk in due:
            self._in_flight.discard(chunk)
            self.host = on_fetch_complete(self.host, chunk)

    def step(self) -> None:
        cfg = self.cfg
        t_end = (self.slot_index + 1) * cfg.slot

        # 1. service frontier; the window rule holds every slot
        self.tracker.head = self._head0 + int(cfg.r * t_end + 1e-9)
        self.tracker.width = tracker_window_chunks(cfg.r)

        self._complete_pending(t_end)

        # 2. fresh neighbor snapshot
        self._neighbors_cache = self._neighbors()

        # 3. request budget
        budget, self._carry = host_budget(cfg.r_p, cfg.slot, self._carry)
        while budget > 0:
            cands = candidate_set(self.host, self._neighbors_cache)
            if self._in_flight:
                mask = cands.mask
                for chunk in self._in_flight:
                    i = chunk - cands.base
                    if i >= 0:
                        mask &= ~(1 << i)
                cands = type(cands)(cands.base, mask)
            decisions = next_request(self.host, cands, service_head=self.tracker.head)
            if decisions[0].action is Action.IDLE:
                break
            issued = 0
            for decision in decisions:
                if budget == 0:
                    break
                if decision.chunk in self._in_flight:
                    continue  # already requested, completion pending
                budget -= 1
                issued += 1
                self._log(t_end, decision)
                self._resolve(decision, t_end)
            if issued == 0:
                break

        # 4. playback drain
        self.host = drain_tick(self.host, t_end, cfg.r)

        self.slot_index += 1

        # 5. report
        if self.slot_index % self._slots_per_report == 0:
            t_report = (self.slot_index // self._slots_per_report) * cfg.report_interval
            self._record(t_report)

    def _record(self, t: float) -> None:
        bm = self.host.bm
        self.host_samples.append(
            ProgressSample(
                t=t,
                offset=bm.offset,
                bits=bm.bits,
                fill=bm.fill,
                playable=bm.playable,
                width=bm.width,
                downloaded=self.host.downloaded,
                service_head=self.tracker.head,
            )
        )
        st = self._stable_bm()
        self.stable_samples.append(
            ProgressSample(
                t=t,
                offset=st.offset,
                bits=st.bits,
                fill=st.fill,
                playable=st.playable,
                width=st.width,
                downloaded=st.fill,
                service_head=self.tracker.head,
            )
        )

    def run(self) -> SimResult:
        n_slots = round(self.cfg.duration / self.cfg.slot)
        while self.slot_index < n_slots:
            self.step()
        traces = [Trace(peer="host", samples=tuple(self.host_samples))]
        stable = tuple(self.stable_samples)
        for i in range(self.cfg.n_stable):
            traces.append(Trace(peer=f"stable-{i}", samples=stable))
        return SimResult(
            cfg=self.cfg,
            traces=traces,
            host=self.host,
            model_origin=self.model_origin,
            decisions=self.decisions,
            rejected=self.rejected,
        )


def run(cfg: SwarmConfig) -> SimResult:
    return Simulation(cfg).run()


def run_to_files(cfg: SwarmConfig, out_dir: Path) -> dict:
    """Run and write one JSONL trace per peer plus a run manifest.
    Returns the manifest dict."""
    out_dir = Path(out_dir)
    result = run(cfg)
    paths = {}
    for trace in result.traces:
        path = out_dir / f"trace_{trace.peer}.jsonl"
        write_trace(trace, path)
        paths[trace.peer] = path.name
    p = model_params_for(cfg)
    try:
        tau_sch = scheduling_turnover(p)
    except Exception:
        tau_sch = None
    try:
        tau_cvg = convergence_time(p)
        group = classify(p).value
    except Exception:
        tau_cvg = None
        group = None
    cfg_dict = cfg.to_dict()
    manifest = {
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "seed": cfg.seed,
        "tool_version": _version,
        "derived": {
            "tau_sch": tau_sch,
            "tau_cvg": tau_cvg,
            "c_sch": max(1, round(cfg.tb.beta * cfg.r)),
            "group": group,
            "w_chunks": cfg.w_chunks,
            "theta_chunks": cfg.theta_chunks,
            "model_origin": result.model_origin,
        },
        "counters": {
            "downloaded": result.host.downloaded,
            "duplicates": result.host.duplicates,
            "wasted": result.host.wasted,
            "rejected": result.rejected,
            "playback_misses": len(result.host.missed),
        },
        "traces": paths,
    }
    if cfg.log_decisions:
        lines = [json.dumps(d, separators=(",", ":")) for d in result.decisions]
        atomic_write_text(out_dir / "decisions.jsonl", "\n".join(lines) + "\n")
        manifest["decisions"] = "decisions.jsonl"
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest
