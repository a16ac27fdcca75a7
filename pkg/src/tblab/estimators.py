"""Recover protocol parameters from buffer-message traces.

Given a time-stamped series of buffer reports for one peer, these
estimators reverse out the quantities that shaped the trace:

* offset setup time, from the first offset change (arithmetic-average and
  linear-interpolation variants);
* the turnover threshold factor beta, four independent ways: the buffer
  width just before its first jump, the playable video just after its
  growth rate first breaks, the mean of the flat playable segment, and the
  playable video just before its jump at convergence;
* the normalized download rate, end-to-end and as a mean of per-interval
  instant rates;
* saturation statistics (mean/std of the buffer curves and progress lags
  over the stable tail);
* the rate group, from turn times derived out of the estimates above.

Estimators never fabricate numbers: anything unobservable in the trace
comes back as an invalid estimate carrying a stable reason token.  Traces
whose first report already shows a filled buffer are screened out: such a
peer joined before tracing started and its startup cannot be recovered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EstimationError
from .model import RateGroup
from .traceio import Trace

TAU_OFF_METHODS = ("aa", "li")
BETA_METHODS = ("width-jump", "dv-turn", "flat-mean", "pv-jump")
RATE_METHODS = ("e2e", "seg")

#: A jump must exceed this multiple of the fastest smooth growth rate.
JUMP_DOMINANCE = 3.0
#: dv-turn: growth counts as broken when the right-side slope falls below
#: this fraction of the left-side slope.
TURN_RATIO = 0.5
#: dv-turn: the left-side slope must be at least this fraction of r to
#: count as a growth phase at all.
TURN_MIN_GROWTH = 0.5
#: flat segment: per-interval slope magnitude below this fraction of r.
FLAT_SLOPE = 0.5
#: flat segment: minimum number of samples.
FLAT_MIN_SAMPLES = 3
#: a sample is saturated when the download lag drops below
#: max(2, SAT_LAG_FACTOR * r * report_interval) chunks.
SAT_LAG_FACTOR = 0.5
#: default screening threshold on the first report's buffer fill.
SCREEN_FILL_THRESHOLD = 100


@dataclass(frozen=True)
class Estimate:
    """A value with provenance; invalid estimates carry a reason instead."""

    method: str
    value: Optional[float] = None
    valid: bool = True
    reason: Optional[str] = None

    @classmethod
    def failed(cls, method: str, reason: str) -> "Estimate":
        return cls(method=method, value=None, valid=False, reason=reason)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "value": self.value,
            "valid": self.valid,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class SaturatedSegment:
    start: int
    end: int  # inclusive sample indices


@dataclass(frozen=True)
class SaturationStats:
    segment: SaturatedSegment
    duration: float
    means: dict[str, float]
    stds: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "segment": [self.segment.start, self.segment.end],
            "duration": self.duration,
            "means": self.means,
            "stds": self.stds,
        }


@dataclass
class _Arrays:
    t: np.ndarray
    f: np.ndarray
    W: np.ndarray
    U: np.ndarray
    V: np.ndarray
    u: np.ndarray
    v: np.ndarray
    s: np.ndarray

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def dt_typical(self) -> float:
        return float(np.median(np.diff(self.t))) if self.n > 1 else 0.0


def _arrays(trace: Trace) -> _Arrays:
    if len(trace) < 2:
        raise EstimationError("insufficient-data", "trace has fewer than 2 samples")
    t = np.array([s.t for s in trace.samples], dtype=float)
    f = np.array([s.offset for s in trace.samples], dtype=float)
    W = np.array([s.width for s in trace.samples], dtype=float)
    U = np.array([s.fill for s in trace.samples], dtype=float)
    V = np.array([s.playable for s in trace.samples], dtype=float)
    s_ = np.array([s.service_head for s in trace.samples], dtype=float)
    return _Arrays(t=t, f=f, W=W, U=U, V=V, u=f + U, v=f + V, s=s_)


def _sat_tolerance(r: float, dt: float) -> float:
    return max(2.0, SAT_LAG_FACTOR * r * dt)


def _presat_last_index(a: _Arrays, r: float) -> int:
    """Index of the last report before the download curve saturates
    (meets the service curve); the last index if it never does."""
    tol = _sat_tolerance(r, a.dt_typical)
    saturated = a.s - a.u <= tol
    idx = np.flatnonzero(saturated)
    if len(idx) == 0 or idx[0] == 0:
        return a.n - 1 if len(idx) == 0 else 0
    return int(idx[0]) - 1


def _smooth_rate_bound(a: _Arrays, r: float) -> float:
    """Fastest plausible smooth growth in chunks/s: the measured download
    rate, floored at the playback rate."""
    i1 = _presat_last_index(a, r)
    if i1 >= 1 and a.t[i1] > a.t[0]:
        measured = (a.u[i1] - a.u[0]) / (a.t[i1] - a.t[0])
        return max(r, float(measured))
    return r


def _first_jump(values: np.ndarray, t: np.ndarray, rate_bound: float) -> Optional[int]:
    """Index just before the first between-sample increase that dominates
    the fastest smooth growth; None when there is no such jump."""
    dv = np.diff(values)
    thr = JUMP_DOMINANCE * rate_bound * np.diff(t)
    hits = np.flatnonzero(dv > thr)
    return int(hits[0]) if len(hits) else None


def _value_before_jump(values: np.ndarray, t: np.ndarray, i: int) -> float:
    """Left limit of a curve at a jump detected between samples i and i+1.

    The jump instant is unobserved; extrapolating the fitted pre-jump
    slope to the bracket midpoint centers the phase error instead of
    always reading a report too early.
    """
    target = (t[i] + t[i + 1]) / 2.0
    lo = max(0, i - 2)
    if i - lo >= 1:
        slope = np.polyfit(t[lo : i + 1], values[lo : i + 1], 1)[0]
    else:
        slope = 0.0
    return float(values[i] + slope * (target - t[i]))


def estimate_tau_off(trace: Trace, method: str, r: float) -> float:
    """Offset setup time from the earliest consecutive report pair whose
    offsets differ.

    aa: midpoint of the pair.  li: back-interpolate along the drain line
    of slope r.  Both are relative to the first report time.  Raises
    no-drain-observed when the offset never moves and left-censored when
    it moves already at the first pair (the peer joined before tracing).
    """
    if method not in TAU_OFF_METHODS:
        raise ValueError(f"method must be one of {TAU_OFF_METHODS}")
    a = _arrays(trace)
    changed = np.flatnonzero(np.diff(a.f) != 0)
    if len(changed) == 0:
        raise EstimationError("no-drain-observed", "offset never changes")
    i = int(changed[0])
    if i == 0:
        raise EstimationError("left-censored", "offset already moving at the first pair")
    t1, t2 = a.t[i], a.t[i + 1]
    if method == "aa":
        t = (t1 + t2) / 2.0
    else:
        t = t2 - (a.f[i + 1] - a.f[i]) / r
    return float(t - a.t[0])


def _dv_turn_index(a: _Arrays, r: float) -> Optional[int]:
    """First index where the playable-video growth rate breaks, using
    3-sample two-sided linear fits with a slope-ratio test."""
    if a.n < 5:
        return None
    for k in range(2, a.n - 2):
        tl, vl = a.t[k - 2 : k + 1], a.V[k - 2 : k + 1]
        tr, vr = a.t[k : k + 3], a.V[k : k + 3]
        left = np.polyfit(tl, vl, 1)[0]
        right = np.polyfit(tr, vr, 1)[0]
        if left >= TURN_MIN_GROWTH * r and right < TURN_RATIO * left:
            return k
    return None


def _flat_segment(a: _Arrays, r: float) -> Optional[tuple[int, int]]:
    """First maximal run of samples whose per-interval playable-video
    slope stays below FLAT_SLOPE * r (inclusive indices)."""
    if a.n < FLAT_MIN_SAMPLES:
        return None
    slopes = np.abs(np.diff(a.V) / np.diff(a.t))
    flat = slopes <= FLAT_SLOPE * r
    start = None
    for i, ok in enumerate(flat):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start + 1 >= FLAT_MIN_SAMPLES:
                return start, i
            start = None
    if start is not None and a.n - start >= FLAT_MIN_SAMPLES:
        return start, a.n - 1
    return None


def estimate_beta(trace: Trace, method: str, r: float) -> float:
    """Turnover threshold factor beta = C_sch / r by one of four methods.

    width-jump: buffer width at the last report before its first jump.
    dv-turn:    playable video just after its growth rate first breaks.
    flat-mean:  mean playable video over its first flat segment.
    pv-jump:    playable video at the last report before its jump.

    Raises turnover-not-observed when the trace does not span the event
    the method needs.
    """
    if method not in BETA_METHODS:
        raise ValueError(f"method must be one of {BETA_METHODS}")
    a = _arrays(trace)
    bound = _smooth_rate_bound(a, r)
    if method == "width-jump":
        i = _first_jump(a.W, a.t, bound)
        if i is None:
            raise EstimationError("turnover-not-observed", "no jump in buffer width")
        return _value_before_jump(a.W, a.t, i) / r
    if method == "pv-jump":
        i = _first_jump(a.V, a.t, bound)
        if i is None:
            raise EstimationError("turnover-not-observed", "no jump in playable video")
        return _value_before_jump(a.V, a.t, i) / r
    if method == "dv-turn":
        k = _dv_turn_index(a, r)
        if k is None or k + 1 >= a.n:
            raise EstimationError("turnover-not-observed", "no break in playable growth")
        return float(a.V[k + 1]) / r
    seg = _flat_segment(a, r)
    if seg is None:
        raise EstimationError("turnover-not-observed", "no flat playable segment")
    lo, hi = seg
    return float(np.mean(a.V[lo : hi + 1])) / r


def estimate_rate(trace: Trace, method: str, r: float) -> float:
    """Normalized download rate gamma_p over the pre-saturation window.

    e2e: one difference quotient first-to-last.  seg: mean of per-interval
    instant rates.  The download curve is offset + fill.
    """
    if method not in RATE_METHODS:
        raise ValueError(f"method must be one of {RATE_METHODS}")
    a = _arrays(trace)
    i1 = _presat_last_index(a, r)
    if i1 < 1:
        raise EstimationError("insufficient-data", "fewer than 2 pre-saturation samples")
    if method == "e2e":
        rate = (a.u[i1] - a.u[0]) / (a.t[i1] - a.t[0])
    else:
        rate = float(np.mean(np.diff(a.u[: i1 + 1]) / np.diff(a.t[: i1 + 1])))
    return float(rate) / r


def saturation_stats(
    trace: Trace,
    w_tolerance: float = 5.0,
    min_duration: float = 300.0,
) -> SaturationStats:
    """Statistics over the maximal suffix where the buffer width stays
    within ``w_tolerance`` of its final mean.

    The suffix must last at least ``min_duration`` seconds, otherwise the
    trace is not considered saturated.
    """
    a = _arrays(trace)
    tail = max(1, min(10, a.n // 10))
    w_ref = float(np.mean(a.W[-tail:]))
    bad = np.flatnonzero(np.abs(a.W - w_ref) > w_tolerance)
    start = int(bad[-1]) + 1 if len(bad) else 0
    if start >= a.n - 1:
        raise EstimationError("not-saturated", "buffer width never stabilizes")
    duration = float(a.t[-1] - a.t[start])
    if duration < min_duration:
        raise EstimationError(
            "not-saturated",
            f"stable segment lasts {duration:.0f}s, need {min_duration:.0f}s",
        )
    sl = slice(start, a.n)
    series = {
        "W": a.W[sl],
        "U": a.U[sl],
        "V": a.V[sl],
        "offset_lag": a.s[sl] - a.f[sl],
        "scope_lag": a.s[sl] - (a.f[sl] + a.W[sl]),
        "download_lag": a.s[sl] - a.u[sl],
        "playable_lag": a.s[sl] - a.v[sl],
    }
    return SaturationStats(
        segment=SaturatedSegment(start, a.n - 1),
        duration=duration,
        means={k: float(np.mean(v)) for k, v in series.items()},
        stds={k: float(np.std(v)) for k, v in series.items()},
    )


@dataclass
class EstimatorReport:
    """Everything recoverable from one trace, validity-flagged."""

    peer: str
    r: float
    screened: bool = False
    screen_reason: Optional[str] = None
    tau_off_aa: Estimate = field(default_factory=lambda: Estimate.failed("aa", "not-run"))
    tau_off_li: Estimate = field(default_factory=lambda: Estimate.failed("li", "not-run"))
    beta_by_method: dict[str, Estimate] = field(default_factory=dict)
    gamma_e2e: Estimate = field(default_factory=lambda: Estimate.failed("e2e", "not-run"))
    gamma_seg: Estimate = field(default_factory=lambda: Estimate.failed("seg", "not-run"))
    w_star_hat: Estimate = field(default_factory=lambda: Estimate.failed("w-star", "not-run"))
    theta_hat: Estimate = field(default_factory=lambda: Estimate.failed("theta", "not-run"))
    tau_sch_hat: Estimate = field(default_factory=lambda: Estimate.failed("tau-sch", "not-run"))
    tau_cvg_hat: Estimate = field(default_factory=lambda: Estimate.failed("tau-cvg", "not-run"))
    group: Optional[RateGroup] = None
    group_reason: Optional[str] = None
    saturation: Optional[SaturationStats] = None
    saturation_reason: Optional[str] = None

    @property
    def beta_values(self) -> list[float]:
        return [e.value for e in self.beta_by_method.values() if e.valid]

    def to_dict(self) -> dict:
        return {
            "peer": self.peer,
            "r": self.r,
            "screened": self.screened,
            "screen_reason": self.screen_reason,
            "tau_off": {"aa": self.tau_off_aa.to_dict(), "li": self.tau_off_li.to_dict()},
            "beta": {k: e.to_dict() for k, e in self.beta_by_method.items()},
            "gamma": {"e2e": self.gamma_e2e.to_dict(), "seg": self.gamma_seg.to_dict()},
            "w_star": self.w_star_hat.to_dict(),
            "theta": self.theta_hat.to_dict(),
            "tau_sch": self.tau_sch_hat.to_dict(),
            "tau_cvg": self.tau_cvg_hat.to_dict(),
            "group": self.group.value if self.group else None,
            "group_reason": self.group_reason,
            "saturation": self.saturation.to_dict() if self.saturation else None,
            "saturation_reason": self.saturation_reason,
        }


def _attempt(method: str, fn, *args) -> Estimate:
    try:
        return Estimate(method=method, value=float(fn(*args)))
    except EstimationError as e:
        return Estimate.failed(method, e.reason)


def _estimate_w_star(a: _Arrays, r: float) -> float:
    """Saturated buffer width: mean width over the converged tail."""
    tol = _sat_tolerance(r, a.dt_typical)
    if a.s[-1] - a.u[-1] > tol:
        raise EstimationError("non-converging", "download curve never meets the service curve")
    tail = max(1, min(5, a.n // 10))
    return float(np.mean(a.W[-tail:]))


def derive_turn_times(
    beta: float, gamma: float, tau_off: float, w_star: float, theta: float, r: float
) -> tuple[float, float]:
    """Model turn times from estimated parameters.

    beta/gamma/tau_off are normalized; w_star and theta are in chunks.
    Raises non-converging for gamma <= 1.
    """
    if gamma <= 1.0:
        raise EstimationError("non-converging", "estimated rate at or below playback rate")
    if beta <= gamma * tau_off:
        tau_sch = beta / gamma
    else:
        tau_sch = (beta - tau_off) / (gamma - 1.0)
    tau_cvg = (w_star - theta) / ((gamma - 1.0) * r)
    return tau_sch, tau_cvg


def classify_times(tau_sch: float, tau_off: float, tau_cvg: float) -> RateGroup:
    """Rate group from the ordering of the three turn times (same boundary
    conventions as model.classify)."""
    if tau_off <= tau_sch:
        return RateGroup.G0
    if tau_cvg < tau_off:
        return RateGroup.G2
    return RateGroup.G1


def analyze_trace(
    trace: Trace,
    r: float,
    screen_fill_threshold: int = SCREEN_FILL_THRESHOLD,
    sat_w_tolerance: float = 5.0,
    sat_min_duration: float = 300.0,
) -> EstimatorReport:
    """Run every estimator on one trace and assemble the report.

    The rate group comes from turn times derived out of the estimated
    parameters (median beta, e2e rate, li setup time, saturated width)
    rather than raw jump timestamps: derived times are exact on clean
    traces, where measured jump instants carry half-interval jitter that
    would flip classifications sitting on a group boundary.
    """
    report = EstimatorReport(peer=trace.peer, r=r)
    if len(trace) < 2:
        report.screened = True
        report.screen_reason = "insufficient-data"
        return report
    if trace.samples[0].fill > screen_fill_threshold:
        report.screened = True
        report.screen_reason = "initial-fill-above-threshold"
        return report

    report.tau_off_aa = _attempt("aa", estimate_tau_off, trace, "aa", r)
    report.tau_off_li = _attempt("li", estimate_tau_off, trace, "li", r)
    report.beta_by_method = {
        m: _attempt(m, estimate_beta, trace, m, r) for m in BETA_METHODS
    }
    report.gamma_e2e = _attempt("e2e", estimate_rate, trace, "e2e", r)
    report.gamma_seg = _attempt("seg", estimate_rate, trace, "seg", r)

    a = _arrays(trace)
    report.w_star_hat = _attempt("w-star", _estimate_w_star, a, r)
    if report.w_star_hat.valid:
        theta = float(a.f[0] - (a.s[0] - report.w_star_hat.value))
        report.theta_hat = Estimate(method="theta", value=theta)

    tau_off = report.tau_off_li if report.tau_off_li.valid else report.tau_off_aa
    betas = report.beta_values
    gamma = report.gamma_e2e if report.gamma_e2e.valid else report.gamma_seg
    if betas and gamma.valid and tau_off.valid and report.w_star_hat.valid:
        try:
            tau_sch, tau_cvg = derive_turn_times(
                float(np.median(betas)),
                gamma.value,
                tau_off.value,
                report.w_star_hat.value,
                report.theta_hat.value,
                r,
            )
            report.tau_sch_hat = Estimate(method="tau-sch", value=tau_sch)
            report.tau_cvg_hat = Estimate(method="tau-cvg", value=tau_cvg)
            report.group = classify_times(tau_sch, tau_off.value, tau_cvg)
        except EstimationError as e:
            report.group_reason = e.reason
    else:
        report.group_reason = "inputs-invalid"

    try:
        report.saturation = saturation_stats(
            trace, w_tolerance=sat_w_tolerance, min_duration=sat_min_duration
        )
    except EstimationError as e:
        report.saturation_reason = e.reason
    return report


# --- batch aggregation ---------------------------------------------------


def report_rows(reports: list[EstimatorReport]) -> tuple[list[str], list[list]]:
    """Flatten reports into CSV rows (one per trace)."""
    header = [
        "peer", "r", "screened",
        "tau_off_aa", "tau_off_li",
        "beta_width_jump", "beta_dv_turn", "beta_flat_mean", "beta_pv_jump",
        "gamma_e2e", "gamma_seg", "w_star", "theta", "tau_sch", "tau_cvg", "group",
    ]

    def cell(est: Estimate):
        return f"{est.value:.6g}" if est.valid else ""

    rows = []
    for rep in reports:
        beta = rep.beta_by_method
        rows.append([
            rep.peer, rep.r, int(rep.screened),
            cell(rep.tau_off_aa), cell(rep.tau_off_li),
            *(cell(beta[m]) if m in beta else "" for m in BETA_METHODS),
            cell(rep.gamma_e2e), cell(rep.gamma_seg),
            cell(rep.w_star_hat), cell(rep.theta_hat),
            cell(rep.tau_sch_hat), cell(rep.tau_cvg_hat),
            rep.group.value if rep.group else "",
        ])
    return header, rows


def histogram_rows(
    samples_by_label: dict[str, list[float]], bin_width: float
) -> tuple[list[str], list[list]]:
    """Shared-bin histogram across labeled sample sets, as CSV rows."""
    pooled = [x for xs in samples_by_label.values() for x in xs]
    labels = list(samples_by_label)
    if not pooled:
        return ["bin_lo", "bin_hi", *labels], []
    lo = math.floor(min(pooled) / bin_width) * bin_width
    hi = math.ceil(max(pooled) / bin_width) * bin_width
    edges = np.arange(lo, hi + bin_width, bin_width)
    if len(edges) < 2:
        edges = np.array([lo, lo + bin_width])
    counts = {
        label: np.histogram(np.asarray(xs, dtype=float), bins=edges)[0]
        for label, xs in samples_by_label.items()
    }
    rows = []
    for i in range(len(edges) - 1):
        rows.append(
            [f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}"]
            + [int(counts[label][i]) for label in labels]
        )
    return ["bin_lo", "bin_hi", *labels], rows
