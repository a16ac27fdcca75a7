"""Closed-form piecewise-line prediction of a joining peer's progress.

Under constant playback rate r and constant host download rate r_p, every
progress curve of a threshold-bipolar host is a piecewise line.  With the
service curve s(t) = r*t + w_star as the common reference:

    f(t)  = theta + r * max(0, t - tau_off)          offset (drain) curve
    u(t)  = min(r_p * t + theta, s(t))               download curve
    xi(t) = u(t) before tau_sch, s(t) after          scope curve
    v(t)  = u(t) before tau_sch,
            f(t) + c_sch on [tau_sch, tau_cvg),      playable-head curve
            s(t) from tau_cvg on

where tau_sch is the first time the download curve meets the threshold
curve f(t) + c_sch, and tau_cvg the first time it meets the service
curve.  xi jumps at tau_sch and v jumps at tau_cvg; everything else is
continuous.  Buffer curves follow by subtraction: W = xi - f, U = u - f,
V = v - f.

Time 0 is the instant the host starts fetching.  All chunk quantities are
in chunks; passing r = 1 gives the normalized model where chunk counts
read as seconds of content.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, TextIO

from .errors import (
    ConfigError,
    InfeasibleDesignError,
    NeverReachedError,
    NonConvergingError,
)


class RateGroup(str, Enum):
    """Download-rate regimes by the ordering of the three turn times.

    G0: drain starts before the threshold is reached (tau_off <= tau_sch),
        the poorest startup environment.
    G1: threshold first, then drain, then convergence (the common case).
    G2: converged before the drain even starts (tau_cvg < tau_off).
    """

    G0 = "G0"
    G1 = "G1"
    G2 = "G2"


@dataclass(frozen=True, slots=True)
class ModelParams:
    """The six quantities that determine every progress curve.

    r         playback rate, chunks/s
    r_p       host download rate, chunks/s
    c_sch     turnover threshold, chunks
    tau_off   offset setup time, s
    theta     initial offset above the model origin, chunks
    w_star    saturated buffer width (= offset lag), chunks
    scope_lag optional additive correction: how far the reachable scope
              trails the service curve, chunks (0 = ideal)
    """

    r: float
    r_p: float
    c_sch: float
    tau_off: float
    theta: float
    w_star: float
    scope_lag: float = 0.0

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigError("r", "must be > 0")
        if self.r_p <= 0:
            raise ConfigError("r_p", "must be > 0")
        if not 0 < self.c_sch < self.w_star:
            raise ConfigError("c_sch", "must satisfy 0 < c_sch < w_star")
        if self.tau_off <= 0:
            raise ConfigError("tau_off", "must be > 0")
        # theta == w_star is the degenerate already-converged join
        if not 0 <= self.theta <= self.w_star:
            raise ConfigError("theta", "must satisfy 0 <= theta <= w_star")
        if self.scope_lag < 0:
            raise ConfigError("scope_lag", "must be >= 0")

    @classmethod
    def normalized(
        cls,
        gamma_p: float,
        beta: float = 90.0,
        tau_off: float = 70.0,
        w_star: float = 210.0,
        theta: Optional[float] = None,
        scope_lag: float = 0.0,
    ) -> "ModelParams":
        """Normalized parameterization (r = 1, chunk counts in seconds)."""
        return cls(
            r=1.0,
            r_p=gamma_p,
            c_sch=beta,
            tau_off=tau_off,
            theta=w_star / 3.0 if theta is None else theta,
            w_star=w_star,
            scope_lag=scope_lag,
        )

    @property
    def gamma_p(self) -> float:
        return self.r_p / self.r

    @property
    def converges(self) -> bool:
        return self.r_p > self.r

    def service(self, t: float) -> float:
        return self.r * t + self.w_star


@dataclass(frozen=True, slots=True)
class PointPrediction:
    """Predicted peer progress at one instant (absolute chunk values)."""

    t: float
    f: float
    xi: float
    v: float
    u: float

    @property
    def W(self) -> float:
        return self.xi - self.f

    @property
    def U(self) -> float:
        return self.u - self.f

    @property
    def V(self) -> float:
        return self.v - self.f


def scheduling_turnover(p: ModelParams) -> float:
    """First time the download curve reaches the threshold curve.

    Two branches: while the offset still sits at theta the threshold curve
    is flat, afterwards it climbs at r.  Raises NeverReachedError when the
    download rate cannot catch the climbing threshold.
    """
    if p.c_sch <= p.r_p * p.tau_off:
        return p.c_sch / p.r_p
    if p.r_p <= p.r:
        raise NeverReachedError(
            "threshold lies beyond the drain start and r_p <= r: never reached"
        )
    return (p.c_sch - p.r * p.tau_off) / (p.r_p - p.r)


def convergence_time(p: ModelParams) -> float:
    """First time the download curve meets the service curve."""
    if not p.converges:
        raise NonConvergingError("r_p <= r: the download curve never converges")
    return (p.w_star - p.theta) / (p.r_p - p.r)


def classify(p: ModelParams) -> RateGroup:
    """Rate group from the ordering of tau_off, tau_sch, tau_cvg.

    Boundary conventions follow the groups' definitions as half-open rate
    intervals: equality tau_sch = tau_off belongs to G0 and equality
    tau_cvg = tau_off belongs to G1.
    """
    if not p.converges:
        raise NonConvergingError("r_p <= r: rate group undefined (never converges)")
    tau_sch = scheduling_turnover(p)
    tau_cvg = convergence_time(p)
    if p.tau_off <= tau_sch:
        return RateGroup.G0
    if tau_cvg < p.tau_off:
        return RateGroup.G2
    return RateGroup.G1


def _turn_times(p: ModelParams) -> tuple[float, float]:
    """(tau_sch, tau_cvg) with infinities for never-happening events."""
    try:
        tau_sch = scheduling_turnover(p)
    except NeverReachedError:
        tau_sch = math.inf
    tau_cvg = convergence_time(p) if p.converges else math.inf
    return tau_sch, tau_cvg


def predict(p: ModelParams, t: float, side: str = "right") -> PointPrediction:
    """Evaluate all four peer progress curves at time t.

    The curves are right-continuous at their jump instants; pass
    side="left" for the left limit (used to measure jump magnitudes and to
    compare against discretized data straddling a jump).
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    tau_sch, tau_cvg = _turn_times(p)

    def past(tau: float) -> bool:
        return t > tau or (t == tau and side == "right")

    s = p.service(t)
    f = p.theta + p.r * max(0.0, t - p.tau_off)
    u = min(p.r_p * t + p.theta, s)
    reachable = s - p.scope_lag
    xi = reachable if past(tau_sch) else u
    if past(tau_cvg):
        v = reachable
    elif past(tau_sch):
        v = f + p.c_sch
    else:
        v = u
    return PointPrediction(t=t, f=f, xi=xi, v=v, u=u)


@dataclass(frozen=True, slots=True)
class Segment:
    """One straight piece of a progress curve.

    ``value_at_start`` is the right limit at t_start and ``jump_at_end``
    the discontinuity at t_end (0 where the curve is continuous; the final
    open-ended segment has t_end = inf and jump 0).
    """

    t_start: float
    t_end: float
    slope: float
    value_at_start: float
    jump_at_end: float = 0.0


#: Curves reported by piecewise_table: absolute (peer) and relative (buffer).
CURVE_NAMES = ("f", "xi", "v", "u", "W", "U", "V")


@dataclass(frozen=True)
class PiecewiseProgress:
    """Full segment decomposition of every progress curve."""

    tau_sch: Optional[float]
    tau_cvg: Optional[float]
    tau_off: float
    group: Optional[RateGroup]
    segments: dict[str, list[Segment]] = field(default_factory=dict)


def _curve_value(pred: PointPrediction, name: str) -> float:
    return getattr(pred, name)


def _snap(value: float, anchors: tuple[float, ...], tol: float = 1e-9) -> float:
    for a in anchors:
        if abs(value - a) <= tol * max(1.0, abs(a)):
            return a
    return value


def piecewise_table(p: ModelParams, horizon: float = math.inf) -> PiecewiseProgress:
    """Segment lists for every curve between the ordered turn points.

    Slopes are derived from the curve formulas and snapped to the exact
    rate set {0, r, r_p, r_p - r}.  A finite ``horizon`` closes the last
    segment (useful for plotting); by default it is open-ended.
    """
    tau_sch, tau_cvg = _turn_times(p)
    group = classify(p) if p.converges else None
    points = sorted({0.0, p.tau_off}
                    | ({tau_sch} if math.isfinite(tau_sch) else set())
                    | ({tau_cvg} if math.isfinite(tau_cvg) else set()))
    anchors = (0.0, p.r, p.r_p, p.r_p - p.r)

    segments: dict[str, list[Segment]] = {name: [] for name in CURVE_NAMES}
    bounds = list(zip(points, points[1:] + [horizon if math.isfinite(horizon) else math.inf]))
    for a, b in bounds:
        if not b > a:
            continue
        span = (b - a) if math.isfinite(b) else 2.0
        m1, m2 = a + span / 3.0, a + 2.0 * span / 3.0
        at_start = predict(p, a, side="right")
        p1, p2 = predict(p, m1), predict(p, m2)
        end_left = predict(p, b, side="left") if math.isfinite(b) else None
        end_right = predict(p, b, side="right") if math.isfinite(b) else None
        for name in CURVE_NAMES:
            slope = _snap((_curve_value(p2, name) - _curve_value(p1, name)) / (m2 - m1), anchors)
            jump = (
                _curve_value(end_right, name) - _curve_value(end_left, name)
                if end_left is not None
                else 0.0
            )
            if abs(jump) < 1e-9:
                jump = 0.0
            segments[name].append(
                Segment(
                    t_start=a,
                    t_end=b,
                    slope=slope,
                    value_at_start=_curve_value(at_start, name),
                    jump_at_end=jump,
                )
            )
    return PiecewiseProgress(
        tau_sch=tau_sch if math.isfinite(tau_sch) else None,
        tau_cvg=tau_cvg if math.isfinite(tau_cvg) else None,
        tau_off=p.tau_off,
        group=group,
        segments=segments,
    )


def min_download_rate(initial_chunks: float, tau_off: float) -> float:
    """Smallest average rate (in multiples of r) that fetches the first
    ``initial_chunks`` chunks before they expire from every buffer.

    The last of the first B chunks survives roughly tau_off + B seconds,
    so the host needs B / (tau_off + B) on average.
    """
    if initial_chunks < 0:
        raise ConfigError("initial_chunks", "must be >= 0")
    if tau_off <= 0:
        raise ConfigError("tau_off", "must be > 0")
    return initial_chunks / (tau_off + initial_chunks)


def beta_bounds(
    w_star: float,
    tracker_duration: float,
    v_star: float,
    sigma_v: float,
    alpha: float,
    tau_off: float,
) -> tuple[float, float]:
    """Feasible range for the turnover factor beta (normalized units).

    Lower bound: chunks below the tracker window survive only in peer
    buffers, so the threshold should cover at least w_star minus the
    tracker's buffered duration.  Upper bound: the threshold curve must
    stay below a typical neighbor's playable head (mean v_star, spread
    sigma_v, safety factor alpha) or the host would idle waiting for its
    neighbor, even before the drain starts.
    """
    for name, val in (
        ("w_star", w_star),
        ("tracker_duration", tracker_duration),
        ("v_star", v_star),
        ("sigma_v", sigma_v),
        ("alpha", alpha),
        ("tau_off", tau_off),
    ):
        if val < 0:
            raise ConfigError(name, "must be >= 0")
    lower = w_star - tracker_duration
    upper = v_star - alpha * sigma_v - tau_off
    if lower > upper:
        raise InfeasibleDesignError(
            f"beta lower bound {lower} exceeds upper bound {upper}"
        )
    return lower, upper


def initial_offset_rule(w_star: float) -> float:
    """Design rule for the initial offset headroom: one third of the
    saturated buffer width, which makes it equal the offset setup time in
    the normalized system."""
    if w_star <= 0:
        raise ConfigError("w_star", "must be > 0")
    return w_star / 3.0


def export_curves(
    p: ModelParams,
    out: TextIO,
    t_end: float,
    step: float = 1.0,
) -> int:
    """Write sampled predictions as CSV (t, f, xi, v, u, W, U, V).

    Returns the number of data rows.  Samples are right limits, so a row
    exactly on a jump shows the post-jump state.
    """
    if step <= 0:
        raise ConfigError("step", "must be > 0")
    writer = csv.writer(out)
    writer.writerow(["t", "f", "xi", "v", "u", "W", "U", "V"])
    n = 0
    t = 0.0
    k = 0
    while t <= t_end + 1e-9:
        pred = predict(p, min(t, t_end))
        writer.writerow(
            [f"{pred.t:g}"]
            + [f"{x:.6f}" for x in (pred.f, pred.xi, pred.v, pred.u, pred.W, pred.U, pred.V)]
        )
        n += 1
        k += 1
        t = k * step
    return n
