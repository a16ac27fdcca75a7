"""Threshold-bipolar startup lab for p2p live streaming.

A joining peer fills its buffer head first; once the gap-free playable run
passes a threshold it switches to fetching the newest chunks instead,
keeping the playable run pinned at the threshold while the buffer drains.
This package holds the scheduler itself, a slotted swarm simulator that
exercises it, a closed-form piecewise-line predictor of the resulting
buffer progress, and estimators that recover the design parameters back
out of buffer-message traces.
"""

from .buffer import (
    BufferMessage,
    BufferMetrics,
    LagSet,
    dec,
    decode_bits,
    encode_bits,
    lags,
    metrics,
    write_bm,
)
from .errors import (
    BufferCapacityError,
    ChunkRangeError,
    ConfigError,
    EstimationError,
    InfeasibleDesignError,
    JoinTooEarlyError,
    NeverReachedError,
    NonConvergingError,
    TbLabError,
    TraceError,
)
from .estimators import (
    Estimate,
    EstimatorReport,
    SaturatedSegment,
    SaturationStats,
    analyze_trace,
    estimate_beta,
    estimate_rate,
    estimate_tau_off,
    saturation_stats,
)
from .model import (
    ModelParams,
    PiecewiseProgress,
    PointPrediction,
    RateGroup,
    Segment,
    beta_bounds,
    classify,
    convergence_time,
    export_curves,
    initial_offset_rule,
    min_download_rate,
    piecewise_table,
    predict,
    scheduling_turnover,
)
from .scheduler import (
    Action,
    CandidateSet,
    Decision,
    HostState,
    TBParams,
    candidate_set,
    drain_tick,
    next_request,
    on_fetch_complete,
)
from .sim import (
    Simulation,
    SimResult,
    SwarmConfig,
    TrackerState,
    choose_initial_offset,
    host_budget,
    model_params_for,
    run,
    run_to_files,
    tracker_window_chunks,
)
from .traceio import ProgressSample, Trace, read_trace, write_trace
from .version import __version__

__all__ = [
    "__version__",
    # buffer
    "BufferMessage", "BufferMetrics", "LagSet",
    "metrics", "write_bm", "dec", "lags", "encode_bits", "decode_bits",
    # scheduler
    "TBParams", "HostState", "CandidateSet", "Action", "Decision",
    "candidate_set", "next_request", "on_fetch_complete", "drain_tick",
    # model
    "ModelParams", "RateGroup", "PointPrediction", "Segment", "PiecewiseProgress",
    "scheduling_turnover", "convergence_time", "classify", "predict",
    "piecewise_table", "min_download_rate", "beta_bounds", "initial_offset_rule",
    "export_curves",
    # sim
    "SwarmConfig", "TrackerState", "Simulation", "SimResult",
    "run", "run_to_files", "host_budget", "choose_initial_offset",
    "model_params_for", "tracker_window_chunks",
    # traces
    "ProgressSample", "Trace", "read_trace", "write_trace",
    # estimators
    "Estimate", "EstimatorReport", "SaturatedSegment", "SaturationStats",
    "estimate_tau_off", "estimate_beta", "estimate_rate", "saturation_stats",
    "analyze_trace",
    # errors
    "TbLabError", "ChunkRangeError", "BufferCapacityError", "TraceError",
    "ConfigError", "NeverReachedError", "NonConvergingError",
    "InfeasibleDesignError", "JoinTooEarlyError", "EstimationError",
]
