"""Command-line front end.

Subcommands:

    simulate   run a swarm scenario, write per-peer JSONL traces + manifest
    predict    evaluate the analytical model, write curve CSV + summary JSON
    analyze    run the estimators over trace files, write reports + histograms
    compare    per-sample residuals between a trace and a model prediction

Exit codes: 0 success, 1 missing input, 2 validation failure, 3 partial
failure.  Set TBLAB_LOG to a level name (DEBUG, INFO, ...) for logging.
Model commands default to the normalized system (r = 1 chunk/s).
"""

from __future__ import annotations

import argparse
import glob
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

from .errors import ConfigError, TbLabError
from .estimators import analyze_trace, histogram_rows, report_rows
from .model import (
    ModelParams,
    NonConvergingError,
    classify,
    convergence_time,
    export_curves,
    predict,
    scheduling_turnover,
)
from .sim import SwarmConfig, run_to_files
from .traceio import (
    atomic_write_text,
    read_manifest,
    read_trace,
    write_csv_rows,
)
from .version import __version__

log = logging.getLogger("tblab")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3


def _model_params(args: argparse.Namespace, theta: float | None = None) -> ModelParams:
    w_star = args.w_star * args.r
    return ModelParams(
        r=args.r,
        r_p=args.gamma * args.r,
        c_sch=max(1, round(args.beta * args.r)),
        tau_off=args.tau_off,
        theta=(w_star / 3.0) if theta is None else theta,
        w_star=w_star,
    )


def _derived_summary(p: ModelParams) -> dict:
    out = {"r": p.r, "gamma_p": p.gamma_p, "c_sch": p.c_sch, "tau_off": p.tau_off,
           "theta": p.theta, "w_star": p.w_star, "converges": p.converges}
    try:
        out["tau_sch"] = scheduling_turnover(p)
    except TbLabError:
        out["tau_sch"] = None
    try:
        out["tau_cvg"] = convergence_time(p)
        out["group"] = classify(p).value
    except NonConvergingError:
        out["tau_cvg"] = None
        out["group"] = None
    return out


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            print(f"error: config file not found: {path}", file=sys.stderr)
            return EXIT_INPUT
        with open(path) as fh:
            data = json.load(fh)
        cfg = SwarmConfig.from_dict(data)
    else:
        cfg = SwarmConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    out_dir = Path(args.out)
    manifest = run_to_files(cfg, out_dir)
    print(f"wrote {len(manifest['traces'])} trace(s) and manifest to {out_dir}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    p = _model_params(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = _derived_summary(p)
    buf = io.StringIO()
    t_end = args.t_end
    if t_end is None:
        t_end = (summary["tau_cvg"] or 4 * p.tau_off) + 2 * p.tau_off
    export_curves(p, buf, t_end=t_end, step=args.step)
    atomic_write_text(out_dir / "predict.csv", buf.getvalue())
    atomic_write_text(out_dir / "predict.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _resolve_rate(args: argparse.Namespace, trace_path: Path) -> float:
    if args.r is not None:
        return args.r
    manifest_path = trace_path.parent / "manifest.json"
    if manifest_path.exists():
        try:
            return float(read_manifest(manifest_path)["config"]["r"])
        except (KeyError, ValueError, json.JSONDecodeError):
            log.warning("manifest next to %s is unusable, assuming r=1", trace_path)
    return 1.0


def cmd_analyze(args: argparse.Namespace) -> int:
    paths: list[Path] = []
    for pattern in args.traces:
        matched = sorted(glob.glob(pattern))
        paths.extend(Path(m) for m in matched)
        if not matched and Path(pattern).exists():
            paths.append(Path(pattern))
    if not paths:
        print("error: no trace files matched", file=sys.stderr)
        return EXIT_INPUT
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    failures = []
    for path in paths:
        try:
            trace = read_trace(path)
            r = _resolve_rate(args, path)
            report = analyze_trace(
                trace, r, sat_min_duration=args.sat_min_duration
            )
        except TbLabError as e:
            failures.append((path, str(e)))
            print(f"error: {path}: {e}", file=sys.stderr)
            continue
        reports.append(report)
        atomic_write_text(
            out_dir / f"{path.stem}.report.json",
            json.dumps(report.to_dict(), indent=2) + "\n",
        )
    if reports:
        header, rows = report_rows(reports)
        write_csv_rows(out_dir / "estimates.csv", header, rows)
        unscreened = [rep for rep in reports if not rep.screened]
        hists = {
            "beta": {
                m: [rep.beta_by_method[m].value for rep in unscreened
                    if m in rep.beta_by_method and rep.beta_by_method[m].valid]
                for m in ("width-jump", "dv-turn", "flat-mean", "pv-jump")
            },
            "gamma": {
                "e2e": [rep.gamma_e2e.value for rep in unscreened if rep.gamma_e2e.valid],
                "seg": [rep.gamma_seg.value for rep in unscreened if rep.gamma_seg.valid],
            },
            "tau_off": {
                "aa": [rep.tau_off_aa.value for rep in unscreened if rep.tau_off_aa.valid],
                "li": [rep.tau_off_li.value for rep in unscreened if rep.tau_off_li.valid],
            },
        }
        widths = {"beta": args.bin_width, "gamma": args.bin_width / 10.0, "tau_off": args.bin_width}
        for name, by_method in hists.items():
            header, rows = histogram_rows(by_method, widths[name])
            write_csv_rows(out_dir / f"hist_{name}.csv", header, rows)
    print(f"analyzed {len(reports)} trace(s), {len(failures)} failure(s); reports in {out_dir}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    path = Path(args.trace)
    if not path.exists():
        print(f"error: trace file not found: {path}", file=sys.stderr)
        return EXIT_INPUT
    trace = read_trace(path)
    if len(trace) == 0:
        print(f"error: trace is empty: {path}", file=sys.stderr)
        return EXIT_INPUT
    samples = trace.samples
    t0 = samples[0].t
    span = samples[-1].t - t0
    if span > 0:
        measured_r = (samples[-1].service_head - samples[0].service_head) / span
        if abs(measured_r - args.r) > 0.1 * args.r:
            print(
                f"error: trace service-curve rate {measured_r:.3g} does not match --r {args.r:g}",
                file=sys.stderr,
            )
            return EXIT_VALIDATION
    w_chunks = round(args.w_star * args.r)
    origin = samples[0].service_head - w_chunks
    theta = samples[0].offset - origin
    p = _model_params(args, theta=float(theta))

    rows = []
    max_abs = {"V": 0.0, "W": 0.0, "U": 0.0}
    sum_abs = {"V": 0.0, "W": 0.0, "U": 0.0}
    for s in samples:
        t = s.t - t0
        right = predict(p, t, side="right")
        left = predict(p, t, side="left")
        sim = {"V": s.playable, "W": s.width, "U": s.fill}
        row = [f"{t:g}"]
        for name in ("V", "W", "U"):
            model = getattr(right, name)
            res = sim[name] - model
            alt = sim[name] - getattr(left, name)
            if abs(alt) < abs(res):
                res, model = alt, getattr(left, name)
            row.extend([sim[name], f"{model:.3f}", f"{res:.3f}"])
            max_abs[name] = max(max_abs[name], abs(res))
            sum_abs[name] += abs(res)
        rows.append(row)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv_rows(
        out_dir / "residuals.csv",
        ["t", "V_sim", "V_model", "V_res", "W_sim", "W_model", "W_res",
         "U_sim", "U_model", "U_res"],
        rows,
    )
    summary = {
        "trace": str(path),
        "samples": len(samples),
        "max_abs_residual": max_abs,
        "mean_abs_residual": {k: v / len(samples) for k, v in sum_abs.items()},
        "params": _derived_summary(p),
    }
    atomic_write_text(out_dir / "compare.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _add_model_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--r", type=float, default=1.0, help="playback rate, chunks/s (default 1)")
    sp.add_argument("--gamma", type=float, default=3.0, help="normalized download rate")
    sp.add_argument("--beta", type=float, default=90.0, help="turnover threshold factor")
    sp.add_argument("--tau-off", type=float, default=70.0, dest="tau_off",
                    help="offset setup time, s")
    sp.add_argument("--w-star", type=float, default=210.0, dest="w_star",
                    help="saturated buffer width, s of content")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tblab",
        description="Threshold-bipolar startup lab: simulate, predict, analyze, compare.",
    )
    parser.add_argument("--version", action="version", version=f"tblab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run a swarm scenario")
    sp.add_argument("--config", help="JSON config mirroring SwarmConfig fields")
    sp.add_argument("--out", default="tblab-run", help="output directory")
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("predict", help="evaluate the analytical model")
    _add_model_flags(sp)
    sp.add_argument("--t-end", type=float, default=None, dest="t_end",
                    help="prediction horizon, s (default: past convergence)")
    sp.add_argument("--step", type=float, default=1.0, help="sampling step, s")
    sp.add_argument("--out", default="tblab-predict", help="output directory")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("analyze", help="estimate parameters from traces")
    sp.add_argument("traces", nargs="+", help="trace files or glob patterns")
    sp.add_argument("--out", default="tblab-reports", help="output directory")
    sp.add_argument("--r", type=float, default=None,
                    help="playback rate (default: manifest next to trace, else 1)")
    sp.add_argument("--bin-width", type=float, default=2.0, dest="bin_width",
                    help="histogram bin width for beta and tau_off")
    sp.add_argument("--sat-min-duration", type=float, default=300.0, dest="sat_min_duration",
                    help="minimum stable-tail duration for saturation stats, s")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("compare", help="residuals between a trace and the model")
    sp.add_argument("trace", help="trace file")
    _add_model_flags(sp)
    sp.add_argument("--out", default="tblab-compare", help="output directory")
    sp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("TBLAB_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except TbLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
