"""Trace and manifest file formats.

A trace is one JSON object per line, one line per report instant:

    {"t": 5.0, "peer": "host", "offset": 3600, "bits": "1x150",
     "fill": 150, "playable": 150, "width": 149, "downloaded": 150,
     "service_head": 2150}

``bits`` is the run-length bitmap encoding of buffer.encode_bits and must
round-trip bit-exactly.  Externally produced files in the same schema are
accepted; loading validates time ordering and monotonicity of offset and
downloaded counters.

A run manifest is a single JSON document recording the seed, a hash of the
canonical config, the tool version, model-derived constants, and the
output paths, so a run can be reproduced byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .buffer import decode_bits, encode_bits
from .errors import TraceError


@dataclass(frozen=True, slots=True)
class ProgressSample:
    """One time-stamped buffer report.  ``bits`` is the bitmap integer."""

    t: float
    offset: int
    bits: int
    fill: int
    playable: int
    width: int
    downloaded: int
    service_head: int

    @property
    def u(self) -> int:
        """Download curve value: offset + fill."""
        return self.offset + self.fill

    @property
    def v(self) -> int:
        """Playable-head curve value: offset + playable."""
        return self.offset + self.playable


@dataclass(frozen=True)
class Trace:
    peer: str
    samples: tuple[ProgressSample, ...]

    def __post_init__(self):
        prev: ProgressSample | None = None
        for s in self.samples:
            if prev is not None:
                if s.t <= prev.t:
                    raise TraceError(f"samples out of order at t={s.t}")
                if s.offset < prev.offset:
                    raise TraceError(f"offset decreases at t={s.t}")
                if s.downloaded < prev.downloaded:
                    raise TraceError(f"downloaded decreases at t={s.t}")
            prev = s

    def __len__(self) -> int:
        return len(self.samples)


def sample_to_json(sample: ProgressSample, peer: str) -> str:
    return json.dumps(
        {
            "t": sample.t,
            "peer": peer,
            "offset": sample.offset,
            "bits": encode_bits(sample.bits),
            "fill": sample.fill,
            "playable": sample.playable,
            "width": sample.width,
            "downloaded": sample.downloaded,
            "service_head": sample.service_head,
        },
        separators=(",", ":"),
    )


def sample_from_json(line: str) -> tuple[str, ProgressSample]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise TraceError(f"malformed trace line: {e}") from e
    try:
        bits = decode_bits(obj["bits"])
        sample = ProgressSample(
            t=float(obj["t"]),
            offset=int(obj["offset"]),
            bits=bits,
            fill=int(obj.get("fill", bits.bit_count())),
            playable=int(obj.get("playable", 0)),
            width=int(obj.get("width", max(0, bits.bit_length() - 1))),
            downloaded=int(obj.get("downloaded", 0)),
            service_head=int(obj["service_head"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TraceError(f"trace line missing or bad field: {e}") from e
    return str(obj.get("peer", "")), sample


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(trace: Trace, path: Path) -> None:
    lines = [sample_to_json(s, trace.peer) for s in trace.samples]
    atomic_write_text(Path(path), "\n".join(lines) + ("\n" if lines else ""))


def read_trace(path: Path) -> Trace:
    peer = ""
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                peer_i, sample = sample_from_json(line)
            except TraceError as e:
                raise TraceError(f"{path}:{lineno}: {e}") from e
            peer = peer_i or peer
            samples.append(sample)
    return Trace(peer=peer or Path(path).stem, samples=tuple(samples))


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path: Path, manifest: dict) -> None:
    atomic_write_text(Path(path), json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_csv_rows(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    lines = [",".join(str(x) for x in header)]
    lines.extend(",".join(str(x) for x in row) for row in rows)
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
