"""Trace ingestion, 100 ms resampling, and model-ready feature views.

The on-disk trace format is UTF-8 JSON Lines: an optional header object
``{"id", "duration_us"}`` followed by one object per snapshot with keys
t_us, bytes_acked, cwnd_bytes, bytes_in_flight, rtt_us, retrans,
dup_acks, pipe_full.  A corpus is a directory of ``*.jsonl`` files plus
``index.csv`` (file,id) and optionally ``manifest.csv`` with per-trace
summaries.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import (
    CUMULATIVE_FIELDS,
    F_CUM_AVG,
    F_PIPE_FULL,
    F_TPUT,
    N_FEATURES,
    SNAPSHOT_FIELDS,
    STD_CHANNELS,
    Trace,
    TraceSummary,
    ValidationError,
    WindowSeries,
)

WINDOW_MS = 100
STRIDE_MS = 500
REGRESSOR_WINDOWS = 20          # most recent 2 s
CLASSIFIER_WINDOWS = 100        # full 10 s history
REGRESSOR_ARITY = REGRESSOR_WINDOWS * N_FEATURES + 1
CLASSIFIER_ARITY = CLASSIFIER_WINDOWS * N_FEATURES + 1

MANIFEST_COLUMNS = ("id", "y_true_mbps", "total_bytes", "min_rtt_ms", "tier", "rtt_bin", "preset")


class ParseError(ValueError):
    """Malformed trace file; message carries the offending line number."""


@dataclass(frozen=True)
class RegressorInput:
    """Flat 20-window x 13-feature view ending at t_ms, plus elapsed time.

    When fewer than 20 windows exist, the missing leading slots duplicate
    the earliest available frame.
    """

    features: np.ndarray     # shape (261,): 260 window entries + elapsed_ms
    t_ms: int
    n_padded: int


@dataclass(frozen=True)
class ClassifierInput:
    """Zero-padded full-history view: 100 windows x 13 features + elapsed."""

    features: np.ndarray     # shape (1301,)
    mask: np.ndarray         # shape (100,), uint8; 1 iff window is within t_ms
    t_ms: int


def _repair_cumulative(values: np.ndarray, name: str, trace_label: str) -> np.ndarray:
    """Fix a single one-sample dip in a cumulative counter; reject worse."""
    drops = np.flatnonzero(np.diff(values) < 0) + 1
    if len(drops) == 0:
        return values
    i = int(drops[0])
    recovers = i + 1 < len(values) and values[i + 1] >= values[i - 1]
    if len(drops) > 1 or not recovers:
        raise ValidationError(f"trace {trace_label!r}: {name} decreases (not a 1-sample glitch)")
    out = values.copy()
    out[i] = out[i - 1]
    return out


def parse_trace(stream, format: str = "jsonl", default_id: str = "trace") -> Trace:
    """Parse a JSON-Lines telemetry stream into a validated Trace."""
    if format != "jsonl":
        raise ValueError(f"unknown trace format {format!r}")
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, "rb") as fh:
            return parse_trace(fh, format=format, default_id=default_id)
    if isinstance(stream, io.TextIOBase):
        lines = stream.read().splitlines()
    else:
        lines = stream.read().decode("utf-8").splitlines()

    trace_id = default_id
    duration_us = None
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if lineno == 1 and "t_us" not in obj:
            trace_id = str(obj.get("id", default_id))
            if "duration_us" in obj:
                duration_us = int(obj["duration_us"])
            continue
        missing = [k for k in SNAPSHOT_FIELDS if k not in obj]
        if missing:
            raise ParseError(f"line {lineno}: missing keys {missing}")
        try:
            rows.append(tuple(int(obj[k]) for k in SNAPSHOT_FIELDS))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: non-integer field ({exc})") from exc

    if not rows:
        raise ParseError("no snapshots")
    data = np.array(rows, dtype=np.int64)
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ValidationError(f"trace {trace_id!r}: nonmonotonic timestamps")

    cols = {name: data[:, i].copy() for i, name in enumerate(SNAPSHOT_FIELDS)}
    for name in CUMULATIVE_FIELDS:
        cols[name] = _repair_cumulative(cols[name], name, trace_id)
    if duration_us is None:
        duration_us = int(cols["t_us"][-1])
    return Trace(trace_id, duration_us, cols)


def dump_trace(trace: Trace) -> bytes:
    """Serialize a Trace to its JSON-Lines wire form (round-trip exact)."""
    out = [json.dumps({"id": trace.id, "duration_us": trace.duration_us})]
    for i in range(len(trace)):
        obj = {name: int(getattr(trace, name)[i]) for name in SNAPSHOT_FIELDS}
        out.append(json.dumps(obj))
    return ("\n".join(out) + "\n").encode("utf-8")


def resample(trace: Trace, window_ms: int = WINDOW_MS) -> WindowSeries:
    """Resample a trace to fixed windows of per-channel statistics.

    Statistics cover snapshots whose t_us falls in [w*W, (w+1)*W); the
    final snapshot of the trace, when it lands exactly on the trailing
    boundary, folds into the last window so a 10 s trace yields exactly
    100 frames.  Windows without snapshots carry the previous frame
    forward with zeroed std channels.
    """
    win_us = window_ms * 1000
    t = trace.t_us
    n_windows = max(1, math.ceil(t[-1] / win_us))
    w_of = np.minimum(t // win_us, n_windows - 1).astype(np.int64)

    frames = np.zeros((n_windows, N_FEATURES), dtype=np.float64)
    counts = np.bincount(w_of, minlength=n_windows)

    def window_stats(values: np.ndarray, members: np.ndarray, minlength: int):
        cnt = np.bincount(members, minlength=minlength).astype(np.float64)
        s = np.bincount(members, weights=values, minlength=minlength)
        sq = np.bincount(members, weights=values * values, minlength=minlength)
        safe = np.maximum(cnt, 1.0)
        mean = s / safe
        var = np.maximum(sq / safe - mean * mean, 0.0)
        return mean, np.sqrt(var), cnt

    # Level channels: every snapshot contributes at its own window.
    for mean_ch, std_ch, col in (
        (3, 4, trace.cwnd_bytes),
        (5, 6, trace.bytes_in_flight),
    ):
        mean, std, _ = window_stats(col.astype(np.float64), w_of, n_windows)
        frames[:, mean_ch] = mean
        frames[:, std_ch] = std
    rtt_mean, rtt_std, _ = window_stats(trace.rtt_us / 1000.0, w_of, n_windows)
    frames[:, 7] = rtt_mean
    frames[:, 8] = rtt_std

    # Delta channels: per-snapshot differences, attributed to the window of
    # the interval's endpoint.
    if len(t) > 1:
        dt = np.diff(t).astype(np.float64)
        inst = 8.0 * np.diff(trace.bytes_acked) / dt
        members = w_of[1:]
        mean, _, _ = window_stats(inst, members, n_windows)
        frames[:, F_TPUT] = mean
        for mean_ch, std_ch, col in (
            (9, 10, trace.retrans),
            (11, 12, trace.dup_acks),
        ):
            d = np.diff(col).astype(np.float64)
            mean, std, _ = window_stats(d, members, n_windows)
            frames[:, mean_ch] = mean
            frames[:, std_ch] = std

    # Cumulative-average channel: bytes-so-far over elapsed time, taken at
    # the last snapshot (with t > 0) in each window.
    last_idx = np.full(n_windows, -1, dtype=np.int64)
    positive = t > 0
    np.maximum.at(last_idx, w_of[positive], np.flatnonzero(positive))
    has_last = last_idx >= 0
    frames[has_last, F_CUM_AVG] = (
        8.0 * trace.bytes_acked[last_idx[has_last]] / t[last_idx[has_last]]
    )

    # Pipe-full channel: max cumulative count observed within the window.
    pf = np.zeros(n_windows, dtype=np.float64)
    np.maximum.at(pf, w_of, trace.pipe_full.astype(np.float64))
    frames[:, F_PIPE_FULL] = pf

    # Carry-forward for empty windows (and the cum-avg of windows whose only
    # snapshot sits at t == 0).
    filled = counts == 0
    std_cols = list(STD_CHANNELS)
    prev = None
    for w in range(n_windows):
        if filled[w]:
            if prev is not None:
                frames[w] = frames[prev]
                frames[w, std_cols] = 0.0
            continue
        if prev is not None:
            if not has_last[w]:
                frames[w, F_CUM_AVG] = frames[prev, F_CUM_AVG]
            # cumulative counter never drops across a carried gap
            frames[w, F_PIPE_FULL] = max(frames[w, F_PIPE_FULL], frames[prev, F_PIPE_FULL])
        prev = w

    return WindowSeries(window_ms=window_ms, frames=frames, filled=filled)


def regressor_input(ws: WindowSeries, t_ms: int) -> RegressorInput:
    """Most recent 2 s of frames ending at t_ms, front-padded when short."""
    if t_ms < ws.window_ms:
        raise ValueError(f"t_ms must be >= {ws.window_ms}, got {t_ms}")
    if t_ms % ws.window_ms != 0:
        raise ValueError(f"t_ms must be a multiple of {ws.window_ms}, got {t_ms}")
    end = t_ms // ws.window_ms
    if end > len(ws):
        raise ValueError(f"t_ms={t_ms} beyond end of series ({len(ws)} windows)")
    start = end - REGRESSOR_WINDOWS
    n_padded = max(0, -start)
    block = ws.frames[max(start, 0):end]
    if n_padded:
        pad = np.repeat(block[:1], n_padded, axis=0)
        block = np.concatenate([pad, block], axis=0)
    features = np.empty(REGRESSOR_ARITY, dtype=np.float64)
    features[:-1] = block.ravel()
    features[-1] = float(t_ms)
    return RegressorInput(features=features, t_ms=t_ms, n_padded=n_padded)


def classifier_input(ws: WindowSeries, t_ms: int) -> ClassifierInput:
    """Full feature history up to t_ms, zero-padded to 100 windows."""
    if t_ms < ws.window_ms:
        raise ValueError(f"t_ms must be >= {ws.window_ms}, got {t_ms}")
    if t_ms % ws.window_ms != 0:
        raise ValueError(f"t_ms must be a multiple of {ws.window_ms}, got {t_ms}")
    end = t_ms // ws.window_ms
    if end > len(ws):
        raise ValueError(f"t_ms={t_ms} beyond end of series ({len(ws)} windows)")
    end = min(end, CLASSIFIER_WINDOWS)
    block = np.zeros((CLASSIFIER_WINDOWS, N_FEATURES), dtype=np.float64)
    block[:end] = ws.frames[:end]
    mask = np.zeros(CLASSIFIER_WINDOWS, dtype=np.uint8)
    mask[:end] = 1
    features = np.empty(CLASSIFIER_ARITY, dtype=np.float64)
    features[:-1] = block.ravel()
    features[-1] = float(t_ms)
    return ClassifierInput(features=features, mask=mask, t_ms=t_ms)


# ---------------------------------------------------------------------------
# Corpus handling


class Corpus:
    """A directory of trace files plus an index and per-trace summaries."""

    def __init__(self, root: str, entries: list[tuple[str, str]],
                 summaries: dict[str, TraceSummary] | None = None,
                 presets: dict[str, str] | None = None):
        self.root = root
        self.entries = entries          # (filename, trace id), index order
        self.ids = [tid for _, tid in entries]
        self._file_of = {tid: fn for fn, tid in entries}
        self._summaries = summaries or {}
        self.presets = presets or {}

    def __len__(self) -> int:
        return len(self.entries)

    def load(self, trace_id: str) -> Trace:
        path = os.path.join(self.root, self._file_of[trace_id])
        return parse_trace(path, default_id=trace_id)

    def traces(self):
        for tid in self.ids:
            yield self.load(tid)

    def summary(self, trace_id: str) -> TraceSummary:
        if trace_id not in self._summaries:
            self._summaries[trace_id] = self.load(trace_id).summarize()
        return self._summaries[trace_id]

    @property
    def summaries(self) -> dict[str, TraceSummary]:
        for tid in self.ids:
            self.summary(tid)
        return self._summaries


def read_corpus(root: str) -> Corpus:
    index_path = os.path.join(root, "index.csv")
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"no index.csv under {root}")
    with open(index_path, newline="") as fh:
        reader = csv.DictReader(fh)
        entries = [(row["file"], row["id"]) for row in reader]
    summaries: dict[str, TraceSummary] = {}
    presets: dict[str, str] = {}
    manifest = os.path.join(root, "manifest.csv")
    if os.path.exists(manifest):
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                tid = row["id"]
                summaries[tid] = TraceSummary(
                    id=tid,
                    y_true_mbps=float(row["y_true_mbps"]),
                    total_bytes=int(row["total_bytes"]),
                    duration_ms=float(row.get("duration_ms") or 0.0),
                    min_rtt_ms=float(row["min_rtt_ms"]),
                    speed_tier=int(row["tier"]),
                    rtt_bin=int(row["rtt_bin"]),
                )
                presets[tid] = row.get("preset", "")
    return Corpus(root, entries, summaries, presets)


def write_corpus(root: str, traces_and_presets, duration_check: bool = True) -> Corpus:
    """Write traces plus index.csv and manifest.csv under root.

    ``traces_and_presets`` yields (Trace, preset_name) pairs.
    """
    os.makedirs(root, exist_ok=True)
    entries = []
    summaries = {}
    presets = {}
    for trace, preset in traces_and_presets:
        filename = f"{trace.id}.jsonl"
        with open(os.path.join(root, filename), "wb") as fh:
            fh.write(dump_trace(trace))
        entries.append((filename, trace.id))
        summaries[trace.id] = trace.summarize()
        presets[trace.id] = preset
    with open(os.path.join(root, "index.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "id"])
        writer.writerows(entries)
    write_manifest(os.path.join(root, "manifest.csv"), summaries, presets,
                   order=[tid for _, tid in entries])
    return Corpus(root, entries, summaries, presets)


def write_manifest(path: str, summaries: dict[str, TraceSummary],
                   presets: dict[str, str], order: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS + ("duration_ms",))
        for tid in order:
            s = summaries[tid]
            writer.writerow([
                tid,
                repr(s.y_true_mbps),
                s.total_bytes,
                repr(s.min_rtt_ms),
                s.speed_tier,
                s.rtt_bin,
                presets.get(tid, ""),
                repr(s.duration_ms),
            ])
