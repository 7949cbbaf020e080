"""Shared domain types and unit conventions.

Units: raw snapshot timestamps are microseconds, API-level times are
milliseconds, throughput is Mbps everywhere.  The identity
``Mbps == 8 * bytes / elapsed_us`` is used throughout (bits per
microsecond equals megabits per second).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Stratification edges (half-open, lower-inclusive intervals).
SPEED_TIER_EDGES_MBPS = (25.0, 100.0, 200.0, 400.0)
RTT_BIN_EDGES_MS = (24.0, 52.0, 115.0, 234.0)

# Feature frame layout (13 channels per 100 ms window).
F_TPUT = 0          # mean instantaneous throughput, Mbps
F_CUM_AVG = 1       # cumulative average throughput since start, Mbps
F_PIPE_FULL = 2     # cumulative pipe-full count (max within window)
F_CWND_MEAN = 3
F_CWND_STD = 4
F_BIF_MEAN = 5
F_BIF_STD = 6
F_RTT_MEAN = 7      # ms
F_RTT_STD = 8
F_RETX_MEAN = 9     # per-snapshot deltas within window
F_RETX_STD = 10
F_DUPACK_MEAN = 11
F_DUPACK_STD = 12
N_FEATURES = 13

STD_CHANNELS = (F_CWND_STD, F_BIF_STD, F_RTT_STD, F_RETX_STD, F_DUPACK_STD)

SNAPSHOT_FIELDS = (
    "t_us",
    "bytes_acked",
    "cwnd_bytes",
    "bytes_in_flight",
    "rtt_us",
    "retrans",
    "dup_acks",
    "pipe_full",
)

CUMULATIVE_FIELDS = ("bytes_acked", "retrans", "dup_acks", "pipe_full")


class ValidationError(ValueError):
    """A trace or snapshot violates a structural invariant."""


@dataclass(frozen=True)
class Snapshot:
    """One raw transport-telemetry sample (tcp_info style)."""

    t_us: int
    bytes_acked: int
    cwnd_bytes: int
    bytes_in_flight: int
    rtt_us: int
    retrans: int
    dup_acks: int
    pipe_full: int

    def validate(self) -> None:
        if self.rtt_us <= 0:
            raise ValidationError(f"rtt_us must be > 0, got {self.rtt_us}")
        if self.bytes_in_flight < 0:
            raise ValidationError("bytes_in_flight must be >= 0")
        if self.t_us < 0:
            raise ValidationError("t_us must be >= 0")


class Trace:
    """An ordered sequence of snapshots with a nominal duration.

    Snapshots are stored columnar (one numpy array per field) for fast
    resampling; all arrays are read-only after construction.
    """

    def __init__(self, id: str, duration_us: int, columns: dict[str, np.ndarray]):
        self.id = id
        self.duration_us = int(duration_us)
        for name in SNAPSHOT_FIELDS:
            if name not in columns:
                raise ValidationError(f"missing snapshot column {name!r}")
            arr = np.asarray(columns[name], dtype=np.int64)
            arr.setflags(write=False)
            setattr(self, name, arr)
        self._validate()

    @classmethod
    def from_snapshots(cls, id: str, duration_us: int, snapshots: list[Snapshot]) -> "Trace":
        cols = {
            name: np.array([getattr(s, name) for s in snapshots], dtype=np.int64)
            for name in SNAPSHOT_FIELDS
        }
        return cls(id, duration_us, cols)

    def _validate(self) -> None:
        n = len(self.t_us)
        if n < 2:
            raise ValidationError(f"trace {self.id!r}: needs >= 2 snapshots, got {n}")
        for name in SNAPSHOT_FIELDS:
            if len(getattr(self, name)) != n:
                raise ValidationError(f"trace {self.id!r}: ragged column {name!r}")
        if np.any(np.diff(self.t_us) <= 0):
            raise ValidationError(f"trace {self.id!r}: t_us not strictly increasing")
        if self.t_us[-1] > self.duration_us:
            raise ValidationError(
                f"trace {self.id!r}: last t_us {self.t_us[-1]} exceeds duration {self.duration_us}"
            )
        for name in CUMULATIVE_FIELDS:
            if np.any(np.diff(getattr(self, name)) < 0):
                raise ValidationError(f"trace {self.id!r}: {name} decreases")
        if np.any(self.rtt_us <= 0):
            raise ValidationError(f"trace {self.id!r}: rtt_us must be positive")
        if np.any(self.bytes_in_flight < 0):
            raise ValidationError(f"trace {self.id!r}: negative bytes_in_flight")

    def __len__(self) -> int:
        return len(self.t_us)

    @property
    def snapshots(self) -> list[Snapshot]:
        return [
            Snapshot(*(int(getattr(self, name)[i]) for name in SNAPSHOT_FIELDS))
            for i in range(len(self))
        ]

    def summarize(self) -> "TraceSummary":
        """Ground-truth summary over the full snapshot sequence.

        The final throughput is the mean over the observed span: 8 * final
        bytes_acked / last timestamp.
        """
        total_bytes = int(self.bytes_acked[-1])
        t_last_us = int(self.t_us[-1])
        y_true = 8.0 * total_bytes / t_last_us
        min_rtt_ms = float(self.rtt_us.min()) / 1000.0
        tier, rtt_bin = assign_bins(y_true, min_rtt_ms)
        return TraceSummary(
            id=self.id,
            y_true_mbps=y_true,
            total_bytes=total_bytes,
            duration_ms=t_last_us / 1000.0,
            min_rtt_ms=min_rtt_ms,
            speed_tier=tier,
            rtt_bin=rtt_bin,
        )


@dataclass(frozen=True)
class TraceSummary:
    """Per-test ground truth used for labeling and evaluation."""

    id: str
    y_true_mbps: float
    total_bytes: int
    duration_ms: float
    min_rtt_ms: float
    speed_tier: int
    rtt_bin: int


@dataclass(frozen=True)
class WindowSeries:
    """100 ms-resampled feature view of a trace.

    ``frames`` has shape (n_windows, 13); ``filled[i]`` marks windows that
    had no snapshots and were carried forward from the previous frame.
    """

    window_ms: int
    frames: np.ndarray
    filled: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != N_FEATURES:
            raise ValidationError(f"frames must be (n, {N_FEATURES}), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("frames contain non-finite entries")
        filled = self.filled
        if filled is None:
            filled = np.zeros(len(frames), dtype=bool)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "filled", np.asarray(filled, dtype=bool))
        frames.setflags(write=False)
        self.filled.setflags(write=False)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration_ms(self) -> int:
        return len(self.frames) * self.window_ms


class Verdict(enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


# Enumerated stop causes.
REASON_CLASSIFIER = "classifier"
REASON_STATIC = "static"
REASON_BBR = "bbr"
REASON_TSH = "tsh"
REASON_CIS = "cis"
REASON_FALLBACK_TIMEOUT = "fallback-timeout"
REASON_END_OF_TRACE = "end-of-trace"


@dataclass(frozen=True)
class StopDecision:
    verdict: Verdict
    reason: str = ""

    @property
    def stopping(self) -> bool:
        return self.verdict is Verdict.STOP


CONTINUE = StopDecision(Verdict.CONTINUE)


@dataclass(frozen=True)
class TerminationOutcome:
    """What a stopping policy did to one test."""

    stop_time_ms: float
    bytes_at_stop: int
    estimate_mbps: float
    rel_error: float | None
    ran_to_completion: bool
    reason: str = ""


def rel_error(t_true: float, t_early: float) -> float:
    """Relative estimation error |t_true - t_early| / t_true."""
    if t_true <= 0:
        raise ValueError(f"true throughput must be positive, got {t_true}")
    return abs(t_true - t_early) / t_true


def assign_bins(throughput_mbps: float, min_rtt_ms: float) -> tuple[int, int]:
    """Map (throughput, RTT) to (speed tier, RTT bin) indices in 0..4.

    Intervals are half-open and lower-inclusive: a value exactly on an edge
    belongs to the higher bin.
    """
    if throughput_mbps < 0:
        raise ValueError("throughput must be nonnegative")
    if min_rtt_ms <= 0:
        raise ValueError("RTT must be positive")
    tier = int(np.searchsorted(SPEED_TIER_EDGES_MBPS, throughput_mbps, side="right"))
    rtt_bin = int(np.searchsorted(RTT_BIN_EDGES_MS, min_rtt_ms, side="right"))
    return tier, rtt_bin
