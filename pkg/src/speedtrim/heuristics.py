"""Baseline stopping rules: static byte cap, BBR pipe-full, TSH, CIS.

All rules except the static cap operate on the resampled window series
and fire at decision-stride boundaries (500 ms by default, configurable
down to 100 ms).  When a rule never fires, the test runs to completion
and its estimate is the full-run cumulative average, i.e. exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import F_CUM_AVG, F_PIPE_FULL, F_TPUT, Trace, WindowSeries

DEFAULT_STRIDE_MS = 500
TSH_DEFAULT_WINDOW_MS = 1000
# Fraction of samples the CIS crucial interval must cover.
CIS_COVERAGE = 0.8


@dataclass(frozen=True)
class HeuristicResult:
    stop_time_ms: float          # trace end when no early stop fired
    estimate_mbps: float
    stopped_early: bool
    cum_avg_mbps: float          # cumulative average at stop (== estimate except CIS)


def _full_run(ws: WindowSeries) -> HeuristicResult:
    y = float(ws.frames[-1, F_CUM_AVG])
    return HeuristicResult(ws.duration_ms, y, False, y)


def _stride_boundaries(ws: WindowSeries, stride_ms: int, first_ms: int | None = None):
    if stride_ms % ws.window_ms != 0:
        raise ValueError(f"stride {stride_ms} not a multiple of window {ws.window_ms}")
    start = first_ms if first_ms is not None else stride_ms
    return range(start, ws.duration_ms + 1, stride_ms)


def _cum_avg_at(ws: WindowSeries, t_ms: int) -> float:
    return float(ws.frames[t_ms // ws.window_ms - 1, F_CUM_AVG])


def stop_static(trace: Trace, cap_bytes: int) -> HeuristicResult:
    """Stop at the first snapshot delivering at least cap_bytes."""
    if cap_bytes <= 0:
        raise ValueError("cap_bytes must be positive")
    t_last = int(trace.t_us[-1])
    # require t > 0 so the cumulative average at the stop is well defined
    hits = np.flatnonzero((trace.bytes_acked >= cap_bytes) & (trace.t_us > 0))
    if len(hits) == 0:
        y = 8.0 * trace.bytes_acked[-1] / t_last
        return HeuristicResult(t_last / 1000.0, y, False, y)
    i = int(hits[0])
    t_us = int(trace.t_us[i])
    y = 8.0 * trace.bytes_acked[i] / t_us
    return HeuristicResult(t_us / 1000.0, y, t_us < t_last, y)


def stop_bbr(ws: WindowSeries, k: int, stride_ms: int = DEFAULT_STRIDE_MS) -> HeuristicResult:
    """Stop at the first stride with at least k cumulative pipe-full events."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pf = ws.frames[:, F_PIPE_FULL]
    for t_ms in _stride_boundaries(ws, stride_ms):
        end = t_ms // ws.window_ms
        if pf[:end].max() >= k and t_ms < ws.duration_ms:
            y = _cum_avg_at(ws, t_ms)
            return HeuristicResult(t_ms, y, True, y)
    return _full_run(ws)


def stop_tsh(ws: WindowSeries, tol_pct: float, stable_ms: int = TSH_DEFAULT_WINDOW_MS,
             stride_ms: int = DEFAULT_STRIDE_MS) -> HeuristicResult:
    """Stop once instantaneous throughput stays within tol of its running
    average for a trailing stability window."""
    if tol_pct <= 0:
        raise ValueError("tol_pct must be positive")
    if stable_ms % ws.window_ms != 0:
        raise ValueError("stable_ms must be a multiple of the window size")
    need = stable_ms // ws.window_ms
    inst = ws.frames[:, F_TPUT]
    avg = ws.frames[:, F_CUM_AVG]
    tol = tol_pct / 100.0
    for t_ms in _stride_boundaries(ws, stride_ms):
        end = t_ms // ws.window_ms
        if end < need:
            continue
        lo = end - need
        window_avg = avg[lo:end]
        if np.any(window_avg <= 0):
            continue
        dev = np.abs(inst[lo:end] - window_avg) / window_avg
        if np.all(dev <= tol) and t_ms < ws.duration_ms:
            y = _cum_avg_at(ws, t_ms)
            return HeuristicResult(t_ms, y, True, y)
    return _full_run(ws)


def crucial_interval(samples: np.ndarray, coverage: float = CIS_COVERAGE) -> tuple[float, float]:
    """Shortest interval containing at least `coverage` of the samples."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(s)
    if n == 0:
        raise ValueError("no samples")
    w = max(1, int(np.ceil(coverage * n)))
    if w >= n:
        return float(s[0]), float(s[-1])
    spans = s[w - 1:] - s[: n - w + 1]
    i = int(np.argmin(spans))
    return float(s[i]), float(s[i + w - 1])


def interval_similarity(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Jaccard similarity of two closed intervals; 1.0 when both degenerate."""
    lo = max(a[0], b[0])
    hi = min(a[1], b[1])
    inter = max(0.0, hi - lo)
    union = max(a[1], b[1]) - min(a[0], b[0])
    if union <= 0.0:
        # both intervals degenerate to the same point
        return 1.0
    return inter / union


def stop_cis(ws: WindowSeries, beta: float, stride_ms: int = DEFAULT_STRIDE_MS,
             coverage: float = CIS_COVERAGE) -> HeuristicResult:
    """Stop once consecutive crucial intervals are at least beta-similar.

    The reported estimate is the interval midpoint (the CIS-style
    aggregate); the cumulative average at the stop is recorded alongside.
    """
    if not (0.0 < beta <= 1.0):
        raise ValueError("beta must be in (0, 1]")
    inst = ws.frames[:, F_TPUT]
    prev_interval = None
    boundaries = list(_stride_boundaries(ws, stride_ms))
    for t_ms in boundaries:
        end = t_ms // ws.window_ms
        interval = crucial_interval(inst[:end], coverage)
        if prev_interval is not None and t_ms < ws.duration_ms:
            if interval_similarity(prev_interval, interval) >= beta:
                mid = 0.5 * (interval[0] + interval[1])
                return HeuristicResult(t_ms, mid, True, _cum_avg_at(ws, t_ms))
        prev_interval = interval
    return _full_run(ws)


def parse_size(text: str) -> int:
    """Parse sizes like 250MB, 1GB, 512KB, 1000B, or plain byte counts."""
    text = text.strip().upper()
    units = {"GB": 10 ** 9, "MB": 10 ** 6, "KB": 10 ** 3, "B": 1}
    for suffix, mult in units.items():
        if text.endswith(suffix):
            return int(float(text[: -len(suffix)]) * mult)
    return int(text)


def parse_heuristic_spec(text: str) -> tuple[str, dict]:
    """Parse CLI grammar like `static:cap=250MB` or `tsh:tol=25,window=1000`."""
    if ":" not in text:
        raise ValueError(f"bad heuristic spec {text!r} (expected name:key=value,...)")
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    kv = {}
    for part in rest.split(","):
        if not part.strip():
            continue
        key, _, value = part.partition("=")
        if not value:
            raise ValueError(f"bad parameter {part!r} in {text!r}")
        kv[key.strip().lower()] = value.strip()
    if name == "static":
        return name, {"cap_bytes": parse_size(kv["cap"])}
    if name == "bbr":
        return name, {"k": int(kv["k"])}
    if name == "tsh":
        params = {"tol_pct": float(kv["tol"])}
        if "window" in kv:
            params["stable_ms"] = int(kv["window"])
        return name, params
    if name == "cis":
        return name, {"beta": float(kv["beta"])}
    raise ValueError(f"unknown heuristic {name!r}")


def run_heuristic(name: str, trace: Trace, ws: WindowSeries, params: dict,
                  stride_ms: int = DEFAULT_STRIDE_MS) -> HeuristicResult:
    if name == "static":
        return stop_static(trace, **params)
    if name == "bbr":
        return stop_bbr(ws, stride_ms=stride_ms, **params)
    if name == "tsh":
        return stop_tsh(ws, stride_ms=stride_ms, **params)
    if name == "cis":
        return stop_cis(ws, stride_ms=stride_ms, **params)
    raise ValueError(f"unknown heuristic {name!r}")
