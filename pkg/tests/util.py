"""Hand-built traces and stub models shared across test modules."""

from __future__ import annotations

import numpy as np

from speedtrim.core import SNAPSHOT_FIELDS, Snapshot, Trace
from speedtrim.gbdt import GbdtModel, GbdtParams
from speedtrim.mlp import MlpModel, MlpParams
from speedtrim.traceio import CLASSIFIER_ARITY, REGRESSOR_ARITY


def make_trace(t_us, bytes_acked, *, id="t", duration_us=None, rtt_us=20000,
               cwnd_bytes=100000, bytes_in_flight=50000, retrans=0, dup_acks=0,
               pipe_full=0):
    """Trace from explicit timestamp/byte arrays; other columns constant
    unless an array is given."""
    t_us = np.asarray(t_us, dtype=np.int64)
    n = len(t_us)

    def col(v):
        arr = np.asarray(v, dtype=np.int64)
        return arr if arr.ndim else np.full(n, arr)

    cols = {
        "t_us": t_us,
        "bytes_acked": col(bytes_acked),
        "cwnd_bytes": col(cwnd_bytes),
        "bytes_in_flight": col(bytes_in_flight),
        "rtt_us": col(rtt_us),
        "retrans": col(retrans),
        "dup_acks": col(dup_acks),
        "pipe_full": col(pipe_full),
    }
    if duration_us is None:
        duration_us = int(t_us[-1])
    return Trace(id, duration_us, cols)


def constant_rate_trace(rate_mbps: float, duration_s: float = 10.0,
                        snap_ms: float = 10.0, **kw) -> Trace:
    """Exactly constant throughput: bytes = rate * t / 8 at every snapshot."""
    n = int(round(duration_s * 1000 / snap_ms))
    t_us = (np.arange(n + 1) * snap_ms * 1000).astype(np.int64)
    bytes_acked = (rate_mbps * t_us / 8.0).astype(np.int64)
    return make_trace(t_us, bytes_acked, **kw)


def rate_profile_trace(rates_mbps, seg_s: float, snap_ms: float = 10.0, **kw) -> Trace:
    """Piecewise-constant rate: one segment of seg_s seconds per entry."""
    per_seg = int(round(seg_s * 1000 / snap_ms))
    step_us = snap_ms * 1000.0
    incs = []
    for r in rates_mbps:
        incs.extend([r * step_us / 8.0] * per_seg)
    bytes_acked = np.concatenate([[0.0], np.cumsum(incs)]).astype(np.int64)
    t_us = (np.arange(len(bytes_acked)) * step_us).astype(np.int64)
    return make_trace(t_us, bytes_acked, **kw)


def snapshot(t_us, bytes_acked, **kw) -> Snapshot:
    defaults = dict(cwnd_bytes=100000, bytes_in_flight=50000, rtt_us=20000,
                    retrans=0, dup_acks=0, pipe_full=0)
    defaults.update(kw)
    return Snapshot(t_us=t_us, bytes_acked=bytes_acked, **defaults)


def trace_snapshot_dicts(trace: Trace) -> list[dict]:
    return [
        {name: int(getattr(trace, name)[i]) for name in SNAPSHOT_FIELDS}
        for i in range(len(trace))
    ]


def constant_regressor(value: float, n_features: int = REGRESSOR_ARITY) -> GbdtModel:
    """Zero-tree model: predicts `value` for any input (base only)."""
    return GbdtModel(value, [], GbdtParams(), n_features, [])


def constant_classifier(p_stop: float, n_features: int = CLASSIFIER_ARITY) -> MlpModel:
    """Single-layer stub whose output sigmoid is pinned near p_stop."""
    logit = np.log(p_stop / (1.0 - p_stop)) if 0 < p_stop < 1 else (
        50.0 if p_stop >= 1 else -50.0)
    weights = [(np.zeros((n_features, 1)), np.array([logit]))]
    params = MlpParams(layers=(n_features, 1))
    return MlpModel(weights, np.zeros(n_features), np.ones(n_features), params, [])
