"""Seeded synthetic speed-test traces with known ground truth.

The congestion model is phenomenological: an exponential ramp toward a
capacity, AR(1) multiplicative noise, burst/dropout events, RTT queue
inflation proportional to utilization, and a BBR-style plateau detector
driving the pipe-full counter.  It exists to exercise stopping logic at
desk scale, not to model packet dynamics.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import Trace
from . import traceio

# Target ranges for ground-truth throughput per speed tier and for base RTT
# per bin (kept off the exact edges so noise rarely pushes a trace out).
TIER_Y_RANGES = ((2.0, 24.0), (26.5, 98.0), (103.0, 197.0), (206.0, 394.0), (410.0, 950.0))
RTT_BIN_RANGES = ((3.0, 23.5), (24.5, 51.0), (53.0, 113.0), (117.0, 230.0), (238.0, 450.0))

MSS_BYTES = 1448


@dataclass(frozen=True)
class GenSpec:
    """Parameters of a synthetic corpus; the seed fully determines output."""

    n_traces: int = 100
    seed: int = 0
    mode: str = "balanced"                      # "balanced" | "natural"
    tier_weights: tuple = (0.30, 0.25, 0.20, 0.15, 0.10)
    rtt_bin_weights: tuple = (0.06, 0.12, 0.22, 0.28, 0.32)
    duration_s: float = 10.0
    snapshot_ms: float = 10.0
    ramp_tau_range: tuple = (0.05, 1.0)
    ar_coeff: float = 0.7
    noise_rel_std: float = 0.12
    burst_rate: float = 0.05                    # events per second
    dropout_rate: float = 0.06
    transient_spread: float = 0.45              # slow-start over/undershoot amplitude
    transient_span: tuple = (0.25, 0.55)        # seconds of startup transient
    plateau_spread: float = 0.12                # settling-phase rate offset magnitude
    plateau_span: tuple = (1.0, 2.0)            # seconds of settling phase
    capacity_range: tuple = (1.0, 1000.0)
    timestamp_jitter_ms: float = 2.0
    hard_fraction: float = 0.0                  # fraction of traces forced hard
    difficulty_coupling: float = 1.0            # noise scaling vs (low tier, high RTT)
    preset: str = "default"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        d = dict(d)
        for key in ("tier_weights", "rtt_bin_weights", "ramp_tau_range", "capacity_range",
                    "transient_span", "plateau_span"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# Low throughput, high RTT, persistent variability: the slice of tests that
# resists early termination.
HARD_OVERRIDES = dict(
    tier_weights=(0.6, 0.4, 0.0, 0.0, 0.0),
    rtt_bin_weights=(0.0, 0.0, 0.2, 0.3, 0.5),
    ramp_tau_range=(1.0, 3.0),
    ar_coeff=0.95,
    noise_rel_std=0.45,
    dropout_rate=0.4,
    burst_rate=0.2,
    transient_spread=0.9,
    transient_span=(0.5, 3.0),
    difficulty_coupling=0.0,
)

PRESETS = {
    "default": GenSpec(),
    "clean": GenSpec(ar_coeff=0.0, noise_rel_std=0.0, burst_rate=0.0, dropout_rate=0.0,
                     transient_spread=0.0, difficulty_coupling=0.0, preset="clean"),
    "hard": GenSpec(mode="natural", preset="hard", **HARD_OVERRIDES),
}


def preset_spec(name: str, **overrides) -> GenSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r} (have {sorted(PRESETS)})")
    return replace(PRESETS[name], **overrides)


def ramp_mean_fraction(tau_s: float, duration_s: float) -> float:
    """Mean of (1 - e^{-t/tau}) over [0, duration]."""
    if tau_s <= 0:
        return 1.0
    return 1.0 - (tau_s / duration_s) * (1.0 - math.exp(-duration_s / tau_s))


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _event_multiplier(rng: np.random.Generator, t_mid_s: np.ndarray, rate_per_s: float,
                      duration_s: float, mult: float, mean_len_s: float) -> np.ndarray:
    out = np.ones_like(t_mid_s)
    n_events = rng.poisson(rate_per_s * duration_s)
    for _ in range(n_events):
        start = rng.uniform(0.0, duration_s)
        length = float(np.clip(rng.exponential(mean_len_s), 0.05, 1.0))
        out[(t_mid_s >= start) & (t_mid_s < start + length)] *= mult
    return out


def _pipe_full_counter(t_us: np.ndarray, inst_rate: np.ndarray, round_us: float) -> np.ndarray:
    """Cumulative BBR-style pipe-full events per snapshot.

    A round spans one base RTT.  When the windowed max delivery rate grows
    by less than 25% for three consecutive rounds the plateau is declared
    and every further plateau round registers one event.
    """
    counts = np.zeros(len(t_us), dtype=np.int64)
    max_bw = 0.0
    plateau_rounds = 0
    total = 0
    round_end = round_us
    round_max = 0.0
    j = 0
    for i in range(1, len(t_us)):
        round_max = max(round_max, inst_rate[i - 1])
        if t_us[i] >= round_end:
            if max_bw > 0 and round_max < 1.25 * max_bw:
                plateau_rounds += 1
            else:
                plateau_rounds = 0
            if plateau_rounds >= 3:
                total += 1
            max_bw = max(max_bw, round_max)
            round_max = 0.0
            round_end += round_us
        counts[i] = total
    return counts


def _simulate(rng: np.random.Generator, spec: GenSpec, trace_id: str,
              capacity: float, tau_s: float, base_rtt_ms: float) -> Trace:
    duration_us = int(round(spec.duration_s * 1e6))
    step_us = spec.snapshot_ms * 1000.0
    n_steps = int(round(duration_us / step_us))

    t_us = (np.arange(n_steps + 1) * step_us).astype(np.float64)
    if spec.timestamp_jitter_ms > 0:
        jitter = rng.uniform(-spec.timestamp_jitter_ms, spec.timestamp_jitter_ms,
                             size=n_steps + 1) * 1000.0
        jitter[0] = 0.0
        jitter[-1] = 0.0
        t_us = t_us + jitter
    t_us = np.round(t_us).astype(np.int64)
    t_us[-1] = duration_us

    t_mid_s = (t_us[:-1] + t_us[1:]) / 2.0 / 1e6
    ramp = 1.0 - np.exp(-t_mid_s / tau_s) if tau_s > 0 else np.ones_like(t_mid_s)

    # Startup transient in two phases: a short slow-start over/undershoot,
    # then a settling plateau offset from the sustained rate. Both offsets
    # carry a random sign, so early windows cannot resolve the final rate.
    shape = np.ones_like(t_mid_s)
    if spec.transient_spread > 0:
        t1 = rng.uniform(*spec.transient_span)
        amp1 = rng.uniform(max(0.05, spec.transient_spread - 0.05),
                           spec.transient_spread)
        level1 = max(1.0 + (-amp1 if rng.random() < 0.5 else amp1), 0.1)
        t2 = t1 + rng.uniform(*spec.plateau_span)
        amp2 = rng.uniform(max(0.02, spec.plateau_spread - 0.10),
                           spec.plateau_spread + 0.10)
        level2 = max(1.0 + (-amp2 if rng.random() < 0.5 else amp2), 0.1)
        shape = np.where(t_mid_s < t1, level1,
                         np.where(t_mid_s < t2, level2, 1.0))

    if spec.noise_rel_std > 0 and spec.ar_coeff < 1.0:
        eps = rng.standard_normal(n_steps)
        noise = np.empty(n_steps)
        scale = spec.noise_rel_std * math.sqrt(1.0 - spec.ar_coeff ** 2)
        acc = 0.0
        for i in range(n_steps):
            acc = spec.ar_coeff * acc + scale * eps[i]
            noise[i] = acc
    else:
        noise = np.zeros(n_steps)

    mult = np.clip(1.0 + noise, 0.05, None)
    mult *= _event_multiplier(rng, t_mid_s, spec.dropout_rate, spec.duration_s,
                              mult=0.05, mean_len_s=0.25)
    mult *= _event_multiplier(rng, t_mid_s, spec.burst_rate, spec.duration_s,
                              mult=1.8, mean_len_s=0.1)
    inst_rate = capacity * ramp * shape * mult               # Mbps per interval

    dt_us = np.diff(t_us).astype(np.float64)
    byte_increments = inst_rate * dt_us / 8.0
    bytes_acked = np.zeros(n_steps + 1)
    bytes_acked[1:] = np.cumsum(byte_increments)
    bytes_acked = np.floor(bytes_acked).astype(np.int64)

    base_rtt_us = base_rtt_ms * 1000.0
    util = np.concatenate([[0.0], inst_rate / capacity])
    # Queueing inflation with a per-trace coefficient and per-sample jitter,
    # so RTT growth tracks load qualitatively without fixing the scale.
    queue_coeff = rng.uniform(0.05, 0.50)
    rtt_noise = rng.lognormal(0.0, 0.08, size=n_steps + 1)
    rtt_us = np.round(base_rtt_us * (1.0 + queue_coeff * util) * rtt_noise)
    rtt_us = np.maximum(rtt_us.astype(np.int64), 1)

    rate_per_snap = np.concatenate([[0.0], inst_rate])
    cwnd_bytes = np.maximum(
        np.round(rate_per_snap * rtt_us / 8.0).astype(np.int64), MSS_BYTES)
    bif = np.round(cwnd_bytes * rng.uniform(0.75, 1.0, size=n_steps + 1)).astype(np.int64)
    bif[0] = 0

    dropout_active = mult < 0.5
    retx_inc = rng.poisson(0.02, size=n_steps) + rng.poisson(2.0, size=n_steps) * dropout_active
    retrans = np.zeros(n_steps + 1, dtype=np.int64)
    retrans[1:] = np.cumsum(retx_inc)
    dup_inc = 3 * retx_inc + rng.poisson(0.05, size=n_steps)
    dup_acks = np.zeros(n_steps + 1, dtype=np.int64)
    dup_acks[1:] = np.cumsum(dup_inc)

    pipe_full = _pipe_full_counter(t_us, inst_rate, base_rtt_us)

    return Trace(trace_id, duration_us, {
        "t_us": t_us,
        "bytes_acked": bytes_acked,
        "cwnd_bytes": cwnd_bytes,
        "bytes_in_flight": bif,
        "rtt_us": rtt_us,
        "retrans": retrans,
        "dup_acks": dup_acks,
        "pipe_full": pipe_full,
    })


MAX_ATTEMPTS = 60


def gen_trace(spec: GenSpec, index: int) -> tuple[Trace, str]:
    """Generate trace `index` of the corpus; returns (trace, preset label).

    Each index derives an independent RNG stream from (seed, index); the
    generator resamples (bumping a sub-key) until the realized summary
    lands in the targeted speed tier and RTT bin, so stratified corpora
    have exact per-tier counts.
    """
    pick_rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index, 0xA5)))
    eff = spec
    label = spec.preset
    if spec.hard_fraction > 0 and pick_rng.random() < spec.hard_fraction:
        eff = replace(spec, **HARD_OVERRIDES)
        label = "hard"

    if eff.mode == "balanced":
        target_tier = index % 5
    elif eff.mode == "natural":
        target_tier = int(pick_rng.choice(5, p=np.asarray(eff.tier_weights) / sum(eff.tier_weights)))
    else:
        raise ValueError(f"unknown mode {eff.mode!r}")
    target_bin = int(pick_rng.choice(5, p=np.asarray(eff.rtt_bin_weights) / sum(eff.rtt_bin_weights)))

    # Slow links and high-RTT paths are noisier and less stationary, so
    # their early windows are less predictive of the final rate.
    d = eff.difficulty_coupling * max((4 - target_tier) / 4.0, target_bin / 4.0)
    if d > 0:
        plo, phi = eff.plateau_span
        eff = replace(eff,
                      noise_rel_std=min(0.45, eff.noise_rel_std * (1.0 + 2.5 * d)),
                      ar_coeff=min(0.95, eff.ar_coeff + 0.28 * d),
                      dropout_rate=min(0.30, eff.dropout_rate * (1.0 + 3.0 * d)),
                      burst_rate=min(0.15, eff.burst_rate * (1.0 + 2.0 * d)),
                      plateau_spread=min(0.36, eff.plateau_spread + 0.24 * d),
                      plateau_span=(plo + 1.5 * d, phi + 1.5 * d))

    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index, attempt)))
        tau = rng.uniform(*eff.ramp_tau_range)
        y_target = _log_uniform(rng, *TIER_Y_RANGES[target_tier])
        frac = ramp_mean_fraction(tau, eff.duration_s)
        capacity = float(np.clip(y_target / frac, *eff.capacity_range))
        base_rtt = _log_uniform(rng, *RTT_BIN_RANGES[target_bin])
        trace = _simulate(rng, eff, f"t{index:05d}", capacity, tau, base_rtt)
        s = trace.summarize()
        if s.speed_tier == target_tier and s.rtt_bin == target_bin:
            return trace, label
    raise RuntimeError(
        f"trace {index}: no draw landed in tier {target_tier}/bin {target_bin} "
        f"after {MAX_ATTEMPTS} attempts")


def gen_corpus(spec: GenSpec, out_dir: str) -> "traceio.Corpus":
    """Generate the full corpus under out_dir with index and manifest."""
    os.makedirs(out_dir, exist_ok=True)

    def produce():
        for index in range(spec.n_traces):
            yield gen_trace(spec, index)

    corpus = traceio.write_corpus(out_dir, produce())
    with open(os.path.join(out_dir, "genspec.json"), "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return corpus
