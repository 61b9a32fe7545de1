"""Masking-symbol side-channel simulator.

Ground-truth key presses are latched to the next display refresh tick and
then sampled at the next camera frame tick, which is where the observable
appearance times, and their quantization error, come from. An optional
additive detection delay stands in for downstream extraction jitter.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ._kernels import quantize_times
from .observations import ObservationSequence

log = logging.getLogger(__name__)

# A latency that quantization or noise collapsed to zero (two symbols on
# the same frame) is reported as this floor instead of dropping the entry.
MIN_LATENCY_MS = 1.0


def _period_ms(rate_hz: float) -> float:
    return 0.0 if math.isinf(rate_hz) else 1000.0 / rate_hz


@dataclass(frozen=True)
class ChannelConfig:
    """Display/camera channel; rates in Hz, phases and noise in ms.

    An infinite rate disables that quantization stage. Phases shift the
    tick grids and must lie within one period.
    """

    refresh_hz: float = 60.0
    camera_fps: float = 120.0
    refresh_phase_ms: float = 0.0
    frame_phase_ms: float = 0.0
    detection_noise_ms: float = 0.0

    def __post_init__(self) -> None:
        if not self.refresh_hz > 0:
            raise ValueError("refresh_hz must be positive")
        if not self.camera_fps > 0:
            raise ValueError("camera_fps must be positive")
        if self.detection_noise_ms < 0:
            raise ValueError("detection_noise_ms must be non-negative")
        for phase, period, name in (
            (self.refresh_phase_ms, self.refresh_period_ms, "refresh_phase_ms"),
            (self.frame_phase_ms, self.frame_period_ms, "frame_phase_ms"),
        ):
            if period == 0.0:
                if phase != 0.0:
                    raise ValueError(f"{name} must be 0 for an infinite rate")
            elif not 0 <= phase < period:
                raise ValueError(f"{name} must lie within one period")

    @property
    def refresh_period_ms(self) -> float:
        return _period_ms(self.refresh_hz)

    @property
    def frame_period_ms(self) -> float:
        return _period_ms(self.camera_fps)


@dataclass(frozen=True)
class GroundTruthEntry:
    """Millisecond key-press instants for one secret entry."""

    press_times: Tuple[float, ...]
    entry_id: str = ""

    def __post_init__(self) -> None:
        if len(self.press_times) < 2:
            raise ValueError("an entry needs at least 2 presses")
        diffs = np.diff(self.press_times)
        if len(diffs) and diffs.min() <= 0:
            raise ValueError("press times must be strictly increasing")

    @property
    def latencies(self) -> np.ndarray:
        return np.diff(self.press_times)


def observe(truth: GroundTruthEntry, cfg: ChannelConfig, seed: int = 0) -> ObservationSequence:
    """Observed latency sequence for one entry; deterministic in its inputs."""
    times = np.asarray(truth.press_times, dtype=np.float64)
    observed = quantize_times(
        times,
        cfg.refresh_phase_ms,
        cfg.refresh_period_ms,
        cfg.frame_phase_ms,
        cfg.frame_period_ms,
    )
    if cfg.detection_noise_ms > 0:
        rng = np.random.default_rng(seed)
        observed = observed + rng.uniform(0.0, cfg.detection_noise_ms, times.size)
    latencies = np.diff(observed)
    clamped = bool((latencies <= 0).any())
    latencies = np.where(latencies <= 0, MIN_LATENCY_MS, latencies)
    return ObservationSequence(
        tuple(float(v) for v in latencies), truth.entry_id, clamped
    )


def simulate_entries(
    truths: Sequence[GroundTruthEntry],
    cfg: ChannelConfig,
    seed: int = 0,
    *,
    random_phases: bool = True,
) -> List[Tuple[GroundTruthEntry, ObservationSequence]]:
    """Observe each entry, by default with fresh uniform phases per entry.

    Random phases model a camera and display that are not synchronized
    with the typing; pass random_phases=False to reuse the config phases.
    """
    rng = np.random.default_rng(seed)
    out = []
    for truth in truths:
        entry_cfg = cfg
        if random_phases:
            rp, fp = cfg.refresh_period_ms, cfg.frame_period_ms
            entry_cfg = replace(
                cfg,
                refresh_phase_ms=float(rng.uniform(0, rp)) if rp else 0.0,
                frame_phase_ms=float(rng.uniform(0, fp)) if fp else 0.0,
            )
        entry_seed = int(rng.integers(0, 2**63 - 1))
        out.append((truth, observe(truth, entry_cfg, entry_seed)))
    return out


@dataclass(frozen=True)
class ErrorStats:
    """Observed-vs-true latency discrepancy summary."""

    mean_abs_ms: float
    stdev_ms: float
    frac_under_10ms: float
    frac_under_20ms: float
    n_latencies: int


def stats_from_pairs(
    pairs: Sequence[Tuple[GroundTruthEntry, ObservationSequence]],
) -> ErrorStats:
    errors = np.concatenate(
        [np.abs(np.asarray(obs.latencies) - truth.latencies) for truth, obs in pairs]
    )
    return ErrorStats(
        float(errors.mean()),
        float(errors.std(ddof=1)) if errors.size > 1 else 0.0,
        float((errors < 10.0).mean()),
        float((errors < 20.0).mean()),
        int(errors.size),
    )


def error_stats(
    truths: Sequence[GroundTruthEntry],
    cfg: ChannelConfig,
    seed: int = 0,
    n_entries: int | None = None,
) -> ErrorStats:
    """Latency error statistics over simulated entries with random phases.

    Cycles through `truths` until n_entries observations have been made
    (defaults to one per ground-truth entry).
    """
    if not truths:
        raise ValueError("no ground-truth entries")
    if n_entries is None:
        n_entries = len(truths)
    if n_entries < 1:
        raise ValueError("n_entries must be >= 1")
    selected = [truths[i % len(truths)] for i in range(n_entries)]
    return stats_from_pairs(simulate_entries(selected, cfg, seed, random_phases=True))


def ingest_timestamp_log(path: str | Path) -> List[ObservationSequence]:
    """Read appearance-time logs (`entry_id,event_index,appearance_ms`).

    Entries whose times decrease, or whose indices are not dense from 0,
    are rejected with a diagnostic; zero gaps (two symbols on one frame)
    are floored to the minimum latency. An empty file yields an empty list.
    """
    grouped: Dict[str, List[Tuple[int, float]]] = {}
    order: List[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            entry_id, index, stamp = row
            if entry_id not in grouped:
                grouped[entry_id] = []
                order.append(entry_id)
            grouped[entry_id].append((int(index), float(stamp)))

    out = []
    for entry_id in order:
        items = sorted(grouped[entry_id])
        if [i for i, _ in items] != list(range(len(items))):
            log.warning("rejecting entry %r: event indices not dense from 0", entry_id)
            continue
        times = np.array([t for _, t in items])
        diffs = np.diff(times)
        if diffs.size == 0:
            log.warning("rejecting entry %r: fewer than 2 events", entry_id)
            continue
        if diffs.min() < 0:
            log.warning("rejecting entry %r: appearance times decrease", entry_id)
            continue
        clamped = bool((diffs <= 0).any())
        diffs = np.where(diffs <= 0, MIN_LATENCY_MS, diffs)
        out.append(
            ObservationSequence(tuple(float(v) for v in diffs), entry_id, clamped)
        )
    return out


def load_ground_truth_csv(path: str | Path) -> List[GroundTruthEntry]:
    """Read press-time logs with the same 3-column layout as timestamp logs."""
    grouped: Dict[str, List[Tuple[int, float]]] = {}
    order: List[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            entry_id, index, stamp = row
            if entry_id not in grouped:
                grouped[entry_id] = []
                order.append(entry_id)
            grouped[entry_id].append((int(index), float(stamp)))
    out = []
    for entry_id in order:
        items = sorted(grouped[entry_id])
        if [i for i, _ in items] != list(range(len(items))):
            raise ValueError(f"{path}: entry {entry_id!r} has non-dense indices")
        out.append(
            GroundTruthEntry(tuple(t for _, t in items), entry_id)
        )
    return out
