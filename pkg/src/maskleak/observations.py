"""Observation containers and the CSV formats shared across the pipeline.

Latency logs carry one row per inter-keystroke interval:
    entry_id,position,latency_ms
Training sample files carry one row per observed interval:
    label,latency_ms[,direction]
where the optional direction tag can be folded into the label for
distribution reports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple


@dataclass(frozen=True)
class ObservationSequence:
    """Ordered inter-keystroke latencies (ms) from one secret entry."""

    latencies: Tuple[float, ...]
    entry_id: str = ""
    clamped: bool = False

    def __post_init__(self) -> None:
        if any(v <= 0 for v in self.latencies):
            raise ValueError("latencies must be positive")

    def __len__(self) -> int:
        return len(self.latencies)

    def __iter__(self) -> Iterator[float]:
        return iter(self.latencies)


def as_latencies(obs: object) -> Tuple[float, ...]:
    """Accept an observation container or any iterable of positive ms values."""
    lat = getattr(obs, "latencies", obs)
    out = tuple(float(v) for v in lat)  # type: ignore[union-attr]
    if any(v <= 0 for v in out):
        raise ValueError("latencies must be positive")
    return out


def _read_rows(path: str | Path, n_fields: int) -> List[List[str]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != n_fields:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_fields} fields, got {len(row)}"
                )
            rows.append(row)
    return rows


def load_latency_log(path: str | Path) -> List[ObservationSequence]:
    """Read a latency log; positions of each entry must be dense from 0."""
    grouped: Dict[str, List[Tuple[int, float]]] = {}
    order: List[str] = []
    for entry_id, pos, lat in _read_rows(path, 3):
        if entry_id not in grouped:
            grouped[entry_id] = []
            order.append(entry_id)
        grouped[entry_id].append((int(pos), float(lat)))
    out = []
    for entry_id in order:
        items = sorted(grouped[entry_id])
        if [p for p, _ in items] != list(range(len(items))):
            raise ValueError(f"{path}: entry {entry_id!r} has non-dense positions")
        out.append(ObservationSequence(tuple(v for _, v in items), entry_id))
    return out


def write_latency_log(path: str | Path, sequences: Iterable[ObservationSequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["entry_id", "position", "latency_ms"])
        for seq in sequences:
            for pos, lat in enumerate(seq.latencies):
                writer.writerow([seq.entry_id, pos, f"{lat:.12g}"])


def load_samples_csv(
    path: str | Path, split_direction: bool = False
) -> Dict[str, List[float]]:
    """Read training samples grouped by label.

    With split_direction, a third column becomes part of the label
    ("One" plus "up" reads as "One/up"); otherwise it is ignored.
    """
    samples: Dict[str, List[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty samples file")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 2 or 3 fields")
            label = row[0]
            if split_direction and len(row) == 3 and row[2]:
                label = f"{label}/{row[2]}"
            samples.setdefault(label, []).append(float(row[1]))
    if not samples:
        raise ValueError(f"{path}: no sample rows")
    return samples


def load_truth_csv(path: str | Path) -> Dict[str, str]:
    """Read ground-truth secrets: entry_id,secret."""
    truths: Dict[str, str] = {}
    for entry_id, secret in _read_rows(path, 2):
        if entry_id in truths:
            raise ValueError(f"{path}: duplicate entry {entry_id!r}")
        truths[entry_id] = secret
    return truths
