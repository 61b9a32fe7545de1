"""Dictionary ranking from per-digraph latency observations.

Any ranker that turns one latency into a confidence-ordered digraph list
can drive the attack; the built-in one ranks digraphs by gamma posterior.
Each candidate password accumulates a penalty equal to the sum of its
digraphs' ranks across positions, and the dictionary is sorted by
ascending penalty.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    runtime_checkable,
)

import numpy as np

from . import _kernels
from .observations import as_latencies
from .timing import TimingModel, posterior

TRAINING_DIGRAPH = re.compile(r"^[a-z0-9]{2}$")

UNDERSAMPLE_CAP = 1000
MIN_DIGRAPH_COUNT = 100


@dataclass(frozen=True)
class PasswordObservation:
    """Inter-keystroke latencies from one password entry."""

    latencies: Tuple[float, ...]
    recording_id: str = ""

    def __post_init__(self) -> None:
        if any(v <= 0 for v in self.latencies):
            raise ValueError("latencies must be positive")

    def __len__(self) -> int:
        return len(self.latencies)


@dataclass(frozen=True)
class Dictionary:
    """Password dictionary with leak frequencies."""

    entries: Tuple[Tuple[str, int], ...]

    def __post_init__(self) -> None:
        seen = set()
        for pw, count in self.entries:
            if count < 1:
                raise ValueError(f"count for {pw!r} must be >= 1")
            if pw in seen:
                raise ValueError(f"duplicate password {pw!r}")
            seen.add(pw)

    def __len__(self) -> int:
        return len(self.entries)

    def counts(self) -> Dict[str, int]:
        return dict(self.entries)

    def by_frequency(self) -> List[Tuple[str, int]]:
        """Entries in descending count order, ties lexicographic."""
        return sorted(self.entries, key=lambda e: (-e[1], e[0]))

    def filter_length(self, length: int) -> "Dictionary":
        return Dictionary(tuple(e for e in self.entries if len(e[0]) == length))

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        """Read `password<TAB>count` lines."""
        entries = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected password<TAB>count")
            entries.append((parts[0], int(parts[1])))
        return cls(tuple(entries))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(f"{pw}\t{count}\n" for pw, count in self.entries)
        )


@dataclass(frozen=True)
class DigraphRanking:
    """Confidence-ordered digraphs for one latency observation.

    Tied confidences share a competition rank (1 + number of strictly
    higher confidences), so a ranker with no information assigns every
    digraph rank 1.
    """

    entries: Tuple[Tuple[str, float], ...]
    _ranks: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("empty ranking")
        confs = [c for _, c in self.entries]
        if any(confs[i] < confs[i + 1] for i in range(len(confs) - 1)):
            raise ValueError("confidences must be non-increasing")
        if sum(confs) > 1.0 + 1e-9:
            raise ValueError("confidences sum above 1")
        ranks: Dict[str, int] = {}
        current = 1
        for i, (digraph, conf) in enumerate(self.entries):
            if digraph in ranks:
                raise ValueError(f"duplicate digraph {digraph!r}")
            if i > 0 and conf != self.entries[i - 1][1]:
                current = i + 1
            ranks[digraph] = current
        object.__setattr__(self, "_ranks", ranks)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(d for d, _ in self.entries)

    def rank_of(self, digraph: str) -> Optional[int]:
        return self._ranks.get(digraph)


DigraphRanker = Callable[[float], DigraphRanking]


@runtime_checkable
class WholePasswordRanker(Protocol):
    """Contract for learners that score whole candidate strings at once.

    Implementations consume the full latency sequence of an entry and
    return candidates with non-increasing confidence; no learner is built
    in, this exists so such models can replace the per-digraph path
    without touching the scoring code.
    """

    def rank_candidates(
        self, latencies: Sequence[float], candidates: Sequence[str]
    ) -> List[Tuple[str, float]]: ...


class GammaDigraphRanker:
    """Reference ranker: gamma posterior over the model's digraph labels."""

    def __init__(self, model: TimingModel, prior_mode: str = "fitted"):
        bad = [l for l in model.labels if not TRAINING_DIGRAPH.match(l)]
        if bad:
            raise ValueError(f"model is not a digraph model, has labels {bad[:5]}")
        self.model = model
        self.prior_mode = prior_mode

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.model.labels

    def __call__(self, latency_ms: float) -> DigraphRanking:
        return DigraphRanking(tuple(posterior(self.model, latency_ms, self.prior_mode)))


def rank_digraphs(
    latency_ms: float, model: TimingModel, prior_mode: str = "fitted"
) -> DigraphRanking:
    """Rank the model's digraphs by posterior at one observed latency."""
    return GammaDigraphRanker(model, prior_mode)(latency_ms)


def prepare_training(
    raw: Mapping[str, Sequence[float]],
    *,
    max_per_digraph: int = UNDERSAMPLE_CAP,
    min_count: int = MIN_DIGRAPH_COUNT,
    seed: int = 0,
) -> Dict[str, List[float]]:
    """Balance population digraph samples before fitting.

    Keeps lowercase-alphanumeric digraphs only, drops those with fewer
    than min_count samples, and under-samples those above max_per_digraph
    to a seeded random subset (original order preserved).
    """
    rng = np.random.default_rng(seed)
    out: Dict[str, List[float]] = {}
    for label in sorted(raw):
        if not TRAINING_DIGRAPH.match(label):
            continue
        vals = list(raw[label])
        if len(vals) < min_count:
            continue
        if len(vals) > max_per_digraph:
            idx = sorted(rng.choice(len(vals), size=max_per_digraph, replace=False))
            vals = [vals[i] for i in idx]
        out[label] = vals
    if not out:
        raise ValueError("no digraph survived training preparation")
    return out


def position_rankings(obs: object, ranker: DigraphRanker) -> List[DigraphRanking]:
    """One ranking per digraph position of an observation."""
    return [ranker(latency) for latency in as_latencies(obs)]


def penalty_from_rankings(password: str, rankings: Sequence[DigraphRanking]) -> int:
    """Sum of the password's digraph ranks; unknown digraphs cost worst+1."""
    if len(password) != len(rankings) + 1:
        raise ValueError(
            f"password length {len(password)} does not match "
            f"{len(rankings)} latencies"
        )
    total = 0
    for pos, ranking in enumerate(rankings):
        rank = ranking.rank_of(password[pos : pos + 2])
        total += rank if rank is not None else len(ranking) + 1
    return total


def penalty_score(password: str, obs: object, ranker: DigraphRanker) -> int:
    """Penalty of one password against one observation; lower is better."""
    return penalty_from_rankings(password, position_rankings(obs, ranker))


@dataclass(frozen=True)
class ScoredPassword:
    password: str
    penalty: int
    count: int


def rank_dictionary_from_rankings(
    dictionary: Dictionary, rankings: Sequence[DigraphRanking]
) -> List[ScoredPassword]:
    """Rank dictionary entries of the matching length by ascending penalty.

    Ties break by descending leak frequency, then lexicographically.
    """
    length = len(rankings) + 1
    filtered = dictionary.filter_length(length)
    if not filtered.entries:
        raise ValueError(f"dictionary has no password of length {length}")

    label_index: Dict[str, int] = {}
    union: List[str] = []
    for ranking in rankings:
        for label in ranking.labels:
            if label not in label_index:
                label_index[label] = len(union)
                union.append(label)
    n_labels = len(union)

    ranks = np.zeros((len(rankings), n_labels), dtype=np.int64)
    oov = np.zeros(len(rankings), dtype=np.int64)
    for q, ranking in enumerate(rankings):
        oov[q] = len(ranking) + 1
        for j, label in enumerate(union):
            r = ranking.rank_of(label)
            ranks[q, j] = r if r is not None else oov[q]

    idx = np.full((len(filtered.entries), len(rankings)), -1, dtype=np.int64)
    for p, (pw, _) in enumerate(filtered.entries):
        for q in range(len(rankings)):
            idx[p, q] = label_index.get(pw[q : q + 2], -1)

    totals = _kernels.penalty_totals(idx, ranks, oov)
    scored = [
        ScoredPassword(pw, int(totals[p]), count)
        for p, (pw, count) in enumerate(filtered.entries)
    ]
    scored.sort(key=lambda s: (s.penalty, -s.count, s.password))
    return scored


def rank_dictionary(
    dictionary: Dictionary, obs: object, ranker: DigraphRanker
) -> List[ScoredPassword]:
    """Rank dictionary passwords against one observation."""
    return rank_dictionary_from_rankings(dictionary, position_rankings(obs, ranker))


def fuse_recordings(
    obs_list: Sequence[object], ranker: DigraphRanker
) -> List[DigraphRanking]:
    """Average per-position ranker confidences over several recordings.

    All recordings must have the same length; the averaged confidences are
    re-ranked per position (ties in label order).
    """
    if len(obs_list) < 2:
        raise ValueError("fusion needs at least 2 recordings")
    lats = [as_latencies(o) for o in obs_list]
    if len({len(l) for l in lats}) != 1:
        raise ValueError("recordings have mismatched lengths")
    fused: List[DigraphRanking] = []
    for pos in range(len(lats[0])):
        per_rec = [ranker(l[pos]) for l in lats]
        labels = set(per_rec[0].labels)
        if any(set(r.labels) != labels for r in per_rec[1:]):
            raise ValueError("rankings disagree on label sets")
        sums: Dict[str, float] = {l: 0.0 for l in sorted(labels)}
        for r in per_rec:
            for digraph, conf in r.entries:
                sums[digraph] += conf
        averaged = [(d, s / len(per_rec)) for d, s in sums.items()]
        averaged.sort(key=lambda e: (-e[1], e[0]))
        fused.append(DigraphRanking(tuple(averaged)))
    return fused


def frequency_baseline_order(dictionary: Dictionary) -> List[str]:
    """Passwords in the order the frequency-only adversary guesses them."""
    return [pw for pw, _ in dictionary.by_frequency()]


def baseline_expected_attempts(dictionary: Dictionary, password: str) -> float:
    """Expected guess count of the frequency adversary with random ties.

    Equals the number of strictly more frequent entries plus half of one
    more than the tie-group size.
    """
    counts = dictionary.counts()
    if password not in counts:
        raise ValueError(f"password {password!r} not in dictionary")
    c = counts[password]
    greater = sum(1 for v in counts.values() if v > c)
    ties = sum(1 for v in counts.values() if v == c)
    return greater + (ties + 1) / 2


def write_password_guesses(
    path: str | Path, scored: Iterable[ScoredPassword]
) -> None:
    """Write `rank,password,penalty` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "password", "penalty"])
        for rank, s in enumerate(scored, 1):
            writer.writerow([rank, s.password, s.penalty])
