"""PIN recovery from three inter-keystroke latencies.

A 4-digit PIN induces a triplet of keypad distance classes. The attack
scores all 512 triplets by the posterior of the observed latencies, then
expands each triplet into its candidate PINs by chaining same-weight key
pairs on shared keys. Exact-distance and random-guess baselines quantify
the headroom.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.special import logsumexp

from .keypad import CLASS_ORDER, DistanceClass, Triplet, pairs_in_class
from .observations import as_latencies
from .timing import TimingModel, log_posterior_matrix

TOTAL_PINS = 10_000

_CLASS_INDEX = {c: i for i, c in enumerate(CLASS_ORDER)}


def all_triplets() -> List[Triplet]:
    """All 512 class triplets in canonical class order."""
    return [(a, b, c) for a in CLASS_ORDER for b in CLASS_ORDER for c in CLASS_ORDER]


@lru_cache(maxsize=1)
def _adjacency() -> Dict[DistanceClass, Dict[int, Tuple[int, ...]]]:
    adj: Dict[DistanceClass, Dict[int, Tuple[int, ...]]] = {}
    for c in CLASS_ORDER:
        nexts: Dict[int, List[int]] = {}
        for a, b in sorted(pairs_in_class(c)):
            nexts.setdefault(a, []).append(b)
        adj[c] = {a: tuple(bs) for a, bs in nexts.items()}
    return adj


def pins_for_triplet(triplet: Sequence[DistanceClass]) -> Set[str]:
    """All PINs whose consecutive digraphs realize the given classes.

    Built by chaining the per-class keypair subgraphs on their shared keys,
    so a pair contributes only when its first key equals the previous
    pair's second key.
    """
    c1, c2, c3 = triplet
    adj = _adjacency()
    a1, a2, a3 = adj[c1], adj[c2], adj[c3]
    pins = set()
    for d0, firsts in a1.items():
        for d1 in firsts:
            for d2 in a2.get(d1, ()):
                for d3 in a3.get(d2, ()):
                    pins.add(f"{d0}{d1}{d2}{d3}")
    return pins


@lru_cache(maxsize=512)
def _ordered_pins(triplet: Triplet) -> Tuple[str, ...]:
    return tuple(sorted(pins_for_triplet(triplet)))


def triplet_census() -> Dict[Triplet, int]:
    """PIN count for every one of the 512 triplets, in canonical order."""
    return {t: len(_ordered_pins(t)) for t in all_triplets()}


@lru_cache(maxsize=1)
def _census_sizes() -> np.ndarray:
    return np.array(list(triplet_census().values()), dtype=np.int64)


def exact_distance_guess_curve(attempts: int) -> float:
    """Expected fraction of uniform PINs found within `attempts` guesses
    when every distance is known exactly and in-triplet order is uniform."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    sizes = _census_sizes()
    return float(np.minimum(attempts, sizes).sum() / TOTAL_PINS)


def random_guess_curve(attempts: int) -> float:
    """Fraction of uniform PINs found within `attempts` random guesses
    without replacement."""
    if not 1 <= attempts <= TOTAL_PINS:
        raise ValueError("attempts must be in 1..10000")
    return attempts / TOTAL_PINS


@dataclass(frozen=True)
class PinGuess:
    rank: int
    pin: str
    triplet: Triplet
    log_prob: float


def _triplet_seed(seed: int, triplet: Triplet) -> np.random.SeedSequence:
    i1, i2, i3 = (_CLASS_INDEX[c] for c in triplet)
    return np.random.SeedSequence((seed, i1, i2, i3))


class PinGuessList:
    """Lazily enumerated PIN guesses, best triplet first.

    Iteration never materializes all 10,000 candidates unless consumed;
    rank_of() locates a PIN by combining triplet offsets with its position
    inside its own triplet.
    """

    def __init__(
        self,
        triplet_ranking: Sequence[Tuple[Triplet, float]],
        tie_policy: str = "lex",
        seed: Optional[int] = None,
    ):
        if tie_policy not in ("lex", "shuffle"):
            raise ValueError(f"tie_policy must be 'lex' or 'shuffle', got {tie_policy!r}")
        self.tie_policy = tie_policy
        self.seed = 0 if (seed is None and tie_policy == "shuffle") else seed
        self.triplet_ranking: Tuple[Tuple[Triplet, float], ...] = tuple(
            (t, lp) for t, lp in triplet_ranking if _ordered_pins(t)
        )
        self._offsets: Dict[Triplet, Tuple[int, float]] = {}
        total = 0
        for t, lp in self.triplet_ranking:
            self._offsets[t] = (total, lp)
            total += len(_ordered_pins(t))
        self._total = total

    def __len__(self) -> int:
        return self._total

    def _pins_of(self, triplet: Triplet) -> Tuple[str, ...]:
        pins = _ordered_pins(triplet)
        if self.tie_policy == "shuffle":
            rng = np.random.default_rng(_triplet_seed(self.seed, triplet))
            perm = rng.permutation(len(pins))
            pins = tuple(pins[i] for i in perm)
        return pins

    def __iter__(self) -> Iterator[PinGuess]:
        rank = 0
        for triplet, log_prob in self.triplet_ranking:
            for pin in self._pins_of(triplet):
                rank += 1
                yield PinGuess(rank, pin, triplet, log_prob)

    def top(self, k: int) -> List[PinGuess]:
        out = []
        for guess in self:
            if len(out) >= k:
                break
            out.append(guess)
        return out

    def rank_of(self, pin: str) -> int:
        """1-based position of a PIN in the full guess order."""
        from .keypad import pin_to_triplet

        triplet = pin_to_triplet(pin)
        if triplet not in self._offsets:
            raise ValueError(f"PIN {pin!r} is not reachable by this guess list")
        offset, _ = self._offsets[triplet]
        return offset + self._pins_of(triplet).index(pin) + 1

    def to_csv(self, path: str | Path, top: Optional[int] = None) -> None:
        """Write `rank,pin,triplet,log_prob` rows."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank", "pin", "triplet", "log_prob"])
            for guess in self:
                if top is not None and guess.rank > top:
                    break
                writer.writerow(
                    [
                        guess.rank,
                        guess.pin,
                        format_triplet(guess.triplet),
                        f"{guess.log_prob:.12g}",
                    ]
                )


def format_triplet(triplet: Triplet) -> str:
    return "-".join(c.value for c in triplet)


def parse_triplet(text: str) -> Triplet:
    parts = text.split("-")
    if len(parts) != 3:
        raise ValueError(f"expected three class names, got {text!r}")
    return tuple(DistanceClass(p) for p in parts)  # type: ignore[return-value]


def rank_pins(
    obs: object,
    model: TimingModel,
    *,
    prior_mode: str = "pair_count",
    tie_policy: str = "lex",
    seed: Optional[int] = None,
) -> PinGuessList:
    """Rank all reachable PINs for one 3-latency observation.

    Triplet probability is the product of the per-latency class posteriors,
    computed in log space; classes missing from the model contribute zero
    mass and sort last (deterministically) so the list still covers every
    PIN. Equal scores keep canonical triplet order; order inside a triplet
    follows tie_policy.
    """
    latencies = as_latencies(obs)
    if len(latencies) != 3:
        raise ValueError(f"PIN observations need exactly 3 latencies, got {len(latencies)}")
    unknown = [l for l in model.labels if l not in {c.value for c in CLASS_ORDER}]
    if unknown:
        raise ValueError(f"model labels are not distance classes: {unknown}")

    logpost = log_posterior_matrix(model, latencies, prior_mode)  # (3, n_labels)
    per_class = np.full((3, len(CLASS_ORDER)), -math.inf)
    for j, label in enumerate(model.labels):
        per_class[:, _CLASS_INDEX[DistanceClass(label)]] = logpost[:, j]

    scores = (
        per_class[0][:, None, None]
        + per_class[1][None, :, None]
        + per_class[2][None, None, :]
    ).reshape(-1)
    log_probs = scores - logsumexp(scores)
    order = np.argsort(-scores, kind="stable")

    triplets = all_triplets()
    ranking = [(triplets[i], float(log_probs[i])) for i in order]
    return PinGuessList(ranking, tie_policy=tie_policy, seed=seed)
