"""ATM keypad geometry: key coordinates and inter-key distance classes.

The 10-key pad is a grid with keys 1-9 in three rows and 0 centered below
the 8. Every ordered keypair falls into exactly one of eight Euclidean
distance classes, which is what makes inter-keystroke latencies informative
about which keys were pressed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Set, Tuple


class DistanceClass(enum.Enum):
    """Distance equivalence classes of ordered keypairs, in canonical order."""

    ZERO = "Zero"
    ONE = "One"
    TWO = "Two"
    THREE = "Three"
    DIAG1 = "Diag1"
    DIAG2 = "Diag2"
    DOGLEG = "Dogleg"
    LONG_DOGLEG = "LongDogleg"

    @property
    def weight_sq(self) -> int:
        """Squared Euclidean distance in key-pitch units (exact integer)."""
        return _WEIGHT_SQ[self]

    @property
    def weight(self) -> float:
        """Euclidean distance in key-pitch units."""
        return math.sqrt(_WEIGHT_SQ[self])


# Squared distances are compared as integers; weights {0,1,2,3,sqrt2,sqrt8,
# sqrt5,sqrt10} are never compared via floating point.
_WEIGHT_SQ: Dict[DistanceClass, int] = {
    DistanceClass.ZERO: 0,
    DistanceClass.ONE: 1,
    DistanceClass.TWO: 4,
    DistanceClass.THREE: 9,
    DistanceClass.DIAG1: 2,
    DistanceClass.DIAG2: 8,
    DistanceClass.DOGLEG: 5,
    DistanceClass.LONG_DOGLEG: 10,
}

_SQ_TO_CLASS: Dict[int, DistanceClass] = {sq: c for c, sq in _WEIGHT_SQ.items()}

CLASS_ORDER: Tuple[DistanceClass, ...] = tuple(DistanceClass)

Triplet = Tuple[DistanceClass, DistanceClass, DistanceClass]

_STANDARD_COORDS: Dict[int, Tuple[int, int]] = {
    1: (0, 0), 2: (1, 0), 3: (2, 0),
    4: (0, 1), 5: (1, 1), 6: (2, 1),
    7: (0, 2), 8: (1, 2), 9: (2, 2),
    0: (1, 3),
}


@dataclass(frozen=True)
class Keypad:
    """The standard 10-key pad as integer grid coordinates (col, row)."""

    coords: Dict[int, Tuple[int, int]] = field(
        default_factory=lambda: dict(_STANDARD_COORDS)
    )

    def __post_init__(self) -> None:
        if set(self.coords) != set(range(10)):
            raise ValueError("keypad must map exactly the digits 0-9")
        if len(set(self.coords.values())) != 10:
            raise ValueError("keypad coordinates must be distinct")
        if self.coords != _STANDARD_COORDS:
            raise ValueError("only the standard ATM layout is supported")

    def classify_pair(self, a: int, b: int) -> DistanceClass:
        """Distance class of the ordered keypair (a, b); symmetric in (a, b)."""
        try:
            xa, ya = self.coords[a]
            xb, yb = self.coords[b]
        except (KeyError, TypeError):
            raise ValueError(f"keys must be digits 0-9, got ({a!r}, {b!r})") from None
        return _SQ_TO_CLASS[(xa - xb) ** 2 + (ya - yb) ** 2]

    def pairs_in_class(self, c: DistanceClass) -> Set[Tuple[int, int]]:
        """All ordered keypairs (a, b) whose distance class is c."""
        if not isinstance(c, DistanceClass):
            raise ValueError(f"not a distance class: {c!r}")
        return {
            (a, b)
            for a in range(10)
            for b in range(10)
            if self.classify_pair(a, b) is c
        }

    def pin_to_triplet(self, pin: str) -> Triplet:
        """Distance classes of the three consecutive digraphs of a 4-digit PIN."""
        if not (isinstance(pin, str) and len(pin) == 4 and pin.isdigit()):
            raise ValueError(f"PIN must be a 4-digit string, got {pin!r}")
        d = [int(ch) for ch in pin]
        return (
            self.classify_pair(d[0], d[1]),
            self.classify_pair(d[1], d[2]),
            self.classify_pair(d[2], d[3]),
        )


STANDARD = Keypad()


def classify_pair(a: int, b: int) -> DistanceClass:
    return STANDARD.classify_pair(a, b)


def pairs_in_class(c: DistanceClass) -> Set[Tuple[int, int]]:
    return STANDARD.pairs_in_class(c)


def pin_to_triplet(pin: str) -> Triplet:
    return STANDARD.pin_to_triplet(pin)


def pair_count_priors() -> Dict[str, float]:
    """Prior probability of each class under uniform random ordered keypairs.

    There are 100 ordered pairs in total, so the prior of a class is its
    pair count divided by 100.
    """
    return {c.value: len(STANDARD.pairs_in_class(c)) / 100.0 for c in CLASS_ORDER}
