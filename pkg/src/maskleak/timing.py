"""Gamma latency models: per-label fits, priors, and posterior ranking.

Labels are either keypad distance-class names (PIN models) or two-character
digraphs (password models). Each label gets a gamma fit of its latency
distribution; queries are ranked by gamma likelihood times a prior.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, polygamma, psi

from . import _kernels
from .keypad import CLASS_ORDER, pair_count_priors

log = logging.getLogger(__name__)

PRIOR_MODES = ("fitted", "uniform", "pair_count")

# Ground-truth latencies are millisecond-quantized, so a label can be
# sampled with (near-)zero spread; fits fall back to this variance.
VARIANCE_FLOOR_MS2 = 1.0

DEFAULT_MIN_SAMPLES = 100

_CLASS_NAMES = tuple(c.value for c in CLASS_ORDER)


@dataclass(frozen=True)
class GammaParams:
    """Shape/scale parameterization; scale is in milliseconds."""

    shape: float
    scale: float

    def __post_init__(self) -> None:
        if not (self.shape > 0 and math.isfinite(self.shape)):
            raise ValueError(f"shape must be positive and finite, got {self.shape}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale


@dataclass(frozen=True)
class TimingModel:
    """Immutable per-label gamma fits plus priors and sample counts."""

    labels: Tuple[str, ...]
    params: Dict[str, GammaParams]
    priors: Dict[str, float]
    counts: Dict[str, int]
    dropped: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("model has no labels")
        if set(self.labels) != set(self.params):
            raise ValueError("labels and params disagree")
        total = sum(self.priors[l] for l in self.labels)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"priors sum to {total}, expected 1")

    @property
    def shape_vector(self) -> np.ndarray:
        cached = self.__dict__.get("_shape_vec")
        if cached is None:
            cached = np.array([self.params[l].shape for l in self.labels])
            self.__dict__["_shape_vec"] = cached
        return cached

    @property
    def scale_vector(self) -> np.ndarray:
        cached = self.__dict__.get("_scale_vec")
        if cached is None:
            cached = np.array([self.params[l].scale for l in self.labels])
            self.__dict__["_scale_vec"] = cached
        return cached

    def log_pdf_matrix(self, latencies: np.ndarray) -> np.ndarray:
        """Gamma log-density of each latency (rows) under each label (cols)."""
        x = np.ascontiguousarray(latencies, dtype=np.float64)
        return _kernels.gamma_logpdf(x, self.shape_vector, self.scale_vector)

    def save(self, path: str | Path) -> None:
        """Write one `label,shape,scale,prior,count` line per label."""
        lines = []
        for l in self.labels:
            p = self.params[l]
            lines.append(
                f"{l},{p.shape:.12g},{p.scale:.12g},"
                f"{self.priors[l]:.12g},{self.counts[l]}\n"
            )
        Path(path).write_text("".join(lines))

    @classmethod
    def load(cls, path: str | Path) -> "TimingModel":
        labels: List[str] = []
        params: Dict[str, GammaParams] = {}
        priors: Dict[str, float] = {}
        counts: Dict[str, int] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            label, shape, scale, prior, count = parts
            if label in params:
                raise ValueError(f"{path}:{lineno}: duplicate label {label!r}")
            labels.append(label)
            params[label] = GammaParams(float(shape), float(scale))
            priors[label] = float(prior)
            counts[label] = int(count)
        if not labels:
            raise ValueError(f"{path}: empty model file")
        return cls(tuple(labels), params, priors, counts)


def canonical_label_order(labels: Sequence[str]) -> Tuple[str, ...]:
    """Distance classes sort in class order, anything else lexicographically."""
    if set(labels) <= set(_CLASS_NAMES):
        return tuple(n for n in _CLASS_NAMES if n in set(labels))
    return tuple(sorted(labels))


def _fit_gamma(values: np.ndarray) -> GammaParams:
    """Gamma MLE: Newton iterations on the shape, moment-based start."""
    mean = float(values.mean())
    n = values.size
    var = float(values.var(ddof=1)) if n > 1 else 0.0
    if var < VARIANCE_FLOOR_MS2:
        var = VARIANCE_FLOOR_MS2
        return GammaParams(mean * mean / var, var / mean)
    s = math.log(mean) - float(np.mean(np.log(values)))
    if s <= 0:
        # numerically degenerate (all values nearly equal): method of moments
        return GammaParams(mean * mean / var, var / mean)
    k = mean * mean / var
    for _ in range(100):
        step = (math.log(k) - float(psi(k)) - s) / (1.0 / k - float(polygamma(1, k)))
        k_next = k - step
        if k_next <= 0:
            k_next = k / 2.0
        if abs(k_next - k) <= 1e-12 * k:
            k = k_next
            break
        k = k_next
    return GammaParams(k, mean / k)


def fit(
    samples: Mapping[str, Sequence[float]],
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> TimingModel:
    """Fit a gamma per label; labels with fewer than min_samples are dropped.

    Priors default to label frequency among the retained samples.
    """
    if not samples:
        raise ValueError("no training samples")
    min_samples = max(int(min_samples), 1)
    arrays: Dict[str, np.ndarray] = {}
    dropped: List[str] = []
    for label in canonical_label_order(list(samples)):
        vals = np.asarray(samples[label], dtype=np.float64)
        if vals.size and vals.min() <= 0:
            raise ValueError(f"label {label!r} has non-positive latencies")
        if vals.size < min_samples:
            dropped.append(label)
        else:
            arrays[label] = vals
    if not arrays:
        raise ValueError(f"no label has at least {min_samples} samples")
    if dropped:
        log.warning("dropped %d label(s) below %d samples: %s",
                    len(dropped), min_samples, ", ".join(dropped))
    labels = tuple(arrays)
    total = sum(a.size for a in arrays.values())
    params = {l: _fit_gamma(a) for l, a in arrays.items()}
    priors = {l: a.size / total for l, a in arrays.items()}
    counts = {l: int(a.size) for l, a in arrays.items()}
    return TimingModel(labels, params, priors, counts, tuple(dropped))


def _log_priors(model: TimingModel, prior_mode: str) -> np.ndarray:
    if prior_mode == "fitted":
        return np.log([model.priors[l] for l in model.labels])
    if prior_mode == "uniform":
        return np.zeros(len(model.labels))
    if prior_mode == "pair_count":
        fractions = pair_count_priors()
        try:
            return np.log([fractions[l] for l in model.labels])
        except KeyError as e:
            raise ValueError(
                f"pair_count priors need distance-class labels, got {e.args[0]!r}"
            ) from None
    raise ValueError(f"unknown prior mode {prior_mode!r}, expected one of {PRIOR_MODES}")


def log_posterior_matrix(
    model: TimingModel, latencies: Sequence[float], prior_mode: str = "fitted"
) -> np.ndarray:
    """Row-normalized log posterior over model labels for each latency."""
    x = np.asarray(latencies, dtype=np.float64)
    if x.size == 0 or x.min() <= 0:
        raise ValueError("latencies must be positive")
    logp = model.log_pdf_matrix(x) + _log_priors(model, prior_mode)
    return logp - logsumexp(logp, axis=1, keepdims=True)


def posterior(
    model: TimingModel, latency: float, prior_mode: str = "fitted"
) -> List[Tuple[str, float]]:
    """Labels ranked by posterior probability at one observed latency.

    Probabilities are normalized to sum to one; exact ties keep the model's
    label order.
    """
    logp = log_posterior_matrix(model, [float(latency)], prior_mode)[0]
    probs = np.exp(logp)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    return [(model.labels[i], float(probs[i])) for i in order]


@dataclass(frozen=True)
class LabelStats:
    label: str
    count: int
    mean_ms: float
    stdev_ms: float


@dataclass(frozen=True)
class DistributionReport:
    stats: Tuple[LabelStats, ...]
    overlapping: Tuple[Tuple[str, str], ...]


def distribution_report(samples: Mapping[str, Sequence[float]]) -> DistributionReport:
    """Descriptive per-label stats plus flags for poorly separated pairs.

    A pair is flagged when the label means are no more than the larger of
    the two sample standard deviations apart.
    """
    order = canonical_label_order(list(samples))
    stats = []
    for label in order:
        vals = np.asarray(samples[label], dtype=np.float64)
        mean = float(vals.mean()) if vals.size else 0.0
        stdev = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        stats.append(LabelStats(label, int(vals.size), mean, stdev))
    flagged = []
    for i in range(len(stats)):
        for j in range(i + 1, len(stats)):
            a, b = stats[i], stats[j]
            if abs(a.mean_ms - b.mean_ms) <= max(a.stdev_ms, b.stdev_ms):
                flagged.append((a.label, b.label))
    return DistributionReport(tuple(stats), tuple(flagged))
