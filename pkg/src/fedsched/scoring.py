"""Per-client selection criteria.

Eleven criterion scores feed the selection pipeline: seven resource scores,
data size, data-distribution uniformity, historical model quality, and
historical behavior. This module computes the raw quantities (ratios,
non-iid degree, per-round/per-task quality and behavior), normalizes them,
and combines them into the weighted overall score and the price derived
from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_CRITERIA = 11

#: Criterion order used everywhere a length-11 score vector appears.
SCORE_NAMES = (
    "cpu",
    "gpu",
    "mem",
    "storage",
    "power",
    "bandwidth",
    "connection",
    "data_size",
    "data_dist",
    "model_quality",
    "behavior",
)


@dataclass
class ResourceProfile:
    """Raw client capabilities in the task requester's native units."""

    cpu: float = 0.0
    gpu: float = 0.0
    mem: float = 0.0
    storage: float = 0.0
    power: float = 0.0
    bandwidth: float = 0.0
    connection: float = 0.0
    data_size: int = 0

    def __post_init__(self) -> None:
        for name in (
            "cpu", "gpu", "mem", "storage", "power", "bandwidth",
            "connection", "data_size",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"resource {name!r} must be non-negative")


@dataclass
class ReputationRecord:
    """Per-task quality and behavior history, capped to a sliding window."""

    per_task_quality: list[float] = field(default_factory=list)
    per_task_behavior: list[float] = field(default_factory=list)
    window: int = 10

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be a positive integer")
        if len(self.per_task_quality) != len(self.per_task_behavior):
            raise ValueError("quality and behavior histories must have equal length")
        if len(self.per_task_quality) > self.window:
            raise ValueError("history longer than the retention window")
        for b in self.per_task_behavior:
            if not 0.0 <= b <= 1.0:
                raise ValueError("behavior values must lie in [0, 1]")

    def add_task(self, quality: float, behavior: float) -> None:
        """Append one finished task, dropping the oldest beyond the window."""
        if not 0.0 <= behavior <= 1.0:
            raise ValueError("behavior values must lie in [0, 1]")
        self.per_task_quality.append(float(quality))
        self.per_task_behavior.append(float(behavior))
        del self.per_task_quality[:-self.window]
        del self.per_task_behavior[:-self.window]

    def is_empty(self) -> bool:
        return not self.per_task_quality


def as_score_vector(values) -> np.ndarray:
    """Validate and return a length-11 criterion score vector."""
    s = np.asarray(values, dtype=float)
    if s.shape != (N_CRITERIA,):
        raise ValueError(f"score vector must have exactly {N_CRITERIA} entries")
    if not np.all(np.isfinite(s)):
        raise ValueError("score vector entries must be finite")
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("score vector entries must lie in [0, 1]")
    return s


def as_weights(values) -> np.ndarray:
    """Validate and return a length-11 non-negative weight vector."""
    w = np.asarray(values, dtype=float)
    if w.shape != (N_CRITERIA,):
        raise ValueError(f"weight vector must have exactly {N_CRITERIA} entries")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0.0):
        raise ValueError("at least one weight must be positive")
    return w


def resource_ratio(raw: float, minimum: float) -> float:
    """Ratio of a client's resource to the task's minimum requirement."""
    if minimum <= 0:
        raise ValueError("minimum requirement must be positive")
    if raw < 0:
        raise ValueError("resource value must be non-negative")
    return raw / minimum


def normalize_ratios(ratios) -> np.ndarray:
    """Scale a vector of non-negative ratios so the maximum maps to 1.0."""
    r = np.asarray(ratios, dtype=float)
    if r.size == 0:
        raise ValueError("cannot normalize an empty vector")
    if np.any(r < 0):
        raise ValueError("ratios must be non-negative")
    top = r.max()
    if top <= 0:
        raise ValueError("cannot normalize an all-zero vector")
    return r / top


def combined_histogram(histograms) -> np.ndarray:
    """Element-wise sum of per-client label histograms."""
    if not len(histograms):
        raise ValueError("need at least one histogram")
    arrays = [np.asarray(h) for h in histograms]
    length = arrays[0].shape
    for a in arrays:
        if a.shape != length:
            raise ValueError("histograms must all have the same number of classes")
    return np.sum(arrays, axis=0)


def noniid_degree(histogram) -> float:
    """Skew of a label histogram: (max - min) / total, in [0, 1].

    0 means perfectly uniform class coverage; 1 means all counted
    difference sits in a single class.
    """
    h = np.asarray(histogram, dtype=float)
    if h.ndim != 1 or h.size == 0:
        raise ValueError("histogram must be a non-empty 1-D vector")
    if np.any(h < 0):
        raise ValueError("histogram counts must be non-negative")
    total = h.sum()
    if total <= 0:
        raise ValueError("histogram total must be positive")
    return float((h.max() - h.min()) / total)


def pooled_noniid_degree(histograms) -> float:
    """Non-iid degree of the union: histograms are summed, then measured."""
    return noniid_degree(combined_histogram(histograms))


def data_dist_score(histogram) -> float:
    """Data-distribution criterion score: 1 minus the non-iid degree."""
    return 1.0 - noniid_degree(histogram)


def model_similarity(local, reference) -> float:
    """Cosine similarity between two parameter vectors, in [-1, 1]."""
    a = np.asarray(local, dtype=float).ravel()
    b = np.asarray(reference, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("parameter vectors must have equal dimension")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def behavior_flag(returned: bool) -> int:
    """Per-round behavior indicator: 1 if the update came back, else 0."""
    return 1 if returned else 0


def task_quality(round_values) -> float:
    """Per-task model quality: mean of per-round quality values."""
    values = list(round_values)
    if not values:
        raise ValueError("client participated in no rounds")
    return float(sum(values) / len(values))


def task_behavior(round_values) -> float:
    """Per-task behavior score: mean of per-round 0/1 return indicators."""
    values = list(round_values)
    if not values:
        raise ValueError("client participated in no rounds")
    return float(sum(values) / len(values))


def historical_scores(record: ReputationRecord, prior: float = 0.5) -> tuple[float, float]:
    """Model-quality and behavior criterion scores from task history.

    New clients with no history get the neutral prior for both scores so
    they are neither favored nor excluded.
    """
    if record.is_empty():
        return prior, prior
    q = sum(record.per_task_quality) / len(record.per_task_quality)
    b = sum(record.per_task_behavior) / len(record.per_task_behavior)
    return float(q), float(b)


def overall_score(weights, scores) -> float:
    """Weighted sum of the eleven criterion scores."""
    w = np.asarray(weights, dtype=float)
    s = np.asarray(scores, dtype=float)
    if w.shape != (N_CRITERIA,) or s.shape != (N_CRITERIA,):
        raise ValueError(f"both vectors must have exactly {N_CRITERIA} entries")
    return float(np.dot(w, s))


def cost_from_score(score: float, a: float, b: float) -> int:
    """Client price as an affine function of the overall score, floored.

    Flooring (rather than round-half-up) is what makes the reference
    cost table reproduce exactly; see the regression tests.
    """
    if a <= 0:
        raise ValueError("price slope must be positive")
    return int(math.floor(a * score + b))


def reputation_score(q_task: float, b_task: float) -> float:
    """Per-task reputation: model quality plus behavior."""
    return float(q_task) + float(b_task)
