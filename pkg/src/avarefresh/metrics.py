"""Information-effectiveness metrics: AoI, QAoI, AoP, consistency, and the AVA score.

All ages are measured in slots. The AVA score multiplies a normalized query age
with a server/AP consistency term, so it is bounded in [-1, 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class Decision(str, Enum):
    TP = "TP"
    TN = "TN"
    FP = "FP"
    FN = "FN"


@dataclass(frozen=True)
class MetricConfig:
    epsilon: float = 0.01
    k: float = 0.02
    qaoi_hold: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")


@dataclass
class AoITracker:
    """Remembers the slot of the latest update received at the AP.

    ``None`` means no update was ever received; ages are then measured from
    slot 0, which behaves like a virtual reception at run start.
    """

    last_reception_slot: Optional[int] = None

    def record_reception(self, slot: int) -> None:
        self.last_reception_slot = slot


@dataclass
class RunMetrics:
    total_updates: int = 0
    total_slots: int = 0
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    aoi_sum: int = 0
    requests: int = 0

    def record_decision(self, outcome: Decision) -> None:
        name = outcome.value.lower()
        setattr(self, name, getattr(self, name) + 1)
        self.requests += 1


def aoi(tracker: AoITracker, t: int) -> int:
    base = 0 if tracker.last_reception_slot is None else tracker.last_reception_slot
    if t < base:
        raise ValueError(f"slot {t} precedes last reception at {base}")
    return t - base


def qaoi_sample(tracker: AoITracker, t_q: int) -> int:
    """Age of the AP's information at a query instant."""
    return aoi(tracker, t_q)


def consistency(c: float, c_hat: float, cfg: MetricConfig = MetricConfig()) -> float:
    """Agreement between true capacity ``c`` and the AP's view ``c_hat``, in [-1, 1]."""
    eps = cfg.epsilon
    if c <= eps and c_hat <= eps:
        return 1.0
    lo, hi = (c, c_hat) if c <= c_hat else (c_hat, c)
    return 2.0 * lo / (hi + eps) - 1.0


def phi(upsilon: float, cfg: MetricConfig = MetricConfig()) -> float:
    return 1.0 - math.exp(-cfg.k * upsilon)


def ava(c: float, c_hat: float, upsilon: float, cfg: MetricConfig = MetricConfig()) -> float:
    return phi(upsilon, cfg) * consistency(c, c_hat, cfg)


def aop(tracker: AoITracker, t: int, processing_delay: int) -> int:
    """Age of processing: information age plus the time the server spends on a task."""
    return aoi(tracker, t) + processing_delay


def classify_decision(c: int, c_hat: int) -> Decision:
    if c_hat > 0:
        return Decision.TP if c > 0 else Decision.FP
    return Decision.FN if c > 0 else Decision.TN


def finalize(metrics: RunMetrics, slot_duration_s: float) -> dict:
    """Reduce a run to update rate (per second), decision accuracy and mean AoI.

    Accuracy is left out of the summary when no request arrived.
    """
    if metrics.total_slots <= 0:
        raise ValueError("cannot finalize a run with zero slots")
    summary = {
        "update_rate_per_s": metrics.total_updates / (metrics.total_slots * slot_duration_s),
        "avg_aoi_slots": metrics.aoi_sum / metrics.total_slots,
    }
    if metrics.requests > 0:
        summary["accuracy"] = (metrics.tp + metrics.tn) / metrics.requests
    return summary
