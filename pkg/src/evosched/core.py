"""Quality-of-experience objective, life-cycle time decomposition, and urgency scoring.

Shared by the scheduler and the simulator; everything here is a pure function
over small value types.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class LifeCycle:
    """One model life cycle: high-accuracy service followed by an evolution round.

    ``t_retrain`` is only the on-server retraining phase; the full evolution
    time is ``t_upload + t_schedule + t_retrain + t_download``.
    """

    t_infer: float
    t_upload: float
    t_schedule: float
    t_retrain: float
    t_download: float
    avg_accuracy: float

    def __post_init__(self):
        for name in ("t_infer", "t_upload", "t_schedule", "t_retrain", "t_download"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.avg_accuracy <= 1.0:
            raise ValueError("avg_accuracy must be in [0, 1]")

    @property
    def t_evolve(self) -> float:
        """Total evolution time: upload + scheduling + retraining + download."""
        return self.t_upload + self.t_schedule + self.t_retrain + self.t_download

    @property
    def duration(self) -> float:
        return self.t_infer + self.t_evolve


@dataclass(frozen=True)
class UrgencyInput:
    current_accuracy: float  # live accuracy proxy, in (0, 1]
    accuracy_drop: float     # estimated drop since the last evolution, >= 0

    def __post_init__(self):
        if self.current_accuracy <= 0:
            raise ValueError("current_accuracy must be positive")
        if self.accuracy_drop < 0:
            raise ValueError("accuracy_drop must be non-negative")


@dataclass(frozen=True)
class QoEReport:
    per_end_qoe: tuple  # (end_id, urgency, qoe) triples
    q_avg: float
    sd_schedule: float
    sd_retrain: float
    q_t: float
    penalty_weights: tuple


def qoe_single(cycle: LifeCycle) -> float:
    """Accuracy-weighted fraction of the life cycle spent in high-quality service."""
    total = cycle.t_infer + cycle.t_evolve
    if total <= 0:
        raise ValueError("life cycle has zero duration")
    return cycle.avg_accuracy * cycle.t_infer / total


def urgency(u: UrgencyInput) -> float:
    """Evolving-urgency score in (0, 100).

    Arctan-shaped in the relative accuracy drop; the midpoint (score 50) sits
    at a drop of 80% of the current accuracy.
    """
    ratio = u.accuracy_drop / u.current_accuracy
    return (100.0 / math.pi) * (math.atan(math.pi * (ratio - 0.8)) + math.pi / 2.0)


def _population_sd(values: Sequence[float]) -> float:
    n = len(values)
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / n)


def penalized_average_qoe(
    ends: Sequence[tuple],
    schedule_times: Sequence[float],
    retrain_times: Sequence[float],
    weights: tuple[float, float] = (1.0, 1.0),
) -> QoEReport:
    """Urgency-weighted average QoE minus dispersion penalties on waiting times.

    ``ends`` is a sequence of ``(end_id, urgency, qoe)`` triples.  The penalty
    terms are population standard deviations of the scheduling and retraining
    times, scaled by ``weights`` (see :func:`penalty_weights_for_cycles` for
    the default normalization used by the simulator).
    """
    if not ends:
        raise ValueError("need at least one end")
    if not (len(ends) == len(schedule_times) == len(retrain_times)):
        raise ValueError("ends, schedule_times and retrain_times must have equal length")
    w_s, w_r = weights
    q_avg = sum(lam * q for _, lam, q in ends) / len(ends)
    sd_s = _population_sd(schedule_times)
    sd_r = _population_sd(retrain_times)
    q_t = q_avg - w_s * sd_s - w_r * sd_r
    return QoEReport(
        per_end_qoe=tuple((e, lam, q) for e, lam, q in ends),
        q_avg=q_avg,
        sd_schedule=sd_s,
        sd_retrain=sd_r,
        q_t=q_t,
        penalty_weights=(w_s, w_r),
    )


def penalty_weights_for_cycles(cycles: Iterable[LifeCycle]) -> tuple[float, float]:
    """Default penalty weights: 1 / mean life-cycle duration for both terms.

    Makes the second-scale dispersion penalties commensurate with the
    dimensionless urgency-weighted QoE average.
    """
    durations = [c.duration for c in cycles]
    if not durations:
        raise ValueError("need at least one cycle")
    mean = sum(durations) / len(durations)
    if mean <= 0:
        raise ValueError("mean life-cycle duration must be positive")
    return (1.0 / mean, 1.0 / mean)
