"""K-stage expansion schedule over an ordered class list, and its training cost.

Costs are measured in sample passes normalized by one normal run of ``E``
epochs over the full dataset, so a normal run costs exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cel.confusion import ClassOrdering
from cel.dataset import ClassPartition


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ExpansionSchedule:
    ordering: ClassOrdering
    num_stages: int
    stage_class_counts: tuple[int, ...]
    stage_epochs: tuple[int, ...]
    final_epochs: int
    lam: float

    def classes_at_stage(self, k: int) -> tuple[int, ...]:
        _check_stage(self, k)
        return self.ordering.ord[: self.stage_class_counts[k - 1]]

    def added_at_stage(self, k: int) -> tuple[int, ...]:
        _check_stage(self, k)
        lo = self.stage_class_counts[k - 2] if k > 1 else 0
        return self.ordering.ord[lo : self.stage_class_counts[k - 1]]

    def to_dict(self) -> dict:
        cost = predicted_cost(self.num_stages, self.lam)
        return {
            "ordering": list(self.ordering.ord),
            "num_stages": self.num_stages,
            "final_epochs": self.final_epochs,
            "lambda": self.lam,
            "stages": [
                {
                    "stage": k,
                    "classes_added": list(self.added_at_stage(k)),
                    "cumulative_classes": self.stage_class_counts[k - 1],
                    "epochs": self.stage_epochs[k - 1],
                }
                for k in range(1, self.num_stages + 1)
            ],
            "predicted_cost": {"equal_epoch": cost.equal_epoch_cost, "reduced": cost.reduced_cost},
        }


@dataclass(frozen=True)
class CostModel:
    normal_cost: float
    equal_epoch_cost: float
    reduced_cost: float


def _check_stage(sched: ExpansionSchedule, k: int) -> None:
    if not 1 <= k <= sched.num_stages:
        raise ScheduleError(f"stage {k} outside 1..{sched.num_stages}")


def stage_additions(num_classes: int, num_stages: int) -> list[int]:
    """floor(M/K) classes per stage; the M mod K leftovers go one each to the earliest stages."""
    base, rem = divmod(num_classes, num_stages)
    return [base + 1 if k < rem else base for k in range(num_stages)]


def reduced_epochs(final_epochs: int, lam: float) -> int:
    return max(1, math.floor(final_epochs / lam + 0.5))


def build_schedule(
    ordering: ClassOrdering,
    num_stages: int,
    final_epochs: int,
    lam: float = 1.0,
    stage_epochs: Optional[Sequence[int]] = None,
) -> ExpansionSchedule:
    """Cumulative class pools per stage; early stages get round(E/lam) epochs, the last E.

    ``stage_epochs`` overrides the per-stage budgets outright.
    """
    M = ordering.num_classes
    if num_stages < 1:
        raise ScheduleError("K must be >= 1")
    if num_stages > M:
        raise ScheduleError(f"K={num_stages} exceeds the number of classes M={M}")
    if final_epochs < 1:
        raise ScheduleError("E must be >= 1")
    if not lam >= 1:
        raise ScheduleError("lambda must be >= 1")
    counts = tuple(int(c) for c in np.cumsum(stage_additions(M, num_stages)))
    if stage_epochs is None:
        epochs = (reduced_epochs(final_epochs, lam),) * (num_stages - 1) + (final_epochs,)
    else:
        epochs = tuple(int(e) for e in stage_epochs)
        if len(epochs) != num_stages or min(epochs) < 1:
            raise ScheduleError(f"stage_epochs must be {num_stages} integers >= 1")
    return ExpansionSchedule(ordering, num_stages, counts, epochs, final_epochs, float(lam))


def pool_at_stage(sched: ExpansionSchedule, k: int, partition: ClassPartition) -> np.ndarray:
    """Sorted sample indices of every class admitted by stage ``k`` (1-based)."""
    classes = sched.classes_at_stage(k)
    return np.sort(np.concatenate([partition.per_class[m] for m in classes]))


def predicted_cost(num_stages: int, lam: float = 1.0) -> CostModel:
    if num_stages < 1 or not lam >= 1:
        raise ScheduleError("need K >= 1 and lambda >= 1")
    K = num_stages
    return CostModel(1.0, (K + 1) / 2, (K - 1) / (2 * lam) + 1)


def measured_cost(sched: ExpansionSchedule, partition: ClassPartition) -> float:
    """Total sample passes of the schedule divided by E * |D|."""
    total = partition.total()
    passes = sum(
        sched.stage_epochs[k - 1] * len(pool_at_stage(sched, k, partition))
        for k in range(1, sched.num_stages + 1)
    )
    return passes / (sched.final_epochs * total)


def format_schedule(sched: ExpansionSchedule, class_names: Optional[Sequence[str]] = None) -> str:
    """Aligned text table: stage, classes added, cumulative classes, epochs, predicted stage cost."""
    M, K = sched.ordering.num_classes, sched.num_stages
    header = ("stage", "classes added", "cumulative", "epochs", "cost")
    rows = []
    for k in range(1, K + 1):
        added = sched.added_at_stage(k)
        names = ",".join(class_names[m] if class_names else str(m) for m in added)
        frac = sched.stage_class_counts[k - 1] / M
        cost = sched.stage_epochs[k - 1] * frac / sched.final_epochs
        rows.append((str(k), names, str(sched.stage_class_counts[k - 1]), str(sched.stage_epochs[k - 1]), f"{cost:.4f}"))
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    cost = predicted_cost(K, sched.lam)
    lines.append(f"predicted cost (x T_normal): equal-epoch {cost.equal_epoch_cost:.4f}, reduced {cost.reduced_cost:.4f}")
    return "\n".join(line.rstrip() for line in lines)
