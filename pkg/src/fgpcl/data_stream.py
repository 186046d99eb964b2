"""Phase schedules, class orderings, and per-phase data assembly.

A schedule splits a random permutation of class ids into contiguous phase
groups. Each training phase sees the union of the new-class training samples
and every stored exemplar of previously seen classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .errors import ContaminationError, ScheduleError


@dataclass(frozen=True)
class PhaseSchedule:
    ordering: tuple[int, ...]
    classes_per_phase: int
    pretrain_class_count: int
    seed: int
    phase_groups: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        groups = []
        first = self.pretrain_class_count or self.classes_per_phase
        groups.append(tuple(self.ordering[:first]))
        for start in range(first, len(self.ordering), self.classes_per_phase):
            groups.append(tuple(self.ordering[start:start + self.classes_per_phase]))
        object.__setattr__(self, "phase_groups", tuple(groups))

    @property
    def num_phases(self) -> int:
        return len(self.phase_groups)

    def classes_seen(self, phase_index: int) -> set[int]:
        """All class ids in groups 0..phase_index inclusive."""
        seen: set[int] = set()
        for g in self.phase_groups[:phase_index + 1]:
            seen.update(g)
        return seen

    def to_json(self) -> str:
        return json.dumps({
            "ordering": list(self.ordering),
            "classes_per_phase": self.classes_per_phase,
            "pretrain_class_count": self.pretrain_class_count,
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text: str) -> "PhaseSchedule":
        doc = json.loads(text)
        return cls(
            ordering=tuple(doc["ordering"]),
            classes_per_phase=int(doc["classes_per_phase"]),
            pretrain_class_count=int(doc["pretrain_class_count"]),
            seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class PhaseState:
    phase_index: int
    C_old: frozenset[int]
    C_new: frozenset[int]

    def __post_init__(self):
        if not self.C_new:
            raise ScheduleError("a phase must introduce at least one new class")
        if self.C_old & self.C_new:
            raise ScheduleError("old and new class sets must be disjoint")

    @property
    def C_all(self) -> frozenset[int]:
        return self.C_old | self.C_new


def build_schedule(num_classes: int, classes_per_phase: int,
                   pretrain_class_count: int = 0, seed: int = 0) -> PhaseSchedule:
    """Random class ordering split into contiguous phase groups.

    Deterministic for a fixed seed. The first group holds the pretrain
    classes when ``pretrain_class_count > 0``.
    """
    if num_classes <= 0 or classes_per_phase <= 0:
        raise ScheduleError("num_classes and classes_per_phase must be positive")
    if pretrain_class_count < 0 or pretrain_class_count > num_classes:
        raise ScheduleError("pretrain_class_count out of range")
    if (num_classes - pretrain_class_count) % classes_per_phase != 0:
        raise ScheduleError(
            f"cannot split {num_classes - pretrain_class_count} classes into "
            f"groups of {classes_per_phase}")
    rng = np.random.default_rng(seed)
    ordering = tuple(int(c) for c in rng.permutation(num_classes))
    return PhaseSchedule(ordering, classes_per_phase, pretrain_class_count, seed)


class ArrayDataset:
    """In-memory labeled examples: inputs [N, ...] and integer labels [N]."""

    def __init__(self, inputs: Tensor, labels: Tensor):
        if len(inputs) != len(labels):
            raise ValueError("inputs and labels length mismatch")
        self.inputs = inputs
        self.labels = labels.long()

    def __len__(self) -> int:
        return len(self.labels)

    def indices_of(self, classes) -> Tensor:
        mask = torch.zeros(len(self), dtype=torch.bool)
        for c in classes:
            mask |= self.labels == c
        return mask.nonzero(as_tuple=True)[0]

    def subset(self, indices: Tensor) -> "ArrayDataset":
        return ArrayDataset(self.inputs[indices], self.labels[indices])

    def restrict(self, classes) -> "ArrayDataset":
        return self.subset(self.indices_of(classes))


def phase_state(schedule: PhaseSchedule, phase_index: int) -> PhaseState:
    if phase_index >= schedule.num_phases:
        raise ScheduleError(f"phase {phase_index} out of range")
    new = frozenset(schedule.phase_groups[phase_index])
    old = frozenset(schedule.classes_seen(phase_index - 1)) if phase_index > 0 else frozenset()
    return PhaseState(phase_index, old, new)


def phase_data(schedule: PhaseSchedule, phase_index: int, dataset: ArrayDataset,
               store=None) -> tuple[ArrayDataset, PhaseState]:
    """Training pool for a phase: new-class samples plus all stored exemplars."""
    state = phase_state(schedule, phase_index)
    new_data = dataset.restrict(state.C_new)
    if store is None or len(store) == 0:
        return new_data, state
    bad = set(store.classes()) & set(state.C_new)
    if bad:
        raise ContaminationError(f"exemplar store holds new classes {sorted(bad)}")
    ex_inputs, ex_labels = store.all_examples()
    inputs = torch.cat([new_data.inputs, ex_inputs])
    labels = torch.cat([new_data.labels, ex_labels])
    return ArrayDataset(inputs, labels), state
