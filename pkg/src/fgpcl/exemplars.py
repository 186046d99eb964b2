"""Herding-based exemplar selection and the nearest-mean-of-exemplars
classifier.

Herding is greedy: each step picks the candidate whose inclusion brings the
running mean of the selected features closest to the class mean. Selection
order is stored, so shrinking a class's quota is a prefix truncation.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch
from torch import Tensor

from .data_stream import ArrayDataset
from .errors import BudgetError, ContractError
from .geometry import normalize


def herd_select(features: Tensor, budget: int) -> list[int]:
    """Greedy herding over one class's feature vectors [n, d].

    Returns ``budget`` candidate indices in priority order. Ties break by
    lowest index.
    """
    n = len(features)
    if n == 0:
        raise ContractError("empty candidate set")
    if budget > n:
        raise BudgetError(f"budget {budget} exceeds {n} candidates")
    mean = features.mean(dim=0)
    selected: list[int] = []
    running_sum = torch.zeros_like(mean)
    remaining = list(range(n))
    for step in range(budget):
        # distance from class mean to the mean of selected + candidate
        cand = features[remaining]
        means = (running_sum + cand) / (step + 1)
        dists = (means - mean).norm(dim=1)
        best = int(torch.argmin(dists))  # argmin returns first minimum
        idx = remaining.pop(best)
        selected.append(idx)
        running_sum = running_sum + features[idx]
    return selected


class ExemplarStore:
    """Per-class exemplar index lists under a global memory budget."""

    def __init__(self, memory_budget: int, dataset: ArrayDataset | None = None):
        if memory_budget < 0:
            raise BudgetError("memory budget must be >= 0")
        self.memory_budget = memory_budget
        self.dataset = dataset
        self.per_class: dict[int, list[int]] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def classes(self) -> list[int]:
        return sorted(self.per_class)

    def quota(self, total_classes: int) -> int:
        if total_classes <= 0:
            return 0
        return self.memory_budget // total_classes

    def rebalance(self, new_class_count_total: int) -> None:
        """Truncate every list to the equal per-class quota (prefix order)."""
        if new_class_count_total < len(self.per_class):
            raise BudgetError("total class count cannot shrink")
        m = self.quota(new_class_count_total)
        for c in self.per_class:
            self.per_class[c] = self.per_class[c][:m]

    def add_class(self, class_id: int, indices: list[int]) -> None:
        if class_id in self.per_class:
            raise ContractError(f"class {class_id} already stored")
        self.per_class[class_id] = list(indices)
        if len(self) > self.memory_budget:
            raise BudgetError("store exceeds memory budget")

    def examples_of(self, class_id: int) -> ArrayDataset:
        idx = torch.as_tensor(self.per_class[class_id], dtype=torch.long)
        return self.dataset.subset(idx)

    def all_examples(self) -> tuple[Tensor, Tensor]:
        parts = [self.examples_of(c) for c in self.classes()]
        inputs = torch.cat([p.inputs for p in parts])
        labels = torch.cat([p.labels for p in parts])
        return inputs, labels

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "memory_budget": self.memory_budget,
            "per_class": {str(c): idx for c, idx in self.per_class.items()},
        }))

    @classmethod
    def load(cls, path: str | Path, dataset: ArrayDataset | None = None) -> "ExemplarStore":
        doc = json.loads(Path(path).read_text())
        store = cls(doc["memory_budget"], dataset)
        store.per_class = {int(c): list(idx) for c, idx in doc["per_class"].items()}
        return store


def class_means(features_by_class: dict[int, Tensor],
                renormalize: bool = True) -> tuple[list[int], Tensor]:
    """Mean of normalized features per class, optionally renormalized.

    Returns class ids (sorted) and the [C, d] matrix of means.
    """
    ids = sorted(features_by_class)
    means = []
    for c in ids:
        mean = normalize(features_by_class[c]).mean(dim=0)
        if renormalize:
            mean = normalize(mean)
        means.append(mean)
    return ids, torch.stack(means)


def nme_classify(feat: Tensor, class_ids: list[int], means: Tensor) -> int | Tensor:
    """Nearest class mean by Euclidean distance; ties break by lowest id.

    ``feat`` is one normalized feature [d] or a batch [N, d].
    """
    if len(class_ids) == 0:
        raise ContractError("no class means available")
    order = sorted(range(len(class_ids)), key=lambda i: class_ids[i])
    ids = torch.as_tensor([class_ids[i] for i in order])
    m = means[order]
    single = feat.dim() == 1
    f = feat.unsqueeze(0) if single else feat
    dists = (f.unsqueeze(1) - m.unsqueeze(0)).pow(2).sum(-1)
    pred = ids[dists.argmin(dim=1)]  # argmin's first-hit rule + sorted ids = lowest id
    return int(pred[0]) if single else pred
