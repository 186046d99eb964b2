"""Evaluation metrics computed from the lower-triangular accuracy matrix."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MetricError


@dataclass
class AccuracyMatrix:
    """rows[j][i] = accuracy on phase-group i test data after phase j (i <= j)."""
    rows: list[list[float]] = field(default_factory=list)
    group_sizes: list[int] = field(default_factory=list)

    def append_row(self, accuracies: list[float], new_group_size: int) -> None:
        if len(accuracies) != len(self.rows) + 1:
            raise MetricError("row length must equal the phase count")
        self.rows.append([float(a) for a in accuracies])
        self.group_sizes.append(int(new_group_size))

    @property
    def num_phases(self) -> int:
        return len(self.rows)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phase"] + [f"group_{i}" for i in range(self.num_phases)])
            writer.writerow(["group_size"] + [str(s) for s in self.group_sizes])
            for j, row in enumerate(self.rows):
                writer.writerow([j] + [f"{a:.6f}" for a in row] + [""] * (self.num_phases - len(row)))

    @classmethod
    def load_csv(cls, path: str | Path) -> "AccuracyMatrix":
        with open(path, newline="") as fh:
            reader = list(csv.reader(fh))
        if len(reader) < 2:
            raise MetricError(f"malformed accuracy matrix file: {path}")
        sizes_row = reader[1]
        matrix = cls()
        try:
            sizes = [int(s) for s in sizes_row[1:] if s != ""]
            for j, line in enumerate(reader[2:]):
                accs = [float(a) for a in line[1:j + 2]]
                matrix.append_row(accs, sizes[j])
        except (ValueError, IndexError) as exc:
            raise MetricError(f"malformed accuracy matrix file: {path}") from exc
        return matrix


def incremental_accuracy(row: list[float], group_sizes: list[int]) -> float:
    """Pooled accuracy over all seen classes: sample-weighted mean of the row."""
    if not row:
        raise MetricError("empty accuracy row")
    sizes = group_sizes[:len(row)]
    total = sum(sizes)
    if total == 0:
        raise MetricError("empty test set")
    return sum(a * s for a, s in zip(row, sizes)) / total


def incremental_accuracies(matrix: AccuracyMatrix) -> list[float]:
    return [incremental_accuracy(row, matrix.group_sizes) for row in matrix.rows]


def average_incremental_accuracy(accuracies: list[float]) -> float:
    if not accuracies:
        raise MetricError("need at least one incremental accuracy")
    return sum(accuracies) / len(accuracies)


def phase_accuracy_mad(matrix: AccuracyMatrix) -> tuple[list[float], float]:
    """Final-phase per-group accuracies and their mean absolute deviation."""
    if not matrix.rows:
        raise MetricError("empty accuracy matrix")
    final = matrix.rows[-1]
    if len(final) != matrix.num_phases:
        raise MetricError("final row incomplete")
    mean = sum(final) / len(final)
    mad = sum(abs(a - mean) for a in final) / len(final)
    return list(final), mad


def forgetting_measure(matrix: AccuracyMatrix) -> float:
    """Mean drop of each group from its best historical accuracy to final."""
    rows = matrix.rows
    if len(rows) < 2:
        raise MetricError("forgetting needs at least two phases")
    last = len(rows) - 1
    drops = []
    for i in range(last):
        # running max includes the final row, so a group that only ever
        # improved contributes zero rather than negative forgetting
        best = max(rows[l][i] for l in range(i, last + 1))
        drops.append(best - rows[last][i])
    return sum(drops) / len(drops)


def metrics_report(matrix: AccuracyMatrix) -> dict:
    """All metrics as one JSON-serializable document."""
    inc = incremental_accuracies(matrix)
    phase_acc, mad = phase_accuracy_mad(matrix)
    report = {
        "incremental_accuracy": inc,
        "average_incremental_accuracy": average_incremental_accuracy(inc),
        "phase_accuracy": phase_acc,
        "phase_mad": mad,
        "forgetting": forgetting_measure(matrix) if matrix.num_phases >= 2 else None,
    }
    return report


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2))
