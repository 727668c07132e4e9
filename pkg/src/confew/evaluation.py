"""Strict evaluation over all observed relations and accuracy bookkeeping.

After training on task j the model is scored on every test set seen so far,
with the classifier ranging over the union of observed relations (no
restriction to the relations of the test set being scored).  The results are
collected in a lower-triangular accuracy matrix, from which the running
average accuracy and the backward transfer are derived.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import Sample
from .encoder import Model
from .errors import ValidationError


class AccuracyMatrix:
    """Lower-triangular matrix of ACC_{j,i} values, 1-based in both indices.

    Entry (j, i) is the accuracy on task i's test set measured after training
    on task j, so only i <= j is meaningful.  Each entry is written exactly
    once, immediately after task j finishes training.
    """

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValidationError("accuracy matrix needs at least one task")
        self.n_tasks = n_tasks
        self._values = np.full((n_tasks, n_tasks), np.nan)

    def _check_pair(self, j: int, i: int) -> None:
        if not (1 <= j <= self.n_tasks):
            raise ValidationError(f"task index {j} outside 1..{self.n_tasks}")
        if not (1 <= i <= j):
            raise ValidationError(f"test index {i} outside 1..{j}")

    def record(self, j: int, i: int, value: float) -> None:
        self._check_pair(j, i)
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"accuracy {value} outside [0, 1]")
        if not np.isnan(self._values[j - 1, i - 1]):
            raise ValidationError(f"entry ({j}, {i}) already recorded")
        self._values[j - 1, i - 1] = value

    def get(self, j: int, i: int) -> float:
        self._check_pair(j, i)
        v = self._values[j - 1, i - 1]
        if np.isnan(v):
            raise ValidationError(f"entry ({j}, {i}) not recorded yet")
        return float(v)

    def row(self, j: int) -> np.ndarray:
        """The populated part of row j (accuracies on test sets 1..j)."""
        self._check_pair(j, j)
        out = self._values[j - 1, :j]
        if np.isnan(out).any():
            raise ValidationError(f"row {j} is not fully recorded")
        return out.copy()

    def is_complete(self) -> bool:
        return all(
            not np.isnan(self._values[j, i])
            for j in range(self.n_tasks)
            for i in range(j + 1)
        )

    def recorded_rows(self) -> list[int]:
        """Task indices whose rows are fully recorded (for partial dumps)."""
        return [j for j in range(1, self.n_tasks + 1)
                if not np.isnan(self._values[j - 1, :j]).any()]


def strict_accuracy(model: Model, test_set: list[Sample],
                    observed: set[str], batch_size: int = 64) -> float:
    """Fraction of samples whose argmax logit over all observed relations is
    the true label.

    The classifier must cover exactly the observed relation set; argmax ties
    break toward the lowest classifier row index.  Evaluation runs the model
    in eval mode (no dropout) and counts hits as exact integers.
    """
    if not test_set:
        raise ValidationError("cannot evaluate on an empty test set")
    if batch_size < 1:
        raise ValidationError("batch_size must be positive")
    observed = set(observed)
    if set(model.relations) != observed:
        raise ValidationError(
            f"classifier covers {len(model.relations)} relations, "
            f"observed set has {len(observed)}")
    for s in test_set:
        if s.relation not in observed:
            raise ValidationError(
                f"test sample {s.id} labeled {s.relation!r}, "
                "which is not an observed relation")

    correct = 0
    for start in range(0, len(test_set), batch_size):
        batch = test_set[start:start + batch_size]
        _, _, logits = model.forward(batch, train_mode=False)
        pred = np.argmax(logits.data, axis=1)
        for s, p in zip(batch, pred):
            if model.relations[p] == s.relation:
                correct += 1
    return correct / len(test_set)


def average_accuracy(matrix: AccuracyMatrix, j: int) -> float:
    """Mean of row j: ACC_j = (1/j) sum_i ACC_{j,i}."""
    row = matrix.row(j)
    return float(row.sum() / j)


def bwt(matrix: AccuracyMatrix):
    """Backward transfer over the full sequence.

    BWT = (1/(J-1)) sum_{i=1}^{J-1} (ACC_{J,i} - ACC_{i,i}).  A single-task
    sequence has no backward transfer, so J = 1 returns None.
    """
    J = matrix.n_tasks
    if J == 1:
        return None
    last = matrix.row(J)
    total = 0.0
    for i in range(1, J):
        total += last[i - 1] - matrix.get(i, i)
    return total / (J - 1)


def write_accuracy_csv(matrix: AccuracyMatrix, path) -> None:
    """Accuracy matrix as CSV: one row per evaluated-after task, one column
    per task test set, upper triangle left blank.  Unrecorded rows are
    omitted so partially completed runs still dump cleanly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["after_task"]
                        + [f"test_{i}" for i in range(1, matrix.n_tasks + 1)])
        for j in matrix.recorded_rows():
            row = matrix.row(j)
            cells = [f"{v:.17g}" for v in row]
            cells += [""] * (matrix.n_tasks - j)
            writer.writerow([j] + cells)


def write_summary_json(matrix: AccuracyMatrix, path, extra: dict | None = None) -> None:
    """Run metrics as JSON: per-task average accuracy, final ACC_J, BWT.

    On a partially recorded matrix the averages cover the recorded rows,
    final accuracy is the latest recorded row's average, and BWT is null."""
    rows = matrix.recorded_rows()
    payload = {
        "n_tasks": matrix.n_tasks,
        "recorded_tasks": rows,
        "average_accuracy": [average_accuracy(matrix, j) for j in rows],
        "final_accuracy": average_accuracy(matrix, rows[-1]) if rows else None,
        "bwt": bwt(matrix) if matrix.is_complete() else None,
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def dump_representations(model: Model, samples: list[Sample], path,
                         batch_size: int = 64) -> None:
    """Hidden representations as CSV rows (id, relation, h_0..h_{d-1})."""
    if not samples:
        raise ValidationError("no samples to dump")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header_written = False
        for start in range(0, len(samples), batch_size):
            batch = samples[start:start + batch_size]
            _, hidden, _ = model.forward(batch, train_mode=False)
            h = hidden.data
            if not header_written:
                writer.writerow(["id", "relation"]
                                + [f"h{k}" for k in range(h.shape[1])])
                header_written = True
            for s, vec in zip(batch, h):
                writer.writerow([s.id, s.relation]
                                + [f"{v:.17g}" for v in vec])
