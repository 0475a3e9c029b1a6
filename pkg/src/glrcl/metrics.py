"""Train-test accuracy matrix and the three continual-learning scalars.

Accuracies are stored in percent.  For T tasks the square matrix A holds
A[i][j] = accuracy on task j's eval set after training session i; rows are
recorded one per session, in order.  The scalars:

    avg_accuracy = mean of the last row
    bwt          = mean over i < T of (A[T][i] - A[i][i])
    ilm          = mean over all i >= j of A[i][j]   (lower-triangle inclusive)
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionMismatch,
    IncompleteMatrix,
    OutOfOrderRow,
    RangeViolation,
    UndefinedForSingleTask,
)

ILM_DEFINITION = (
    "mean of A[i][j] over all sessions i and tasks j <= i "
    "(lower-triangle-inclusive average of the train-test matrix)"
)


class AccuracyMatrix:
    """R x T matrix of percent accuracies filled one row per session.

    R == T for sequential methods; the joint baseline records a single row
    (R == 1) since it trains exactly once.
    """

    def __init__(self, num_tasks: int, num_rows: int | None = None):
        if num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        self.num_tasks = int(num_tasks)
        self.num_rows = int(num_rows) if num_rows is not None else self.num_tasks
        if self.num_rows < 1:
            raise ValueError("num_rows must be >= 1")
        self.values = np.full((self.num_rows, self.num_tasks), np.nan)
        self.t_filled = 0

    @property
    def is_square(self) -> bool:
        return self.num_rows == self.num_tasks

    @property
    def complete(self) -> bool:
        return self.t_filled == self.num_rows

    def record_row(self, i: int, accuracies) -> "AccuracyMatrix":
        """Store row i (1-based); rows must arrive in order 1, 2, ..."""
        if i != self.t_filled + 1 or i > self.num_rows:
            raise OutOfOrderRow(
                f"expected row {self.t_filled + 1} of {self.num_rows}, got {i}"
            )
        row = np.asarray(accuracies, dtype=np.float64)
        if row.shape != (self.num_tasks,):
            raise DimensionMismatch(
                f"expected {self.num_tasks} accuracies, got shape {row.shape}"
            )
        if np.any(row < 0.0) or np.any(row > 100.0) or not np.all(np.isfinite(row)):
            raise RangeViolation("accuracies must lie in [0, 100]")
        self.values[i - 1] = row
        self.t_filled = i
        return self


def avg_accuracy(mat: AccuracyMatrix) -> float:
    """Mean accuracy over all tasks after the final training session."""
    if not mat.complete:
        raise IncompleteMatrix(f"only {mat.t_filled}/{mat.num_rows} rows recorded")
    return float(np.mean(mat.values[-1]))


def bwt(mat: AccuracyMatrix) -> float:
    """Backward transfer; negative values quantify forgetting."""
    if not mat.complete:
        raise IncompleteMatrix(f"only {mat.t_filled}/{mat.num_rows} rows recorded")
    if not mat.is_square or mat.num_tasks < 2:
        raise UndefinedForSingleTask("bwt needs a completed square matrix, T >= 2")
    t = mat.num_tasks
    diffs = mat.values[t - 1, : t - 1] - np.diagonal(mat.values)[: t - 1]
    return float(np.mean(diffs))


def ilm(mat: AccuracyMatrix) -> float:
    """Incremental-learning metric: lower-triangle-inclusive mean of A."""
    if not mat.complete:
        raise IncompleteMatrix(f"only {mat.t_filled}/{mat.num_rows} rows recorded")
    if not mat.is_square:
        raise UndefinedForSingleTask("ilm needs a square train-test matrix")
    t = mat.num_tasks
    tri = np.tril_indices(t)
    return float(np.sum(mat.values[tri]) * 2.0 / (t * (t + 1)))


def matrix_to_csv(mat: AccuracyMatrix) -> str:
    """Header-less CSV; repr formatting keeps round-trips exact."""
    lines = []
    for i in range(mat.t_filled):
        lines.append(",".join(repr(float(v)) for v in mat.values[i]))
    return "\n".join(lines) + "\n"


def matrix_from_csv(text: str) -> AccuracyMatrix:
    rows = [line for line in text.strip().splitlines() if line.strip()]
    if not rows:
        raise DimensionMismatch("empty matrix CSV")
    parsed = [[float(v) for v in line.split(",")] for line in rows]
    width = len(parsed[0])
    if any(len(r) != width for r in parsed):
        raise DimensionMismatch("ragged matrix CSV")
    mat = AccuracyMatrix(num_tasks=width, num_rows=len(parsed))
    for i, row in enumerate(parsed, start=1):
        mat.record_row(i, row)
    return mat
