"""Pixelwise scoring of predicted label rasters against ground truth, plus a
worker-pool timing harness.

Accuracy counts every pixel (background included); precision and recall are
micro-averaged over object classes only, with the 0/0 -> 1 convention so
empty scenes do not poison aggregates.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .detections import NUM_CLASSES
from .depthimage import DepthLabelImage

__all__ = [
    "ConfusionCounts",
    "ClassCounts",
    "EvalReport",
    "TimingReport",
    "compare",
    "accumulate",
    "benchmark",
]

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    """Per-class tp/fp/fn tallies plus the global pixel counts."""

    tp: np.ndarray  # (NUM_CLASSES,) int64
    fp: np.ndarray
    fn: np.ndarray
    correct_pixels: int
    total_pixels: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            arr = np.array(getattr(self, name), dtype=np.int64).reshape(NUM_CLASSES)
            if (arr < 0).any():
                raise ValueError(f"{name} counts must be non-negative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.correct_pixels < 0 or self.correct_pixels > self.total_pixels:
            raise ValueError("correct_pixels must lie in [0, total_pixels]")

    @classmethod
    def zero(cls) -> "ConfusionCounts":
        z = np.zeros(NUM_CLASSES, np.int64)
        return cls(z, z.copy(), z.copy(), 0, 0)

    def merged(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.correct_pixels + other.correct_pixels,
            self.total_pixels + other.total_pixels,
        )


def compare(pred: DepthLabelImage, gt: DepthLabelImage) -> ConfusionCounts:
    """Pixelwise confusion of one predicted raster against ground truth.

    A pixel is correct when the labels are equal (background counts toward
    accuracy). For each object class c: tp where both are c, fp where only
    the prediction is c, fn where only the ground truth is c.
    """
    a = pred.labels
    b = gt.labels
    if a.shape != b.shape:
        raise ValueError(f"prediction shape {a.shape} != ground truth shape {b.shape}")
    a = a.ravel()
    b = b.ravel()
    correct = int((a == b).sum())
    agree = a[a == b]
    tp = np.bincount(agree[agree >= 0], minlength=NUM_CLASSES).astype(np.int64)
    pred_counts = np.bincount(a[a >= 0], minlength=NUM_CLASSES).astype(np.int64)
    gt_counts = np.bincount(b[b >= 0], minlength=NUM_CLASSES).astype(np.int64)
    return ConfusionCounts(tp, pred_counts - tp, gt_counts - tp, correct, a.size)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 1.0


@dataclass(frozen=True)
class ClassCounts:
    """One class's row of the per-class breakdown."""

    class_id: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Micro-averaged metrics over all compared frames."""

    accuracy: float
    precision: float
    recall: float
    per_class: tuple[ClassCounts, ...]
    frames_evaluated: int
    totals: ConfusionCounts

    def lines(self) -> list[str]:
        """Key/value representation used by the report artifact."""
        return [
            f"frames_evaluated = {self.frames_evaluated}",
            f"accuracy = {self.accuracy!r}",
            f"precision = {self.precision!r}",
            f"recall = {self.recall!r}",
        ]


def accumulate(counts: Iterable[ConfusionCounts]) -> EvalReport:
    """Micro-average a sequence of per-frame confusion counts."""
    total = ConfusionCounts.zero()
    frames = 0
    for c in counts:
        total = total.merged(c)
        frames += 1
    per_class = tuple(
        ClassCounts(
            class_id=c,
            tp=int(total.tp[c]),
            fp=int(total.fp[c]),
            fn=int(total.fn[c]),
            precision=_ratio(int(total.tp[c]), int(total.tp[c] + total.fp[c])),
            recall=_ratio(int(total.tp[c]), int(total.tp[c] + total.fn[c])),
        )
        for c in range(NUM_CLASSES)
    )
    return EvalReport(
        accuracy=_ratio(total.correct_pixels, total.total_pixels),
        precision=_ratio(int(total.tp.sum()), int(total.tp.sum() + total.fp.sum())),
        recall=_ratio(int(total.tp.sum()), int(total.tp.sum() + total.fn.sum())),
        per_class=per_class,
        frames_evaluated=frames,
        totals=total,
    )


@dataclass(frozen=True)
class TimingReport:
    """Wall-time statistics of a per-frame run under a worker pool."""

    per_frame: tuple[float, ...]
    mean: float
    p50: float
    p95: float
    worker_count: int

    @classmethod
    def from_times(cls, times: Sequence[float], worker_count: int) -> "TimingReport":
        if not times:
            return cls((), 0.0, 0.0, 0.0, worker_count)
        arr = np.asarray(times, dtype=np.float64)
        return cls(
            tuple(float(t) for t in times),
            float(arr.mean()),
            float(np.percentile(arr, 50)),
            float(np.percentile(arr, 95)),
            worker_count,
        )


def benchmark(
    frames: Sequence[T],
    process: Callable[[T], R],
    worker_count: int = 1,
) -> tuple[list[R], TimingReport]:
    """Run ``process`` over every frame under a bounded thread pool.

    Results come back index-addressed, so outputs are identical for any
    worker count; only the timing differs.
    """
    if worker_count < 1:
        raise ValueError(f"worker_count must be >= 1, got {worker_count}")
    n = len(frames)
    results: list[R] = [None] * n  # type: ignore[list-item]
    times = [0.0] * n

    def task(i: int) -> None:
        start = time.perf_counter()
        results[i] = process(frames[i])
        times[i] = time.perf_counter() - start

    if n:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            list(pool.map(task, range(n)))
    return results, TimingReport.from_times(times, worker_count)
