"""Seeded k-means (Lloyd's algorithm) over frustum points and the
keep-one-cluster refinement that strips background noise.

Runs are reproducible: restarts draw from a single generator seeded by the
config, and the pipeline derives an independent stream per frustum so worker
scheduling cannot change results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FrustumPointError

__all__ = [
    "SELECTION_MODES",
    "KMeansConfig",
    "ClusterResult",
    "RefinementStats",
    "DropRateSummary",
    "TooFewPointsError",
    "kmeans",
    "lloyd_run",
    "refine_frustum",
    "aggregate_drop_rate",
]

SELECTION_MODES = ("nearest", "largest", "densest")

# Swap polish runs on inputs up to this size. Lloyd's shallow local minima
# only matter at small n, and each best-move scan costs O(n*k).
SWAP_POLISH_MAX_POINTS = 512


class TooFewPointsError(FrustumPointError):
    """kmeans needs at least k points."""


@dataclass(frozen=True)
class KMeansConfig:
    """Clustering knobs: cluster count, iteration cap, convergence threshold
    on centroid motion (meters), seed, restart count (best inertia wins),
    and which cluster refinement keeps."""

    k: int = 3
    max_iter: int = 100
    tol: float = 1e-4
    seed: int = 0
    restarts: int = 5
    selection: str = "nearest"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}, got {self.selection!r}")


@dataclass(frozen=True, eq=False)
class ClusterResult:
    """Outcome of one k-means solve.

    ``inertia`` is the summed squared distance of points to their assigned
    centroid; ``inertia_history`` records it after each Lloyd update and
    each accepted swap move of the winning run (non-increasing).
    ``iterations_used`` counts Lloyd iterations only.
    """

    assignments: np.ndarray  # (n,) int32 in [0, k)
    centroids: np.ndarray  # (k, 3) float64
    inertia: float
    iterations_used: int
    inertia_history: tuple[float, ...]


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def lloyd_run(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> ClusterResult:
    """One k-means descent from a random distinct-point initialization.

    Lloyd assign/update iterations run until the largest centroid motion
    drops below ``tol`` or ``max_iter`` is hit; empty clusters are reseeded
    with the point lying farthest from its assigned centroid (donor clusters
    must keep at least one member). The converged solution is then polished
    with single-point swap moves (Hartigan criterion, best move first),
    which escapes the shallow local minima Lloyd alone gets stuck in on
    small inputs.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < k:
        raise TooFewPointsError(f"need at least k={k} points, got {n}")

    centroids = pts[rng.choice(n, size=k, replace=False)].copy()
    history: list[float] = []
    assignments = np.zeros(n, dtype=np.int32)
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = _squared_distances(pts, centroids)
        assignments = d2.argmin(axis=1).astype(np.int32)
        counts = np.bincount(assignments, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            own = d2[np.arange(n), assignments]
            order = np.argsort(-own, kind="stable")
            cursor = 0
            for j in empty:
                while cursor < len(order) and counts[assignments[order[cursor]]] <= 1:
                    cursor += 1
                if cursor >= len(order):
                    break
                steal = order[cursor]
                counts[assignments[steal]] -= 1
                counts[j] += 1
                assignments[steal] = j
                cursor += 1

        sums = np.zeros((k, 3))
        np.add.at(sums, assignments, pts)
        # counts >= 1 everywhere after the reseed above (n >= k guarantees a
        # donor); the where() only shields the unreachable fallback.
        safe = np.maximum(counts, 1)[:, None]
        new_centroids = np.where(counts[:, None] > 0, sums / safe, centroids)
        inertia = float(((pts - new_centroids[assignments]) ** 2).sum())
        history.append(inertia)
        motion = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if motion < tol:
            break

    if n <= SWAP_POLISH_MAX_POINTS:
        assignments, centroids, polish_history = _swap_polish(pts, k, assignments, history[-1])
        history.extend(polish_history)

    return ClusterResult(
        assignments=assignments,
        centroids=centroids,
        inertia=history[-1],
        iterations_used=iterations,
        inertia_history=tuple(history),
    )


def _swap_polish(
    pts: np.ndarray,
    k: int,
    assignments: np.ndarray,
    inertia: float,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Greedy single-point swap descent from a converged Lloyd solution.

    Applies the strictly best improving move (Hartigan criterion: weighted
    removal gain vs insertion cost) one at a time until none remains.
    Strict decrease plus a move cap guarantees termination.
    """
    n = len(pts)
    history: list[float] = []
    if k < 2 or n <= k:
        return assignments, _exact_centroids(pts, k, assignments), history

    assignments = assignments.copy()
    counts = np.bincount(assignments, minlength=k).astype(np.float64)
    sums = np.zeros((k, 3))
    np.add.at(sums, assignments, pts)
    idx = np.arange(n)
    for _ in range(4 * n + 16):
        means = sums / counts[:, None]
        d2 = _squared_distances(pts, means)
        own = d2[idx, assignments]
        with np.errstate(divide="ignore", invalid="ignore"):
            removal = own * counts[assignments] / (counts[assignments] - 1.0)
        delta = d2 * (counts / (counts + 1.0))[None, :] - removal[:, None]
        delta[idx, assignments] = np.inf
        delta[counts[assignments] <= 1, :] = np.inf  # never empty a cluster
        move = int(delta.argmin())
        i, j = divmod(move, k)
        if not delta[i, j] < -1e-12 * (1.0 + inertia):
            break
        src = assignments[i]
        sums[src] -= pts[i]
        counts[src] -= 1.0
        sums[j] += pts[i]
        counts[j] += 1.0
        assignments[i] = j
        means = sums / counts[:, None]
        inertia = float(((pts - means[assignments]) ** 2).sum())
        history.append(inertia)
    return assignments, _exact_centroids(pts, k, assignments), history


def _exact_centroids(pts: np.ndarray, k: int, assignments: np.ndarray) -> np.ndarray:
    sums = np.zeros((k, 3))
    np.add.at(sums, assignments, pts)
    counts = np.maximum(np.bincount(assignments, minlength=k), 1)
    return sums / counts[:, None]


def kmeans(points, cfg: KMeansConfig, *, rng: np.random.Generator | None = None) -> ClusterResult:
    """Best of ``cfg.restarts`` Lloyd runs by final inertia.

    Fully determined by ``cfg.seed`` (or by the supplied generator's state).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < cfg.k:
        raise TooFewPointsError(f"need at least k={cfg.k} points, got {len(pts)}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    best: ClusterResult | None = None
    for _ in range(cfg.restarts):
        result = lloyd_run(pts, cfg.k, rng, max_iter=cfg.max_iter, tol=cfg.tol)
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    return best


@dataclass(frozen=True)
class RefinementStats:
    """Point counts before/after keeping one cluster."""

    points_before: int
    points_after: int
    drop_rate: float

    def __post_init__(self):
        if self.points_after > self.points_before:
            raise ValueError("points_after cannot exceed points_before")
        expected = self._rate(self.points_before, self.points_after)
        if abs(self.drop_rate - expected) > 1e-12:
            raise ValueError(f"drop_rate {self.drop_rate} inconsistent with counts")

    @staticmethod
    def _rate(before: int, after: int) -> float:
        return 1.0 - after / before if before > 0 else 0.0

    @classmethod
    def from_counts(cls, before: int, after: int) -> "RefinementStats":
        return cls(before, after, cls._rate(before, after))


def _cluster_scores(pts: np.ndarray, result: ClusterResult, selection: str) -> np.ndarray:
    """Per-cluster score where the minimum wins (ties -> lower index)."""
    k = len(result.centroids)
    if selection == "nearest":
        return np.sqrt((result.centroids**2).sum(axis=1))
    counts = np.bincount(result.assignments, minlength=k)
    if selection == "largest":
        return -counts.astype(np.float64)
    # densest: minimal mean member-to-centroid distance
    dists = np.sqrt(((pts - result.centroids[result.assignments]) ** 2).sum(axis=1))
    sums = np.zeros(k)
    np.add.at(sums, result.assignments, dists)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
    return mean


def refine_frustum(
    points,
    cfg: KMeansConfig,
    *,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, RefinementStats]:
    """Cluster a frustum's points and keep exactly one cluster.

    Frustums with fewer than 2k points are kept whole (clustering tiny sets
    is unstable). Returns indices into the input sequence plus the
    before/after stats.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 2 * cfg.k:
        return np.arange(n), RefinementStats.from_counts(n, n)
    result = kmeans(pts, cfg, rng=rng)
    scores = _cluster_scores(pts, result, cfg.selection)
    chosen = int(np.argmin(scores))
    kept = np.flatnonzero(result.assignments == chosen)
    return kept, RefinementStats.from_counts(n, len(kept))


@dataclass(frozen=True)
class DropRateSummary:
    """Aggregate of per-frame refinement: mean weighted by points_before,
    min/max over frames that had points."""

    mean: float
    min: float
    max: float
    per_frame: tuple[float, ...]


def aggregate_drop_rate(stats: Iterable[RefinementStats] | Sequence[RefinementStats]) -> DropRateSummary:
    stats = list(stats)
    per_frame = tuple(s.drop_rate for s in stats)
    total_before = sum(s.points_before for s in stats)
    if total_before == 0:
        return DropRateSummary(0.0, 0.0, 0.0, per_frame)
    total_after = sum(s.points_after for s in stats)
    mean = 1.0 - total_after / total_before
    eligible = [s.drop_rate for s in stats if s.points_before > 0]
    return DropRateSummary(mean, min(eligible), max(eligible), per_frame)
