"""Size-constrained K-means over station coordinates.

Each assignment step is an exact minimum-cost assignment under per-cluster
size bounds; centers move to member means only while the cluster size is
within bounds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ingest import StationLocation

MAX_ITERATIONS = 1000


class InfeasibleClustering(ValueError):
    pass


@dataclass
class ClusterProblem:
    cs_ids: list[str]
    points: np.ndarray  # (N, 2) planar coordinates
    k: int
    size_min: int
    size_max: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(len(self.cs_ids), -1)
        n = len(self.cs_ids)
        if self.k < 1:
            raise InfeasibleClustering("need at least one cluster")
        if self.size_min < 0 or self.size_max < self.size_min:
            raise InfeasibleClustering("bounds must satisfy 0 <= size_min <= size_max")
        if not self.k * self.size_min <= n <= self.k * self.size_max:
            raise InfeasibleClustering(
                f"{n} points cannot fill {self.k} clusters of size [{self.size_min}, {self.size_max}]")

    @property
    def n_points(self) -> int:
        return len(self.cs_ids)

    @classmethod
    def from_locations(cls, locations: Sequence[StationLocation], k: int, size_min: int,
                       size_max: int) -> ClusterProblem:
        return cls([s.cs_id for s in locations],
                   np.array([[s.latitude, s.longitude] for s in locations]), k, size_min, size_max)


@dataclass
class ClusterSolution:
    labels: np.ndarray  # cluster index per point, in problem order
    centers: np.ndarray
    objective: float
    cs_ids: list[str]
    iterations: int = 0
    converged: bool = True
    objective_history: list[float] = field(default_factory=list)
    label_history: list[np.ndarray] = field(default_factory=list)
    center_history: list[np.ndarray] = field(default_factory=list)

    @property
    def membership(self) -> dict[str, int]:
        return {cs: int(c) for cs, c in zip(self.cs_ids, self.labels)}

    def members(self, cluster: int) -> list[str]:
        return [cs for cs, c in zip(self.cs_ids, self.labels) if c == cluster]


def squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ikd,ikd->ik", diff, diff)


def objective(points: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    d = squared_distances(points, centers)
    return float(d[np.arange(len(labels)), labels].sum())


def assign(problem: ClusterProblem, centers: np.ndarray) -> np.ndarray:
    """Size-bounded assignment minimizing total squared distance.

    Every cluster gets ``size_min`` mandatory slots and ``size_max - size_min``
    optional ones. Dummy rows, allowed only on optional slots, pad the cost
    matrix to square so that every mandatory slot must take a real point.
    """
    centers = np.asarray(centers, dtype=float).reshape(problem.k, -1)
    n, k = problem.n_points, problem.k
    lo, hi = problem.size_min, problem.size_max
    d = squared_distances(problem.points, centers)
    slot_cluster = np.concatenate([np.repeat(np.arange(k), lo), np.repeat(np.arange(k), hi - lo)])
    mandatory = np.arange(slot_cluster.size) < k * lo
    n_dummy = slot_cluster.size - n
    cost = np.zeros((n + n_dummy, slot_cluster.size))
    cost[:n] = d[:, slot_cluster]
    cost[n:, mandatory] = np.inf
    rows, cols = linear_sum_assignment(cost)
    labels = np.empty(n, dtype=int)
    real = rows < n
    labels[rows[real]] = slot_cluster[cols[real]]
    return labels


def update_centers(problem: ClusterProblem, labels: np.ndarray,
                   previous_centers: np.ndarray) -> np.ndarray:
    """Member mean for clusters whose size is within bounds (and nonzero); others keep theirs."""
    centers = np.array(previous_centers, dtype=float).reshape(problem.k, -1)
    for c in range(problem.k):
        members = problem.points[labels == c]
        if members.shape[0] and problem.size_min <= members.shape[0] <= problem.size_max:
            centers[c] = members.mean(axis=0)
    return centers


def initial_centers(problem: ClusterProblem, seed: int) -> np.ndarray:
    """K distinct points drawn with a seeded generator (repeats only if too few distinct points)."""
    rng = np.random.default_rng(seed)
    distinct = np.unique(problem.points, axis=0)
    if distinct.shape[0] >= problem.k:
        return distinct[np.sort(rng.choice(distinct.shape[0], problem.k, replace=False))].copy()
    return problem.points[rng.choice(problem.n_points, problem.k, replace=False)].copy()


def cluster_cs(problem: ClusterProblem, seed: int = 0,
               max_iterations: int = MAX_ITERATIONS) -> ClusterSolution:
    """Alternate exact assignment and center updates until the centers stop moving."""
    centers = initial_centers(problem, seed)
    history, label_hist, center_hist = [], [], []
    labels = None
    converged = False
    for it in range(1, max_iterations + 1):
        labels = assign(problem, centers)
        center_hist.append(centers.copy())
        label_hist.append(labels.copy())
        history.append(objective(problem.points, labels, centers))
        new_centers = update_centers(problem, labels, centers)
        if np.array_equal(new_centers, centers):
            converged = True
            break
        centers = new_centers
    return ClusterSolution(labels, centers, history[-1], list(problem.cs_ids), it, converged,
                           history, label_hist, center_hist)


def write_membership(solution: ClusterSolution, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cs_id", "cluster"])
        for cs, c in zip(solution.cs_ids, solution.labels):
            w.writerow([cs, int(c)])
