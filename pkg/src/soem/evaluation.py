"""Cluster-quality and map-ordering metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import spearmanr

from .errors import ValidationError
from .linalg import delta
from .trainer import as_matrix_stack, deviation_matrix

VIOLATION_TOL = 1e-10


@dataclass
class MetricReport:
    db: Optional[float] = None
    db_random_mean: Optional[float] = None
    db_ratio: Optional[float] = None
    topo_accuracy: float = 0.0
    mean_runnerup_distance: float = 0.0
    rank_distance_curve: List[Tuple[int, float]] = field(default_factory=list)
    rank_distance_spearman: Optional[float] = None

    def to_dict(self):
        d = asdict(self)
        d["rank_distance_curve"] = [[int(k), float(v)] for k, v in self.rank_distance_curve]
        return {k: _json_float(v) for k, v in d.items()}


def _json_float(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def davies_bouldin(coords, labels):
    """Davies-Bouldin index of labelled grid placements.

    Scatter is the mean Euclidean distance of a class's members to its
    centroid. Two classes with coincident centroids give ``inf``.
    """
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(labels)
    if coords.ndim != 2 or coords.shape[0] != labels.shape[0]:
        raise ValidationError("need one coordinate row per label")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValidationError("Davies-Bouldin needs at least two classes")
    cents = np.array([coords[labels == k].mean(axis=0) for k in classes])
    scatter = np.array([np.linalg.norm(coords[labels == k] - c, axis=1).mean() for k, c in zip(classes, cents)])
    worst = np.empty(classes.size)
    for a in range(classes.size):
        best = 0.0
        for b in range(classes.size):
            if a == b:
                continue
            sep = np.linalg.norm(cents[a] - cents[b])
            r = math.inf if sep == 0 else (scatter[a] + scatter[b]) / sep
            best = max(best, r)
        worst[a] = best
    return float(worst.mean())


def random_placements(n, rows, cols, rng):
    """Uniform continuous locations over the grid's square extent."""
    return np.column_stack([rng.uniform(0, rows - 1, n), rng.uniform(0, cols - 1, n)])


def db_random_baseline(labels, rows, cols, draws=100, seed=0):
    """Mean DB over ``draws`` uniform random placements of the same labels."""
    if draws < 1:
        raise ValidationError("draws must be >= 1")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    vals = [davies_bouldin(random_placements(labels.size, rows, cols, rng), labels) for _ in range(draws)]
    return float(np.mean(vals))


def is_neighbour(a, b):
    """8-connected adjacency of two distinct grid nodes."""
    a, b = np.asarray(a), np.asarray(b)
    cheb = np.max(np.abs(a - b), axis=-1)
    return cheb == 1


def topographic_accuracy(assignment):
    """Fraction of inputs whose runner-up node is an 8-neighbour of the winner."""
    if len(assignment) == 0:
        return 0.0
    return float(np.mean(is_neighbour(assignment.winner, assignment.runner_up)))


def mean_runnerup_distance(assignment):
    d = np.linalg.norm((assignment.winner - assignment.runner_up).astype(float), axis=1)
    return float(d.mean()) if d.size else 0.0


def rank_distance_curve(emap, inputs, max_rank=None):
    """Mean grid distance from the winner of the node ranked k-th, for k = 1..max_rank."""
    n = emap.n_nodes
    max_rank = n if max_rank is None else max_rank
    if not 1 <= max_rank <= n:
        raise ValidationError(f"max_rank must be in [1, {n}]")
    dev = deviation_matrix(emap, inputs)
    coords = emap.coords().astype(float)
    order = np.argsort(dev, axis=1, kind="stable")[:, :max_rank]
    ranked = coords[order]  # (M, max_rank, 2)
    dist = np.linalg.norm(ranked - ranked[:, :1, :], axis=2)
    mean = dist.mean(axis=0)
    return [(k + 1, float(mean[k])) for k in range(max_rank)]


def curve_spearman(curve):
    ranks = [k for k, _ in curve]
    dists = [d for _, d in curve]
    if len(curve) < 3 or np.ptp(dists) == 0:
        return 0.0
    return float(spearmanr(ranks, dists)[0])


def deviation_surface(emap, C):
    """Deviation of a single input at every node, shape (rows, cols)."""
    return deviation_matrix(emap, [C])[0].reshape(emap.rows, emap.cols)


class DeltaCache:
    """Memoised pairwise delta values keyed by unordered index pair."""

    def __init__(self, matrices, tol=1e-8, max_sweeps=100):
        self.matrices = as_matrix_stack(matrices)
        self.tol = tol
        self.max_sweeps = max_sweeps
        self._cache: Dict[Tuple[int, int], float] = {}

    def __call__(self, i, j):
        key = (i, j) if i <= j else (j, i)
        if key not in self._cache:
            if i == j:
                self._cache[key] = 0.0
            else:
                self._cache[key] = delta(
                    [self.matrices[key[0]], self.matrices[key[1]]], tol=self.tol, max_sweeps=self.max_sweeps
                )
        return self._cache[key]

    def matrix(self):
        n = len(self.matrices)
        D = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                D[i, j] = D[j, i] = self(i, j)
        return D


def triangle_violation_rate(covs, triplets, seed=0, cache=None):
    """Sample index triples (i, j, k), all distinct, and count ``d(i,j) > d(i,k) + d(k,j) + 1e-10``.

    Returns ``(rate, count)``.
    """
    n = len(covs)
    if n < 3:
        raise ValidationError("need at least three covariances")
    if triplets <= 0:
        return 0.0, 0
    cache = cache or DeltaCache(covs)
    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(triplets):
        i, j, k = rng.choice(n, size=3, replace=False)
        if cache(i, j) > cache(i, k) + cache(k, j) + VIOLATION_TOL:
            count += 1
    return count / triplets, count


def within_between_delta(D, labels):
    """Mean pairwise delta within classes and across classes."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    iu = np.triu_indices(len(labels), 1)
    within = D[iu][same[iu]]
    between = D[iu][~same[iu]]
    return float(within.mean()), float(between.mean())


def evaluate(emap, inputs, assignment, labels=None, draws=100, seed=0, max_rank=None):
    """Assemble a :class:`MetricReport` for a trained map."""
    report = MetricReport()
    if labels is not None and len(set(labels)) >= 2:
        report.db = davies_bouldin(assignment.winner, labels)
        report.db_random_mean = db_random_baseline(labels, emap.rows, emap.cols, draws, seed)
        if report.db_random_mean > 0:
            report.db_ratio = report.db / report.db_random_mean
    report.topo_accuracy = topographic_accuracy(assignment)
    report.mean_runnerup_distance = mean_runnerup_distance(assignment)
    report.rank_distance_curve = rank_distance_curve(emap, inputs, max_rank)
    report.rank_distance_spearman = curve_spearman(report.rank_distance_curve)
    return report
