"""Lloyd's k-means with seeded farthest-point initialization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective_history: list  # sum of squared distances at each assignment step
    iterations: int

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(x.shape[0]))]
    nearest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    """Cluster ``points`` into ``k`` groups.

    Stops when assignments stop changing or after ``max_iters`` updates.
    An emptied cluster is moved onto the point currently farthest from its
    own centroid.
    """
    x = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if x.ndim != 2 or k > x.shape[0]:
        raise ValueError(f"k={k} exceeds the number of points")
    rng = np.random.default_rng(seed)
    centroids = _seed(x, k, rng)
    d = _sq_dists(x, centroids)
    assign = np.argmin(d, axis=1)
    history = [float(d[np.arange(x.shape[0]), assign].sum())]
    it = 0
    for it in range(1, max_iters + 1):
        counts = np.bincount(assign, minlength=k)
        new = np.zeros_like(centroids)
        np.add.at(new, assign, x)
        own = d[np.arange(x.shape[0]), assign]
        taken = set()
        for j in range(k):
            if counts[j]:
                new[j] /= counts[j]
            else:
                far = [i for i in np.argsort(-own, kind="stable") if i not in taken]
                taken.add(far[0])
                new[j] = x[far[0]]
                own[far[0]] = 0.0
        centroids = new
        d = _sq_dists(x, centroids)
        new_assign = np.argmin(d, axis=1)
        history.append(float(d[np.arange(x.shape[0]), new_assign].sum()))
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return KMeansResult(centroids, assign, history, it)


def membership_weights(points, centroids, temperature=None) -> np.ndarray:
    """Soft cluster weights ``softmax(-d^2 / tau)`` per point.

    ``tau`` defaults to the median pairwise squared distance between
    centroids (1.0 when there is a single centroid or all coincide).
    """
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    c = np.asarray(centroids, dtype=np.float64)
    tau = default_temperature(c) if temperature is None else float(temperature)
    z = -_sq_dists(x, c) / tau
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def default_temperature(centroids) -> float:
    c = np.asarray(centroids, dtype=np.float64)
    if c.shape[0] < 2:
        return 1.0
    iu = np.triu_indices(c.shape[0], 1)
    tau = float(np.median(_sq_dists(c, c)[iu]))
    return tau if tau > 0 else 1.0
