"""Discriminant feature test: score each 1-D feature by its best binary split.

A feature's loss is the sample-weighted mean of the left and right
partition losses at the best of ``num_thresholds`` evenly spaced cut
points; lower loss means a more discriminant feature.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class DftConfig:
    num_thresholds: int = 32
    loss_kind: str = "entropy"  # or "focal"
    focal_alpha: float = 1.0
    focal_gamma: float = 2.0
    prob_clamp_eps: float = 1e-6

    def __post_init__(self):
        if self.num_thresholds < 2:
            raise ValueError("num_thresholds must be >= 2")
        if self.loss_kind not in ("entropy", "focal"):
            raise ValueError(f"loss_kind must be 'entropy' or 'focal', got {self.loss_kind!r}")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if not 0 < self.prob_clamp_eps < 0.5:
            raise ValueError("prob_clamp_eps must be in (0, 0.5)")


@dataclass(frozen=True)
class PartitionLoss:
    feature_index: int
    threshold: float
    loss: float
    n_left: int
    n_right: int
    degenerate: bool = False


@dataclass
class DftRanking:
    entries: list  # PartitionLoss, ascending by (loss, feature_index)
    selected_indices: Optional[np.ndarray] = None

    @property
    def order(self) -> np.ndarray:
        return np.array([e.feature_index for e in self.entries], dtype=np.intp)

    @property
    def losses(self) -> np.ndarray:
        return np.array([e.loss for e in self.entries], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature_index", "threshold", "loss"])
        for e in self.entries:
            w.writerow([e.feature_index, repr(float(e.threshold)), repr(float(e.loss))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "feature_index": [int(e.feature_index) for e in self.entries],
            "threshold": [float(e.threshold) for e in self.entries],
            "loss": [float(e.loss) for e in self.entries],
            "n_left": [int(e.n_left) for e in self.entries],
            "degenerate": [bool(e.degenerate) for e in self.entries],
            "selected": None if self.selected_indices is None else [int(i) for i in self.selected_indices],
        }

    @classmethod
    def from_dict(cls, d: dict, n_total: Optional[int] = None) -> "DftRanking":
        entries = []
        for i, fi in enumerate(d["feature_index"]):
            nl = d["n_left"][i]
            entries.append(PartitionLoss(fi, d["threshold"][i], d["loss"][i], nl,
                                         (n_total - nl) if n_total is not None else 0,
                                         d["degenerate"][i]))
        sel = None if d.get("selected") is None else np.asarray(d["selected"], dtype=np.intp)
        return cls(entries, sel)


@lru_cache(maxsize=65536)
def partition_entropy(n_pos: int, n_neg: int) -> float:
    """Binary entropy (nats) of a partition with the given label counts."""
    n = n_pos + n_neg
    if n < 1:
        raise ValueError("partition must contain at least one sample")
    p = n_pos / n
    h = 0.0
    if p > 0.0:
        h -= p * math.log(p)
    if p < 1.0:
        h -= (1.0 - p) * math.log(1.0 - p)
    return h


def focal_term(p: float, alpha: float = 1.0, gamma: float = 2.0, eps: float = 1e-6) -> float:
    """Focal loss of a partition whose positive fraction is ``p``."""
    p = min(max(p, eps), 1.0 - eps)
    return -alpha * (1.0 - p) ** gamma * math.log(p)


def _partition_loss(n_pos: int, n: int, config: DftConfig) -> float:
    if config.loss_kind == "entropy":
        return partition_entropy(n_pos, n - n_pos)
    return focal_term(n_pos / n, config.focal_alpha, config.focal_gamma, config.prob_clamp_eps)


def candidate_thresholds(lo: float, hi: float, num: int) -> np.ndarray:
    j = np.arange(1, num + 1, dtype=np.float64)
    return lo + (hi - lo) * j / (num + 1)


def dft_score_feature(values, labels, config: DftConfig = DftConfig(),
                      feature_index: int = 0) -> PartitionLoss:
    v = np.asarray(values, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if v.size != y.size:
        raise ValueError(f"{v.size} values but {y.size} labels")
    if v.size < 2:
        raise ValueError("need at least 2 samples")
    n = v.size
    n_pos_total = int(y.sum())
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return PartitionLoss(feature_index, lo, _partition_loss(n_pos_total, n, config), n, 0,
                             degenerate=True)

    srt = np.argsort(v, kind="stable")
    sv = v[srt]
    cum_pos = np.concatenate([[0], np.cumsum(y[srt])])
    thresholds = candidate_thresholds(lo, hi, config.num_thresholds)
    n_left = np.searchsorted(sv, thresholds, side="right")

    best = None
    for t, nl in zip(thresholds, n_left):
        nl = int(nl)
        nr = n - nl
        if nl == 0 or nr == 0:
            continue
        pl = int(cum_pos[nl])
        pr = n_pos_total - pl
        loss = (nl * _partition_loss(pl, nl, config) + nr * _partition_loss(pr, nr, config)) / n
        if best is None or loss < best.loss:
            best = PartitionLoss(feature_index, float(t), loss, nl, nr)
    return best


def rank_features(matrix, bit_labels, config: DftConfig = DftConfig(),
                  columns=None) -> DftRanking:
    """Score every column and sort ascending by (loss, feature index).

    ``columns`` optionally names the feature index reported for each column.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("matrix must be a non-empty 2-D array")
    names = range(x.shape[1]) if columns is None else [int(c) for c in columns]
    scored = [dft_score_feature(x[:, j], bit_labels, config, feature_index=name)
              for j, name in enumerate(names)]
    scored.sort(key=lambda e: (e.loss, e.feature_index))
    return DftRanking(scored)


def elbow_index(losses) -> int:
    """Rank of the point farthest from the chord joining the first and last
    points of the sorted loss curve; the last rank if the curve is straight."""
    y = np.asarray(losses, dtype=np.float64)
    n = y.size
    if n <= 2:
        return n - 1
    x = np.arange(n, dtype=np.float64)
    # |cross product| is proportional to the perpendicular distance
    dist = np.abs((n - 1) * (y - y[0]) - x * (y[-1] - y[0]))
    k = int(np.argmax(dist))
    return n - 1 if dist[k] == 0 else k


def select_features(ranking: DftRanking, mode: str = "top_k", k: Optional[int] = None) -> np.ndarray:
    """Indices of the selected features in rank order.

    ``mode`` is ``"top_k"`` (first ``k`` ranks), ``"elbow"`` or ``"all"``.
    """
    if not ranking.entries:
        raise ValueError("empty ranking")
    order = ranking.order
    if mode == "top_k":
        if k is None:
            raise ValueError("top_k selection needs k")
        if not 1 <= k <= order.size:
            raise ValueError(f"k must be in [1, {order.size}], got {k}")
        chosen = order[:k]
    elif mode == "elbow":
        chosen = order[:elbow_index(ranking.losses) + 1]
    elif mode == "all":
        chosen = order
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    ranking.selected_indices = chosen.copy()
    return chosen.copy()
