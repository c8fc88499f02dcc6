"""Gradient-boosted regression trees for a single code bit.

Logistic loss, second-order (Newton) leaf weights, exact greedy splits at
midpoints between consecutive distinct values. The hot loops live in
:mod:`tailcode.kernels`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from tailcode import kernels

CONSTANT_EPS = 1e-6
NODE_FIELDS = 3  # feature index, threshold, leaf weight
SIGMOID_OPS = 4


@dataclass(frozen=True)
class BoostConfig:
    num_rounds: int = 700
    max_depth: int = 5
    learning_rate: float = 0.1
    l2_lambda: float = 1.0
    min_child_hessian: float = 1.0
    base_score: float = 0.5

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValueError(f"num_rounds must be >= 1, got {self.num_rounds}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.l2_lambda < 0 or self.min_child_hessian < 0:
            raise ValueError("l2_lambda and min_child_hessian must be >= 0")
        if not 0.0 < self.base_score < 1.0:
            raise ValueError(f"base_score must be in (0, 1), got {self.base_score}")


PRESETS = {
    "paper-large": BoostConfig(num_rounds=700, max_depth=5),
    "paper-small": BoostConfig(num_rounds=300, max_depth=3),
    # desk-scale runs and the test suite
    "desk": BoostConfig(num_rounds=60, max_depth=3),
}


def preset(name: str) -> BoostConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def sigmoid(m):
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class BoostedBitClassifier:
    """Trained tree ensemble for one bit.

    Trees are stored in complete-binary layout arrays of shape
    ``(num_trees, 2**(max_depth+1) - 1)``.
    """

    config: BoostConfig
    selected: np.ndarray
    base_margin: float
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    logloss: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constant: bool = False

    @property
    def num_trees(self) -> int:
        return int(self.feature.shape[0])

    @property
    def rounds_completed(self) -> int:
        return int(self.logloss.size)

    @property
    def final_logloss(self) -> Optional[float]:
        return float(self.logloss[-1]) if self.logloss.size else None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return predict_bit_prob(self, x)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "selected": [int(i) for i in self.selected],
            "base_margin": float(self.base_margin),
            "constant": self.constant,
            "logloss": [float(v) for v in self.logloss],
            "trees": [_tree_to_records(self.feature[t], self.threshold[t], self.value[t])
                      for t in range(self.num_trees)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedBitClassifier":
        config = BoostConfig(**d["config"])
        m_nodes = (1 << (config.max_depth + 1)) - 1
        nt = len(d["trees"])
        feature = np.full((nt, m_nodes), -2, dtype=np.int32)
        threshold = np.zeros((nt, m_nodes))
        value = np.zeros((nt, m_nodes))
        for t, rec in enumerate(d["trees"]):
            _records_to_tree(rec, feature[t], threshold[t], value[t])
        return cls(config=config, selected=np.asarray(d["selected"], dtype=np.intp),
                   base_margin=float(d["base_margin"]), feature=feature,
                   threshold=threshold, value=value,
                   logloss=np.asarray(d["logloss"], dtype=np.float64),
                   constant=bool(d["constant"]))


def _tree_to_records(feature, threshold, value) -> dict:
    # renumber used slots in breadth-first order with explicit child links
    slots = [0]
    rec = {"feature": [], "threshold": [], "left": [], "right": [], "weight": []}
    k = 0
    while k < len(slots):
        j = slots[k]
        k += 1
        f = int(feature[j])
        rec["feature"].append(f)
        if f >= 0:
            rec["threshold"].append(float(threshold[j]))
            rec["left"].append(len(slots))
            rec["right"].append(len(slots) + 1)
            rec["weight"].append(0.0)
            slots.extend([2 * j + 1, 2 * j + 2])
        else:
            rec["threshold"].append(0.0)
            rec["left"].append(-1)
            rec["right"].append(-1)
            rec["weight"].append(float(value[j]))
    return rec


def _records_to_tree(rec, feature, threshold, value) -> None:
    stack = [(0, 0)]
    while stack:
        r, j = stack.pop()
        f = rec["feature"][r]
        feature[j] = f
        if f >= 0:
            threshold[j] = rec["threshold"][r]
            stack.append((rec["left"][r], 2 * j + 1))
            stack.append((rec["right"][r], 2 * j + 2))
        else:
            value[j] = rec["weight"][r]


def canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation sorting by (x[:,0], x[:,1], ..., y).

    Training on the canonically ordered rows makes every floating-point
    sum independent of the caller's sample order.
    """
    keys = [y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def train_bit_classifier(matrix, bit_labels, config: BoostConfig = BoostConfig(),
                         selected=None) -> BoostedBitClassifier:
    """Fit a boosted ensemble to binary ``bit_labels``.

    ``matrix`` holds only the selected feature columns; ``selected`` records
    which columns of the full feature vector they are (default: all, in order).
    Single-class labels give a constant model with no trees.
    """
    x = np.ascontiguousarray(matrix, dtype=np.float64)
    y = np.asarray(bit_labels, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {x.shape}")
    if x.shape[0] != y.size:
        raise ValueError(f"matrix has {x.shape[0]} rows but {y.size} labels")
    if x.shape[0] < 2 or x.shape[1] < 1:
        raise ValueError("need at least 2 samples and 1 feature")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bit_labels must be 0/1")
    if not np.all(np.isfinite(x)):
        raise ValueError("matrix contains non-finite values")
    sel = np.arange(x.shape[1], dtype=np.intp) if selected is None else np.asarray(selected, dtype=np.intp)
    if sel.size != x.shape[1]:
        raise ValueError("selected must name one column per matrix column")

    m_nodes = (1 << (config.max_depth + 1)) - 1
    empty = (np.zeros((0, m_nodes), dtype=np.int32), np.zeros((0, m_nodes)), np.zeros((0, m_nodes)))
    if y.min() == y.max():
        p = min(max(float(y[0]), CONSTANT_EPS), 1.0 - CONSTANT_EPS)
        return BoostedBitClassifier(config, sel, logit(p), *empty, constant=True)

    perm = canonical_order(x, y)
    xt = np.ascontiguousarray(x[perm].T)
    yc = np.ascontiguousarray(y[perm])
    order = np.ascontiguousarray(np.argsort(xt, axis=1, kind="stable").astype(np.intp))
    base = logit(config.base_score)
    feature, threshold, value, loss = kernels.fit_trees(
        xt, order, yc, base, config.num_rounds, config.max_depth,
        config.learning_rate, config.l2_lambda, config.min_child_hessian)
    return BoostedBitClassifier(config, sel, base, feature, threshold, value, loss)


def predict_margin(model: BoostedBitClassifier, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if model.selected.size and x.shape[1] <= int(model.selected.max()):
        raise ValueError(
            f"feature vector has {x.shape[1]} columns; model needs index {int(model.selected.max())}")
    if model.num_trees == 0:
        return np.full(x.shape[0], model.base_margin)
    xs = np.ascontiguousarray(x[:, model.selected])
    return kernels.predict_margin(xs, model.feature, model.threshold, model.value, model.base_margin)


def predict_bit_prob(model: BoostedBitClassifier, x):
    """P(bit = 1) for one feature vector (returns a float) or a batch (returns an array)."""
    single = np.ndim(x) == 1
    p = sigmoid(predict_margin(model, x))
    # keep strictly inside (0, 1) even when the margin saturates
    p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return float(p[0]) if single else p


def tree_depths(model: BoostedBitClassifier) -> np.ndarray:
    """Depth of the deepest leaf in each tree (0 for a single-leaf tree)."""
    depths = np.zeros(model.num_trees, dtype=np.int64)
    for t in range(model.num_trees):
        used = np.flatnonzero(model.feature[t] >= -1)
        depths[t] = int(np.floor(np.log2(used.max() + 1))) if used.size else 0
    return depths


def footprint(model: BoostedBitClassifier) -> tuple[int, int]:
    """``(param_count, ops_per_query)``.

    Parameters: every stored node carries :data:`NODE_FIELDS` numbers.
    Operations per query: one compare per level of each tree's deepest path
    plus one add per tree, one add for the base margin and four for the
    sigmoid.
    """
    nodes = int(np.count_nonzero(model.feature >= -1))
    ops = 1 + SIGMOID_OPS + int(tree_depths(model).sum()) + model.num_trees
    return nodes * NODE_FIELDS, ops
