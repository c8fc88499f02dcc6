"""Synthetic long-tail datasets with two feature views, plus the CSV schema.

Every (context, relation) pair is its own global relation id
``context * relations_per_context + local``. Pair frequencies follow a Zipf
law over a seeded shuffle of the pairs, so rare relations scatter across
contexts.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SPLITS = ("train", "val", "test")
HYPERCUBE_SIDE = 6.0
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


class DataError(ValueError):
    """Malformed dataset file or unusable dataset contents."""


@dataclass(frozen=True)
class GeneratorConfig:
    num_contexts: int = 10
    relations_per_context: int = 8
    zipf_exponent: float = 2.0
    total_samples: int = 12000
    view_a_dims: int = 8
    view_b_dims: int = 8
    noise_dims: int = 8
    cluster_sigma: float = 1.0
    view_b_informative: float = 0.3
    rare_threshold: int = 10
    seed: int = 7

    def __post_init__(self):
        if self.num_contexts < 1:
            raise ValueError("num_contexts must be >= 1")
        if not 2 <= self.relations_per_context <= 16:
            raise ValueError("relations_per_context must be in [2, 16]")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be >= 0")
        if self.view_a_dims < 1 or self.view_b_dims < 1 or self.noise_dims < 0:
            raise ValueError("view dims must be >= 1 and noise_dims >= 0")
        if self.cluster_sigma <= 0:
            raise ValueError("cluster_sigma must be > 0")
        if not 0.0 <= self.view_b_informative <= 1.0:
            raise ValueError("view_b_informative must be in [0, 1]")
        if self.rare_threshold < 0:
            raise ValueError("rare_threshold must be >= 0")

    @property
    def num_relations(self) -> int:
        return self.num_contexts * self.relations_per_context


@dataclass
class LongTailDataset:
    features: np.ndarray  # (rows, a_cols + b_cols)
    view_a_columns: np.ndarray
    view_b_columns: np.ndarray
    context: np.ndarray
    relation: np.ndarray
    split: np.ndarray  # 0 train, 1 val, 2 test
    row_id: np.ndarray
    rare_threshold: int = 10
    num_relations: Optional[int] = None

    def __post_init__(self):
        if self.num_relations is None:
            self.num_relations = int(self.relation.max()) + 1 if self.relation.size else 0

    @property
    def column_names(self) -> list:
        return ([f"a_{i}" for i in range(self.view_a_columns.size)]
                + [f"b_{i}" for i in range(self.view_b_columns.size)])

    def mask(self, name: str) -> np.ndarray:
        return self.split == SPLITS.index(name)

    @property
    def train_counts(self) -> np.ndarray:
        return np.bincount(self.relation[self.mask("train")], minlength=self.num_relations)

    @property
    def rare_set(self) -> frozenset:
        counts = self.train_counts
        return frozenset(int(r) for r in np.flatnonzero(counts < self.rare_threshold))

    def schema_hash(self) -> str:
        header = ",".join(["row_id", "split", "context", "relation"] + self.column_names)
        return hashlib.sha256(header.encode()).hexdigest()[:16]

    def subset(self, rows) -> "LongTailDataset":
        return LongTailDataset(self.features[rows], self.view_a_columns, self.view_b_columns,
                               self.context[rows], self.relation[rows], self.split[rows],
                               self.row_id[rows], self.rare_threshold, self.num_relations)


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** (-exponent)
    return w / w.sum()


def allocate_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of ``total * weights`` (ties to lower index)."""
    raw = total * weights
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    frac = raw - counts
    order = np.lexsort((np.arange(weights.size), -frac))
    counts[order[:short]] += 1
    return counts


def minimum_samples(config: GeneratorConfig) -> int:
    """Smallest total that gives every relation at least one sample."""
    w = zipf_weights(config.num_relations, config.zipf_exponent)
    n = config.num_relations
    while allocate_counts(n, w).min() < 1:
        n += 1
    return n


def samples_for_rare_fraction(config: GeneratorConfig, fraction: float) -> int:
    """Total sample count at which at least ``fraction`` of the relations
    end up with fewer than ``rare_threshold`` training samples.

    Returns the largest such total that still gives every relation a
    sample (so the tail is as populated as the rare target allows).
    """
    w = zipf_weights(config.num_relations, config.zipf_exponent)
    need = math.ceil(fraction * config.num_relations)
    lo = minimum_samples(config)
    if _rare_count(lo, w, config.rare_threshold) < need:
        raise ValueError(f"no total sample count reaches a rare fraction of {fraction}")
    hi = lo
    while _rare_count(hi * 2, w, config.rare_threshold) >= need and hi < 10**8:
        hi *= 2
    hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _rare_count(mid, w, config.rare_threshold) >= need:
            lo = mid
        else:
            hi = mid
    return lo


def _split_sizes(n: int) -> tuple[int, int, int]:
    if n <= 1:
        return n, 0, 0
    n_test = int(math.floor(SPLIT_FRACTIONS[2] * n + 0.5))
    n_val = int(math.floor(SPLIT_FRACTIONS[1] * n + 0.5))
    n_train = n - n_test - n_val
    if n_train < 1:
        n_val = max(0, n_val - (1 - n_train))
        n_train = n - n_test - n_val
    return n_train, n_val, n_test


def _rare_count(total: int, w: np.ndarray, threshold: int) -> int:
    counts = allocate_counts(total, w)
    return sum(1 for c in counts if _split_sizes(int(c))[0] < threshold)


def generate_longtail(config: GeneratorConfig = GeneratorConfig()) -> LongTailDataset:
    rng = np.random.default_rng(config.seed)
    n_rel = config.num_relations
    weights = zipf_weights(n_rel, config.zipf_exponent)
    counts_by_rank = allocate_counts(config.total_samples, weights)
    if counts_by_rank.min() < 1:
        raise ValueError(f"total_samples={config.total_samples} leaves some relation empty; "
                         f"need at least {minimum_samples(config)}")
    rank_of = rng.permutation(n_rel)  # relation r gets Zipf rank rank_of[r]
    counts = counts_by_rank[rank_of]

    a_dims, b_dims = config.view_a_dims, config.view_b_dims
    means_a = rng.uniform(0.0, HYPERCUBE_SIDE, size=(n_rel, a_dims))
    means_b = rng.uniform(0.0, HYPERCUBE_SIDE, size=(n_rel, b_dims))
    n_inf = int(round(config.view_b_informative * n_rel))
    informative_b = np.zeros(n_rel, dtype=bool)
    informative_b[rng.permutation(n_rel)[:n_inf]] = True

    total = int(counts.sum())
    relation = np.repeat(np.arange(n_rel), counts)
    sigma = config.cluster_sigma
    view_a = means_a[relation] + sigma * rng.standard_normal((total, a_dims))
    view_b = rng.standard_normal((total, b_dims))
    inf_rows = informative_b[relation]
    view_b[inf_rows] = means_b[relation[inf_rows]] + sigma * view_b[inf_rows]
    noise = rng.standard_normal((total, config.noise_dims))

    shuffle = rng.permutation(total)
    relation = relation[shuffle]
    features = np.hstack([view_a, noise, view_b])[shuffle]

    split = np.zeros(total, dtype=np.int8)
    for r in range(n_rel):
        rows = np.flatnonzero(relation == r)
        n_train, n_val, n_test = _split_sizes(rows.size)
        split[rows[:n_test]] = 2
        split[rows[n_test:n_test + n_val]] = 1

    a_cols = a_dims + config.noise_dims
    return LongTailDataset(
        features=features,
        view_a_columns=np.arange(a_cols),
        view_b_columns=np.arange(a_cols, a_cols + b_dims),
        context=relation // config.relations_per_context,
        relation=relation,
        split=split,
        row_id=np.arange(total),
        rare_threshold=config.rare_threshold,
        num_relations=n_rel,
    )


def dataset_to_csv(ds: LongTailDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row_id", "split", "context", "relation"] + ds.column_names)
    for i in range(ds.row_id.size):
        w.writerow([int(ds.row_id[i]), SPLITS[ds.split[i]], int(ds.context[i]), int(ds.relation[i])]
                   + [repr(float(v)) for v in ds.features[i]])
    return buf.getvalue()


def write_dataset(ds: LongTailDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(ds))


def _parse_header(header: list) -> tuple[int, int]:
    fixed = ["row_id", "split", "context", "relation"]
    for i, name in enumerate(fixed):
        if i >= len(header) or header[i] != name:
            raise DataError(f"line 1: missing column {name!r}")
    rest = header[4:]
    n_a = 0
    while n_a < len(rest) and rest[n_a] == f"a_{n_a}":
        n_a += 1
    n_b = 0
    while n_a + n_b < len(rest) and rest[n_a + n_b] == f"b_{n_b}":
        n_b += 1
    if n_a + n_b != len(rest):
        bad = rest[n_a + n_b]
        expected = f"b_{n_b}" if n_b or bad.startswith("b_") else f"a_{n_a}"
        raise DataError(f"line 1: unexpected column {bad!r} (missing column {expected!r})")
    if n_a == 0:
        raise DataError("line 1: missing column 'a_0'")
    if n_b == 0:
        raise DataError("line 1: missing column 'b_0'")
    return n_a, n_b


def read_dataset(path, rare_threshold: int = 10, num_relations: Optional[int] = None) -> LongTailDataset:
    with open(path, newline="") as fh:
        return parse_dataset(fh, rare_threshold, num_relations)


def parse_dataset(lines, rare_threshold: int = 10, num_relations: Optional[int] = None) -> LongTailDataset:
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("line 1: empty file") from None
    n_a, n_b = _parse_header(header)
    width = 4 + n_a + n_b
    row_id, split, context, relation, feats = [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise DataError(f"line {lineno}: expected {width} fields, got {len(row)}")
        try:
            row_id.append(int(row[0]))
            context.append(int(row[2]))
            relation.append(int(row[3]))
        except ValueError:
            raise DataError(f"line {lineno}: row_id, context and relation must be integers") from None
        if row[1] not in SPLITS:
            raise DataError(f"line {lineno}: split must be one of {SPLITS}, got {row[1]!r}")
        split.append(SPLITS.index(row[1]))
        try:
            feats.append([float(v) for v in row[4:]])
        except ValueError as exc:
            raise DataError(f"line {lineno}: non-numeric feature ({exc})") from None
    if not row_id:
        raise DataError("no data rows")
    features = np.array(feats, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise DataError("features contain non-finite values")
    relation_arr = np.array(relation, dtype=np.int64)
    context_arr = np.array(context, dtype=np.int64)
    if relation_arr.min() < 0 or context_arr.min() < 0:
        raise DataError("context and relation ids must be non-negative")
    return LongTailDataset(
        features=features,
        view_a_columns=np.arange(n_a),
        view_b_columns=np.arange(n_a, n_a + n_b),
        context=context_arr,
        relation=relation_arr,
        split=np.array(split, dtype=np.int8),
        row_id=np.array(row_id, dtype=np.int64),
        rare_threshold=rare_threshold,
        num_relations=num_relations,
    )


def config_to_dict(config: GeneratorConfig) -> dict:
    return asdict(config)
