"""Conditional two-query classifier.

Query A conditions on the context column: one submodel per context, trained
on view-A features over the relations seen under that context. Query B
clusters view-B features with k-means and trains one submodel per cluster;
its posterior mixes cluster submodels by soft membership. Each submodel
codes its relations, selects features and trains one boosted classifier per
code bit, then maps bit probabilities to relation posteriors with LDA. The
two posteriors are fused as ``alpha * P_A + beta * P_B``.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from tailcode import boost, codec, dft, kmeans, lda, metrics
from tailcode.boost import BoostConfig, BoostedBitClassifier
from tailcode.codec import HybridCodebook
from tailcode.dft import DftConfig, DftRanking
from tailcode.synth import LongTailDataset

log = logging.getLogger(__name__)

FUSION_GRID = tuple(i / 20 for i in range(21))
FUSION_TIE_TOL = 1e-12
DEFAULT_SELECT_K = 1000


@dataclass(frozen=True)
class PipelineConfig:
    scheme: str = "hybrid"
    rare_threshold: int = 10
    hamming_k: int = codec.DEFAULT_HAMMING_K
    boost: BoostConfig = field(default_factory=lambda: boost.PRESETS["paper-small"])
    dft: DftConfig = field(default_factory=lambda: DftConfig(loss_kind="focal"))
    feature_selection: bool = True
    select_mode: str = "top_k"
    select_k: int = DEFAULT_SELECT_K
    two_query: bool = True
    k_clusters: int = 8
    kmeans_max_iters: int = 100
    lda_shrinkage: float = 0.05
    lda_priors: str = "empirical"
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in codec.SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.select_mode not in ("top_k", "elbow"):
            raise ValueError(f"select_mode must be 'top_k' or 'elbow', got {self.select_mode!r}")
        if self.select_k < 1 or self.k_clusters < 1:
            raise ValueError("select_k and k_clusters must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["boost"] = BoostConfig(**d["boost"])
        d["dft"] = DftConfig(**d["dft"])
        return cls(**d)


@dataclass(frozen=True)
class ViewSpec:
    view_a_columns: tuple
    view_b_columns: tuple

    def __post_init__(self):
        if set(self.view_a_columns) & set(self.view_b_columns):
            raise ValueError("view column sets must be disjoint")
        if not self.view_a_columns or not self.view_b_columns:
            raise ValueError("each view needs at least one column")

    @classmethod
    def of(cls, ds: LongTailDataset) -> "ViewSpec":
        return cls(tuple(int(c) for c in ds.view_a_columns), tuple(int(c) for c in ds.view_b_columns))


@dataclass
class Submodel:
    """Coded classifier over the relations seen in one context or cluster.

    ``mode`` is ``"constant"`` (one relation), ``"single_bit"`` (two
    relations, the bit probability is the posterior of the second) or
    ``"lda"``.
    """

    key: str
    relations: np.ndarray  # local id -> global relation id
    mode: str
    codebook: Optional[HybridCodebook] = None
    rankings: list = field(default_factory=list)  # per bit, None when selection was skipped
    bits: list = field(default_factory=list)
    aggregator: Optional[lda.LdaModel] = None
    centroid: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    @property
    def num_local(self) -> int:
        return int(self.relations.size)

    def bit_probs(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.column_stack([boost.predict_bit_prob(b, x) for b in self.bits])

    def predict_local(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.mode == "constant":
            return np.ones((x.shape[0], 1))
        p = self.bit_probs(x)
        if self.mode == "single_bit":
            return np.column_stack([1.0 - p[:, 0], p[:, 0]])
        return lda.lda_class_scores(self.aggregator, p)

    def predict_global(self, x, num_relations: int) -> np.ndarray:
        local = self.predict_local(x)
        out = np.zeros((local.shape[0], num_relations))
        out[:, self.relations] = local
        return out

    def footprint(self) -> tuple[int, int]:
        params, ops = 0, 0
        for b in self.bits:
            p, o = boost.footprint(b)
            params += p
            ops += o
        if self.aggregator is not None:
            params += self.aggregator.param_count()
            ops += self.aggregator.ops_per_query()
        if self.codebook is not None:
            params += self.codebook.storage_bits
        return params, ops

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "relations": [int(r) for r in self.relations],
            "mode": self.mode,
            "codebook": self.codebook.to_dict() if self.codebook is not None else None,
            "rankings": [r.to_dict() if r is not None else None for r in self.rankings],
            "bits": [b.to_dict() for b in self.bits],
            "aggregator": self.aggregator.to_dict() if self.aggregator is not None else None,
            "centroid": self.centroid.tolist() if self.centroid is not None else None,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Submodel":
        return cls(
            key=d["key"],
            relations=np.asarray(d["relations"], dtype=np.intp),
            mode=d["mode"],
            codebook=HybridCodebook.from_dict(d["codebook"]) if d["codebook"] else None,
            rankings=[DftRanking.from_dict(r) if r is not None else None for r in d["rankings"]],
            bits=[BoostedBitClassifier.from_dict(b) for b in d["bits"]],
            aggregator=lda.LdaModel.from_dict(d["aggregator"]) if d["aggregator"] else None,
            centroid=np.asarray(d["centroid"]) if d["centroid"] is not None else None,
            flags=list(d["flags"]),
        )


@dataclass
class ConditionalModel:
    config: PipelineConfig
    views: ViewSpec
    num_relations: int
    rare_relations: frozenset
    context_models: dict  # context id -> Submodel
    cluster_models: list  # Submodel per cluster, index = cluster id
    alpha: float = 1.0
    beta: float = 0.0
    temperature: float = 1.0
    flags: list = field(default_factory=list)

    @property
    def query_a_columns(self) -> np.ndarray:
        cols = self.views.view_a_columns
        if not self.config.two_query:
            cols = cols + self.views.view_b_columns
        return np.asarray(cols, dtype=np.intp)

    @property
    def centroids(self) -> Optional[np.ndarray]:
        if not self.cluster_models:
            return None
        return np.vstack([m.centroid for m in self.cluster_models])

    def submodels(self) -> list:
        return [self.context_models[c] for c in sorted(self.context_models)] + list(self.cluster_models)

    def codeword_bits(self) -> int:
        return sum(m.codebook.storage_bits for m in self.submodels() if m.codebook is not None)

    def footprint(self) -> tuple[int, int]:
        """``(param_count, ops_per_query)`` for the whole model.

        Parameters sum over every submodel plus centroids and the two fusion
        weights. Operations count the most expensive context submodel, every
        cluster submodel, the soft cluster weighting and the fusion.
        """
        params = sum(m.footprint()[0] for m in self.submodels()) + 2
        ctx_ops = max((m.footprint()[1] for m in self.context_models.values()), default=0)
        ops = ctx_ops
        if self.cluster_models:
            k, d = self.centroids.shape
            params += k * d
            ops += sum(m.footprint()[1] for m in self.cluster_models)
            ops += 3 * k * d + 3 * k  # squared distances, softmax
        ops += 3 * self.num_relations
        return params, ops

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "views": {"view_a_columns": list(self.views.view_a_columns),
                      "view_b_columns": list(self.views.view_b_columns)},
            "num_relations": self.num_relations,
            "rare_relations": sorted(int(r) for r in self.rare_relations),
            "alpha": self.alpha,
            "beta": self.beta,
            "temperature": self.temperature,
            "flags": list(self.flags),
            "context_models": [[int(c), self.context_models[c].to_dict()] for c in sorted(self.context_models)],
            "cluster_models": [m.to_dict() for m in self.cluster_models],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalModel":
        return cls(
            config=PipelineConfig.from_dict(d["config"]),
            views=ViewSpec(tuple(d["views"]["view_a_columns"]), tuple(d["views"]["view_b_columns"])),
            num_relations=int(d["num_relations"]),
            rare_relations=frozenset(d["rare_relations"]),
            context_models={int(c): Submodel.from_dict(m) for c, m in d["context_models"]},
            cluster_models=[Submodel.from_dict(m) for m in d["cluster_models"]],
            alpha=float(d["alpha"]),
            beta=float(d["beta"]),
            temperature=float(d["temperature"]),
            flags=list(d["flags"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "ConditionalModel":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# training


@dataclass
class _BitJob:
    key: str
    bit: int
    x: np.ndarray
    labels: np.ndarray
    columns: np.ndarray


def _plan_submodel(key, features, local_labels, relations, columns, config: PipelineConfig):
    """Create the submodel shell and the per-bit training jobs."""
    m = relations.size
    if m == 1:
        return Submodel(key, relations, "constant", flags=["single relation"]), []
    counts = np.bincount(local_labels, minlength=m)
    if m == 2:
        cb = codec.build_codebook(counts, config.rare_threshold, "binary")
        mode = "single_bit"
    else:
        cb = codec.build_codebook(counts, config.rare_threshold, config.scheme, config.hamming_k)
        mode = "lda"
    sub = Submodel(key, relations, mode, codebook=cb)
    if cb.degraded:
        sub.flags.append("hybrid requested without rare classes; using one_hot")
    words = cb.bit_labels(local_labels)
    rare_local = np.array(sorted(cb.rare_class_ids), dtype=np.intp)
    jobs = []
    for b in range(cb.codeword_length):
        rows = np.isin(local_labels, rare_local) if cb.is_conditional_bit(b) else slice(None)
        jobs.append(_BitJob(key, b, features[rows], words[rows, b], columns))
    return sub, jobs


def _run_bit_job(job: _BitJob, config: PipelineConfig):
    cols = job.columns
    x = job.x
    y = job.labels.astype(np.int64)
    ranking = None
    selected = cols
    if config.feature_selection and y.size >= 2 and y.min() != y.max():
        ranking = dft.rank_features(x[:, cols], y, config.dft, columns=cols)
        if config.select_mode == "top_k":
            selected = dft.select_features(ranking, "top_k", min(config.select_k, cols.size))
        else:
            selected = dft.select_features(ranking, "elbow")
    if y.size >= 1 and y.min() == y.max():
        p = min(max(float(y[0]), boost.CONSTANT_EPS), 1.0 - boost.CONSTANT_EPS)
        m_nodes = (1 << (config.boost.max_depth + 1)) - 1
        model = BoostedBitClassifier(config.boost, np.asarray(selected, dtype=np.intp), boost.logit(p),
                                     np.zeros((0, m_nodes), dtype=np.int32),
                                     np.zeros((0, m_nodes)), np.zeros((0, m_nodes)), constant=True)
    else:
        model = boost.train_bit_classifier(x[:, selected], y, config.boost, selected=selected)
    return ranking, model


def _finish_submodel(sub: Submodel, features, local_labels, config: PipelineConfig) -> None:
    if sub.mode != "lda":
        return
    probs = sub.bit_probs(features)
    sub.aggregator = lda.fit_lda(probs, local_labels, config.lda_shrinkage, config.lda_priors)


def _local_ids(global_ids: np.ndarray):
    relations = np.unique(global_ids)
    return relations, np.searchsorted(relations, global_ids)


def fit_fusion_weights(valid_scores_a, valid_scores_b, valid_labels) -> tuple[float, float]:
    """Grid-search ``alpha`` in 0, 0.05, ..., 1 (``beta = 1 - alpha``) for
    the best validation mAP; ties within 1e-12 go to the smaller alpha.
    An empty validation set returns (0.5, 0.5)."""
    a = np.asarray(valid_scores_a, dtype=np.float64)
    b = np.asarray(valid_scores_b, dtype=np.float64)
    y = np.asarray(valid_labels).ravel()
    if y.size == 0:
        return 0.5, 0.5
    if a.shape != b.shape or a.shape[0] != y.size:
        raise ValueError("score tables must align with the labels")
    scores = [metrics.mean_ap(alpha * a + (1.0 - alpha) * b, y) for alpha in FUSION_GRID]
    best = max(scores)
    for alpha, s in zip(FUSION_GRID, scores):
        if s >= best - FUSION_TIE_TOL:
            return alpha, 1.0 - alpha
    raise AssertionError("unreachable")


def train_pipeline(dataset: LongTailDataset, config: PipelineConfig = PipelineConfig(),
                   views: Optional[ViewSpec] = None, threads: int = 1) -> ConditionalModel:
    views = views or ViewSpec.of(dataset)
    train = dataset.mask("train")
    if not train.any():
        raise ValueError("dataset has no training rows")
    x_all = dataset.features
    x_tr = x_all[train]
    rel_tr = dataset.relation[train]
    ctx_tr = dataset.context[train]
    num_rel = int(dataset.num_relations)
    cols_a = np.asarray(views.view_a_columns + (() if config.two_query else views.view_b_columns), dtype=np.intp)
    cols_b = np.asarray(views.view_b_columns, dtype=np.intp)

    shells, jobs, members = {}, [], {}
    for c in np.unique(ctx_tr):
        rows = ctx_tr == c
        relations, local = _local_ids(rel_tr[rows])
        key = f"context:{int(c)}"
        sub, sub_jobs = _plan_submodel(key, x_tr[rows], local, relations, cols_a, config)
        shells[key], members[key] = sub, (x_tr[rows], local)
        jobs.extend(sub_jobs)

    cluster_keys = []
    temperature = 1.0
    if config.two_query:
        k = min(config.k_clusters, x_tr.shape[0])
        km = kmeans.kmeans(x_tr[:, cols_b], k, seed=config.seed, max_iters=config.kmeans_max_iters)
        temperature = kmeans.default_temperature(km.centroids)
        for j in range(k):
            rows = km.assignments == j
            relations, local = _local_ids(rel_tr[rows])
            key = f"cluster:{j}"
            sub, sub_jobs = _plan_submodel(key, x_tr[rows], local, relations, cols_b, config)
            sub.centroid = km.centroids[j].copy()
            shells[key], members[key] = sub, (x_tr[rows], local)
            cluster_keys.append(key)
            jobs.extend(sub_jobs)

    log.info("training %d bit classifiers over %d submodels", len(jobs), len(shells))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _run_bit_job(j, config), jobs))
    else:
        results = [_run_bit_job(j, config) for j in jobs]
    for job, (ranking, model) in zip(jobs, results):
        shells[job.key].rankings.append(ranking)
        shells[job.key].bits.append(model)
    for key, sub in shells.items():
        _finish_submodel(sub, *members[key], config)

    rare = frozenset(int(r) for r in np.flatnonzero(
        np.bincount(rel_tr, minlength=num_rel) < config.rare_threshold))
    model = ConditionalModel(
        config=config, views=views, num_relations=num_rel, rare_relations=rare,
        context_models={int(k.split(":")[1]): s for k, s in shells.items() if k.startswith("context:")},
        cluster_models=[shells[k] for k in cluster_keys],
        temperature=temperature,
    )

    if config.two_query:
        val = dataset.mask("val")
        if not val.any():
            model.alpha, model.beta = 0.5, 0.5
            model.flags.append("empty validation set; fusion weights defaulted to 0.5/0.5")
        else:
            pa, pb, _ = query_scores(model, x_all[val], dataset.context[val])
            model.alpha, model.beta = fit_fusion_weights(pa, pb, dataset.relation[val])
    else:
        model.alpha, model.beta = 1.0, 0.0
    return model


# --------------------------------------------------------------------------
# inference


def query_scores(model: ConditionalModel, x, contexts):
    """Global-relation posteriors of both queries.

    Returns ``(P_A, P_B, unseen)``; rows whose context has no submodel get
    ``P_A = P_B`` and ``unseen = True``. Without the two-query split,
    ``P_B`` is all zeros.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    contexts = np.asarray(contexts).ravel()
    n, r = x.shape[0], model.num_relations
    pb = np.zeros((n, r))
    if model.cluster_models:
        w = kmeans.membership_weights(x[:, list(model.views.view_b_columns)], model.centroids,
                                      model.temperature)
        for j, sub in enumerate(model.cluster_models):
            pb += w[:, j:j + 1] * sub.predict_global(x, r)
    pa = np.zeros((n, r))
    unseen = np.zeros(n, dtype=bool)
    for c in np.unique(contexts):
        rows = contexts == c
        sub = model.context_models.get(int(c))
        if sub is None:
            unseen[rows] = True
            pa[rows] = pb[rows]
        else:
            pa[rows] = sub.predict_global(x[rows], r)
    return pa, pb, unseen


def predict_scores(model: ConditionalModel, x, contexts):
    """Fused relation posteriors, one row per sample, plus the unseen-context mask."""
    pa, pb, unseen = query_scores(model, x, contexts)
    if model.cluster_models:
        fused = model.alpha * pa + model.beta * pb
        fused[unseen] = pb[unseen]
    else:
        fused = pa
        if unseen.any():
            # no query-B path to fall back on
            fused[unseen] = 1.0 / model.num_relations
    z = fused.sum(axis=1, keepdims=True)
    z[z == 0] = 1.0
    return fused / z, unseen


def predict_relation(model: ConditionalModel, row, context) -> tuple[np.ndarray, dict]:
    """Relation scores for one feature row and its context id."""
    scores, unseen = predict_scores(model, np.atleast_2d(row), [context])
    return scores[0], {"unseen_context": bool(unseen[0])}


def evaluate(model: ConditionalModel, dataset: LongTailDataset, split: str = "test",
             rare_set=None) -> metrics.MetricsReport:
    rows = dataset.mask(split)
    scores, _ = predict_scores(model, dataset.features[rows], dataset.context[rows])
    rare = model.rare_relations if rare_set is None else rare_set
    return metrics.build_report(scores, dataset.relation[rows], rare, model.footprint(),
                                row_ids=dataset.row_id[rows])
