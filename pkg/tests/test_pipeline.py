import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tailcode import boost, codec, metrics, pipeline, synth
from tailcode.boost import BoostConfig
from tailcode.pipeline import PipelineConfig, ViewSpec
from tailcode.synth import GeneratorConfig, LongTailDataset

TINY_BOOST = BoostConfig(num_rounds=12, max_depth=2)
GEN = GeneratorConfig(num_contexts=3, relations_per_context=4, zipf_exponent=1.2, total_samples=900,
                      view_a_dims=3, view_b_dims=3, noise_dims=2, cluster_sigma=0.6,
                      view_b_informative=0.5, seed=3)


def config(**kw):
    base = dict(boost=TINY_BOOST, k_clusters=3, rare_threshold=10)
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def dataset():
    return synth.generate_longtail(GEN)


@pytest.fixture(scope="module")
def model(dataset):
    return pipeline.train_pipeline(dataset, config())


def manual_dataset(x_a, x_b, context, relation, split):
    x_a = np.atleast_2d(x_a).reshape(len(relation), -1)
    x_b = np.atleast_2d(x_b).reshape(len(relation), -1)
    na = x_a.shape[1]
    return LongTailDataset(np.hstack([x_a, x_b]), np.arange(na), np.arange(na, na + x_b.shape[1]),
                           np.asarray(context), np.asarray(relation), np.asarray(split, dtype=np.int8),
                           np.arange(len(relation)))


# --- independent replay from the serialized bundle -------------------------


def walk(tree, row):
    node = 0
    while tree["feature"][node] >= 0:
        f = tree["feature"][node]
        node = tree["left"][node] if row[f] <= tree["threshold"][node] else tree["right"][node]
    return tree["weight"][node]


def replay_bit(bit, row):
    sel = np.asarray(bit["selected"])
    margin = bit["base_margin"] + sum(walk(t, row[sel]) for t in bit["trees"])
    return 1.0 / (1.0 + np.exp(-margin))


def replay_submodel(sub, row, num_rel):
    out = np.zeros(num_rel)
    rel = sub["relations"]
    if sub["mode"] == "constant":
        out[rel[0]] = 1.0
        return out
    q = np.clip([replay_bit(b, row) for b in sub["bits"]], 1e-300, 1 - 1e-16)
    if sub["mode"] == "single_bit":
        out[rel] = [1 - q[0], q[0]]
        return out
    agg = sub["aggregator"]
    means, inv = np.asarray(agg["means"]), np.linalg.inv(np.asarray(agg["covariance"]))
    d = np.array([q @ inv @ m - 0.5 * m @ inv @ m + np.log(p) for m, p in zip(means, agg["priors"])])
    e = np.exp(d - d.max())
    out[rel] = e / e.sum()
    return out


def replay(bundle, row, context):
    r = bundle["num_relations"]
    pb = np.zeros(r)
    if bundle["cluster_models"]:
        cents = np.array([c["centroid"] for c in bundle["cluster_models"]])
        xb = row[bundle["views"]["view_b_columns"]]
        z = -((cents - xb) ** 2).sum(axis=1) / bundle["temperature"]
        w = np.exp(z - z.max())
        w /= w.sum()
        for wj, sub in zip(w, bundle["cluster_models"]):
            pb += wj * replay_submodel(sub, row, r)
    ctx = {c: sub for c, sub in bundle["context_models"]}
    if context not in ctx:
        return pb / pb.sum()
    pa = replay_submodel(ctx[context], row, r)
    out = bundle["alpha"] * pa + bundle["beta"] * pb
    return out / out.sum()


# ---------------------------------------------------------------------------


class TestViewSpec:
    def test_disjoint(self):
        with pytest.raises(ValueError):
            ViewSpec((0, 1), (1, 2))
        with pytest.raises(ValueError):
            ViewSpec((), (1,))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(scheme="gray")
        with pytest.raises(ValueError):
            PipelineConfig(select_mode="best")
        assert PipelineConfig.from_dict(json.loads(json.dumps(config().to_dict()))) == config()


class TestTraining:
    def test_structure(self, dataset, model):
        train = dataset.mask("train")
        assert sorted(model.context_models) == [0, 1, 2]
        assert len(model.cluster_models) == 3
        assert model.alpha + model.beta == pytest.approx(1.0) and model.alpha >= 0 and model.beta >= 0
        total = 0
        for c, sub in model.context_models.items():
            rows = train & (dataset.context == c)
            total += rows.sum()
            assert sub.relations.tolist() == sorted(set(dataset.relation[rows].tolist()))
        assert total == train.sum()
        assert model.rare_relations == dataset.rare_set
        for sub in model.submodels():
            assert sub.centroid is None or sub.centroid.size == 3
            if sub.codebook is not None and sub.codebook.scheme == "hybrid":
                rare = sorted(sub.codebook.rare_class_ids)
                assert len({tuple(w) for w in sub.codebook.codewords}) == sub.num_local
                if len(rare) > 1:
                    lo, hi = sub.codebook.rare_bits
                    assert codec.min_pairwise_distance(sub.codebook.codewords[rare][:, lo:hi]) >= 3

    def test_context_submodels_use_view_a(self, model):
        for sub in model.context_models.values():
            for b in sub.bits:
                assert set(b.selected.tolist()) <= set(range(5))
        for sub in model.cluster_models:
            for b in sub.bits:
                assert set(b.selected.tolist()) <= {5, 6, 7}

    def test_deterministic_bytes(self, dataset, model):
        again = pipeline.train_pipeline(dataset, config())
        assert again.to_json() == model.to_json()

    def test_threads_do_not_change_bytes(self, dataset, model):
        assert pipeline.train_pipeline(dataset, config(), threads=3).to_json() == model.to_json()

    def test_json_round_trip(self, dataset, model):
        back = pipeline.ConditionalModel.from_json(model.to_json())
        x, c = dataset.features[:50], dataset.context[:50]
        assert np.array_equal(pipeline.predict_scores(back, x, c)[0], pipeline.predict_scores(model, x, c)[0])
        assert back.to_json() == model.to_json()

    def test_two_relations_single_bit(self):
        rng = np.random.default_rng(0)
        n = 120
        y = np.arange(n) % 2 + 5
        xa = rng.normal(size=(n, 2)) + (y[:, None] - 5) * 2.0
        ds = manual_dataset(xa, rng.normal(size=(n, 2)), np.zeros(n, int), y, np.where(np.arange(n) < 100, 0, 1))
        ds.num_relations = 7
        m = pipeline.train_pipeline(ds, config(two_query=False))
        sub = m.context_models[0]
        assert sub.mode == "single_bit" and len(sub.bits) == 1 and m.alpha == 1.0
        scores, _ = pipeline.predict_scores(m, ds.features, ds.context)
        p = boost.predict_bit_prob(sub.bits[0], ds.features)
        np.testing.assert_allclose(scores[:, 6], p, rtol=0, atol=1e-15)
        np.testing.assert_allclose(scores[:, 5], 1 - p, rtol=0, atol=1e-15)

    def test_single_relation_context(self):
        rng = np.random.default_rng(1)
        n = 60
        ctx = (np.arange(n) % 2)
        rel = np.where(ctx == 0, 0, 1 + (np.arange(n) // 2) % 3)
        ds = manual_dataset(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)), ctx, rel, np.zeros(n))
        m = pipeline.train_pipeline(ds, config(two_query=False))
        sub = m.context_models[0]
        assert sub.mode == "constant" and sub.flags
        scores, _ = pipeline.predict_scores(m, ds.features[:4], ds.context[:4])
        assert scores[0].tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_deterministic_function_of_one_feature(self):
        rng = np.random.default_rng(2)
        n = 400
        rel = np.arange(n) % 4
        xa = np.column_stack([rel * 10 + rng.uniform(0, 1, n), rng.normal(size=n)])
        split = np.where(np.arange(n) < 300, 0, 1)
        ds = manual_dataset(xa, rng.normal(size=(n, 2)), np.zeros(n, int), rel, split)
        m = pipeline.train_pipeline(ds, config())
        val = ds.mask("val")
        scores, _ = pipeline.predict_scores(m, ds.features[val], ds.context[val])
        assert metrics.mean_ap(scores, ds.relation[val]) == 1.0

    def test_hybrid_rare_bits_train_on_rare_rows(self):
        counts = [60, 60, 4, 4, 4]
        rel = np.repeat(np.arange(5), counts)
        rng = np.random.default_rng(3)
        xa = rng.normal(size=(rel.size, 2)) + rel[:, None] * 3.0
        ds = manual_dataset(xa, rng.normal(size=(rel.size, 2)), np.zeros(rel.size, int), rel, np.zeros(rel.size))
        sub, jobs = pipeline._plan_submodel("context:0", ds.features, rel, np.arange(5), ds.view_a_columns, config())
        cb = sub.codebook
        assert cb.scheme == "hybrid"
        for job in jobs:
            assert job.x.shape[0] == (12 if cb.is_conditional_bit(job.bit) else rel.size)

    def test_no_training_rows(self):
        ds = manual_dataset(np.zeros((4, 1)), np.zeros((4, 1)), [0] * 4, [0, 1, 0, 1], [2] * 4)
        with pytest.raises(ValueError):
            pipeline.train_pipeline(ds, config())


class TestPrediction:
    def test_probability_vectors(self, dataset, model):
        scores, unseen = pipeline.predict_scores(model, dataset.features, dataset.context)
        assert np.all(scores >= 0)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9)
        assert not unseen.any()

    def test_replay_oracle(self, dataset, model):
        bundle = json.loads(model.to_json())
        rows = np.flatnonzero(dataset.mask("test"))[:40]
        for i in rows:
            got, meta = pipeline.predict_relation(model, dataset.features[i], int(dataset.context[i]))
            want = replay(bundle, dataset.features[i], int(dataset.context[i]))
            assert int(np.argmax(got)) == int(np.argmax(want))
            assert abs(got.sum() - 1.0) < 1e-9 and not meta["unseen_context"]

    def test_unseen_context(self, dataset, model):
        scores, meta = pipeline.predict_relation(model, dataset.features[0], 99)
        assert meta["unseen_context"]
        _, pb, _ = pipeline.query_scores(model, dataset.features[:1], [99])
        np.testing.assert_allclose(scores, pb[0] / pb[0].sum(), atol=1e-15)

    def test_fusion_formula(self, dataset, model):
        x, c = dataset.features[:30], dataset.context[:30]
        pa, pb, _ = pipeline.query_scores(model, x, c)
        for alpha in (1.0, 0.5, 0.0):
            m = pipeline.ConditionalModel.from_json(model.to_json())
            m.alpha, m.beta = alpha, 1.0 - alpha
            scores, _ = pipeline.predict_scores(m, x, c)
            want = alpha * pa + (1 - alpha) * pb
            np.testing.assert_allclose(scores, want / want.sum(axis=1, keepdims=True), atol=1e-12)
        np.testing.assert_allclose(pa.sum(axis=1), 1.0, atol=1e-9)

    def test_relations_outside_context_get_no_query_a_mass(self, dataset, model):
        pa, _, _ = pipeline.query_scores(model, dataset.features[:30], dataset.context[:30])
        for i in range(30):
            allowed = set(model.context_models[int(dataset.context[i])].relations.tolist())
            outside = [r for r in range(model.num_relations) if r not in allowed]
            assert np.all(pa[i, outside] == 0)

    def test_footprint_additive(self, dataset):
        m = pipeline.train_pipeline(dataset.subset(dataset.context < 2), config(two_query=False))
        subs = [pipeline.Submodel.from_dict(json.loads(json.dumps(s.to_dict()))) for s in m.submodels()]
        assert len(subs) == 2
        assert m.footprint()[0] == sum(s.footprint()[0] for s in subs) + 2

    def test_evaluate_report(self, dataset, model):
        rep = pipeline.evaluate(model, dataset)
        assert 0 <= rep.map_full <= 100
        assert rep.param_count == model.footprint()[0]


class TestFusionWeights:
    def test_noise_view_b_gives_alpha_one(self):
        wins = 0
        for seed in range(3):
            rng = np.random.default_rng(seed)
            y = rng.integers(0, 5, size=300)
            a = np.eye(5)[y] * 0.3 + rng.uniform(size=(300, 5))
            b = rng.uniform(size=(300, 5))
            wins += pipeline.fit_fusion_weights(a, b, y)[0] == 1.0
        assert wins >= 2

    def test_identical_tables_pick_zero(self, rng):
        a = rng.uniform(size=(50, 4))
        assert pipeline.fit_fusion_weights(a, a.copy(), rng.integers(0, 4, size=50)) == (0.0, 1.0)

    def test_empty_validation(self):
        assert pipeline.fit_fusion_weights(np.zeros((0, 3)), np.zeros((0, 3)), []) == (0.5, 0.5)

    def test_misaligned(self):
        with pytest.raises(ValueError):
            pipeline.fit_fusion_weights(np.zeros((3, 2)), np.zeros((2, 2)), [0, 1, 0])

    @settings(max_examples=25)
    @given(st.integers(0, 10**6))
    def test_sums_to_one(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 3, size=20)
        a, b = pipeline.fit_fusion_weights(rng.uniform(size=(20, 3)), rng.uniform(size=(20, 3)), y)
        assert a + b == 1.0 and a in pipeline.FUSION_GRID

    def test_empty_validation_flagged(self, dataset):
        ds = dataset.subset(dataset.split != 1)
        m = pipeline.train_pipeline(ds, config())
        assert (m.alpha, m.beta) == (0.5, 0.5) and m.flags
