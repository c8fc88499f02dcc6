import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tailcode import codec, lda


def closed_form(x, y, s, priors="empirical"):
    """Direct-formula discriminants with an explicit matrix inverse."""
    classes = sorted(set(y.tolist()))
    n, d = x.shape
    means = np.array([x[y == c].mean(axis=0) for c in classes])
    sw = np.zeros((d, d))
    for i in range(n):
        r = x[i] - means[classes.index(y[i])]
        sw += np.outer(r, r)
    sw /= n
    cov = (1 - s) * sw + s * np.diag(np.diag(sw))
    for j in range(d):
        cov[j, j] = max(cov[j, j], 1e-6)
    inv = np.linalg.inv(cov)
    pri = np.array([np.mean(y == c) for c in classes]) if priors == "empirical" else np.full(len(classes), 1 / len(classes))

    def disc(q):
        return np.array([q @ inv @ m - 0.5 * m @ inv @ m + np.log(p) for m, p in zip(means, pri)])
    return disc


def fixture(seed, n=60, d=4, k=3):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % k
    x = rng.normal(size=(n, d)) + rng.normal(scale=2.0, size=(k, d))[y]
    return x, y


class TestFit:
    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("s", [0.0, 0.05, 0.5, 1.0])
    def test_closed_form(self, seed, s):
        x, y = fixture(seed)
        m = lda.fit_lda(x, y, s)
        oracle = closed_form(x, y, s)
        q = np.random.default_rng(seed + 1).normal(size=(20, 4)) * 3
        got = m.discriminants(q)
        want = np.array([oracle(r) for r in q])
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)

    def test_uniform_priors(self):
        x, y = fixture(3)
        y = np.where(np.arange(60) < 40, 0, y)
        m = lda.fit_lda(x, y, 0.05, priors="uniform")
        assert np.allclose(m.class_priors, 1 / 3)
        q = x[:5]
        np.testing.assert_allclose(m.discriminants(q), [closed_form(x, y, 0.05, "uniform")(r) for r in q],
                                   atol=1e-9, rtol=0)

    @pytest.mark.parametrize("seed", range(10))
    def test_translation_invariance(self, seed):
        x, y = fixture(seed)
        shift = np.random.default_rng(seed).normal(scale=5, size=4)
        q = np.random.default_rng(seed + 7).normal(size=(15, 4))
        a = lda.lda_class_scores(lda.fit_lda(x, y), q)
        b = lda.lda_class_scores(lda.fit_lda(x + shift, y), q + shift)
        np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)

    def test_symmetric_1d_threshold(self):
        x = np.array([[-2.0], [0.0], [0.0], [2.0]])
        y = np.array([0, 0, 1, 1])
        m = lda.fit_lda(x, y, 0.0)
        assert m.class_means.ravel().tolist() == [-1.0, 1.0]
        d = m.discriminants([[0.0]])[0]
        assert d[0] == pytest.approx(d[1], abs=1e-12)
        assert lda.lda_class_scores(m, np.array([0.3])).argmax() == 1

    def test_identical_means_give_priors(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0], [1.0, 2.0], [3.0, 4.0], [1.0, 2.0], [3.0, 4.0]])
        y = np.array([0, 0, 1, 1, 2, 2])
        m = lda.fit_lda(x, y)
        q = np.random.default_rng(0).normal(size=(7, 2))
        np.testing.assert_allclose(lda.lda_class_scores(m, q), np.tile(m.class_priors, (7, 1)), atol=1e-12)

    def test_more_dims_than_samples(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 20))
        m = lda.fit_lda(x, [0, 1, 2, 0, 1, 2], shrinkage=0.1)
        assert np.all(np.isfinite(m.discriminants(x)))

    def test_singular_without_shrinkage(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(10, 1))
        x = np.hstack([a, a, a])
        with pytest.raises(np.linalg.LinAlgError, match="shrinkage > 0"):
            lda.fit_lda(x, np.arange(10) % 2, shrinkage=0.0)
        lda.fit_lda(x, np.arange(10) % 2, shrinkage=0.05)

    def test_invariants(self):
        x, y = fixture(1)
        m = lda.fit_lda(x, y)
        assert np.allclose(m.pooled_covariance, m.pooled_covariance.T)
        assert np.all(np.linalg.eigvalsh(m.pooled_covariance) > 0)
        assert abs(m.class_priors.sum() - 1) < 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            lda.fit_lda(np.zeros((4, 2)), [0, 0, 0, 0])
        with pytest.raises(ValueError):
            lda.fit_lda(np.zeros((4, 2)), [0, 1, 0])
        with pytest.raises(ValueError):
            lda.fit_lda(np.zeros((4, 2)), [0, 1, 0, 1], shrinkage=1.5)
        with pytest.raises(ValueError):
            lda.fit_lda(np.eye(4), [0, 1, 0, 1], priors="flat")
        m = lda.fit_lda(*fixture(0))
        with pytest.raises(ValueError):
            lda.lda_class_scores(m, np.zeros(3))


class TestScores:
    def test_class_mean_argmax(self):
        x, y = fixture(2)
        m = lda.fit_lda(x, y)
        assert lda.lda_class_scores(m, m.class_means).argmax(axis=1).tolist() == [0, 1, 2]

    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
    def test_sum_to_one(self, q):
        m = lda.fit_lda(*fixture(5))
        p = lda.lda_class_scores(m, np.array(q))
        assert p.shape == (3,) and np.all(p >= 0) and abs(p.sum() - 1) < 1e-12

    def test_full_shrinkage_is_diagonal_nearest_mean(self):
        x, y = fixture(4)
        y = np.arange(60) % 3
        m = lda.fit_lda(x, y, shrinkage=1.0, priors="uniform")
        var = np.array([((x[:, j] - m.class_means[y, j]) ** 2).mean() for j in range(4)])
        q = np.random.default_rng(9).normal(size=(30, 4)) * 2
        dist = (((q[:, None, :] - m.class_means[None]) ** 2) / var).sum(axis=2)
        assert np.array_equal(lda.lda_class_scores(m, q).argmax(axis=1), dist.argmin(axis=1))

    def test_agrees_with_soft_decode(self):
        rng = np.random.default_rng(21)
        cb = codec.build_codebook([100, 100, 100, 5, 5, 5, 5], 10, "hybrid")
        y = rng.integers(0, cb.num_classes, size=1400)
        q = np.clip(cb.codewords[y] * 0.8 + 0.1 + rng.normal(scale=0.08, size=(y.size, cb.codeword_length)),
                    0.01, 0.99)
        m = lda.fit_lda(q[:700], y[:700])
        a = lda.lda_class_scores(m, q[700:]).argmax(axis=1)
        b = np.array([codec.decode_soft(cb, r).argmax() for r in q[700:]])
        assert np.mean(a == b) >= 0.95

    def test_json_round_trip(self):
        x, y = fixture(6)
        m = lda.fit_lda(x, y)
        back = lda.LdaModel.from_dict(json.loads(json.dumps(m.to_dict())))
        assert np.array_equal(back.discriminants(x), m.discriminants(x))
        assert m.param_count() == 3 * 4 + 16 + 3
        assert m.ops_per_query() == 2 * 3 * 4 + 3 + 9
