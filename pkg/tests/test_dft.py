import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tailcode import dft
from tailcode.dft import DftConfig


def brute_force(values, labels, num=32, kind="entropy", alpha=1.0, gamma=2.0, eps=1e-6):
    """Plain-loop oracle over the same candidate thresholds."""
    v = [float(x) for x in values]
    y = [int(b) for b in labels]
    n = len(v)
    lo, hi = min(v), max(v)

    def part(pos, tot):
        p = pos / tot
        if kind == "entropy":
            h = 0.0
            if p > 0.0:
                h -= p * math.log(p)
            if p < 1.0:
                h -= (1.0 - p) * math.log(1.0 - p)
            return h
        p = min(max(p, eps), 1.0 - eps)
        return -alpha * (1.0 - p) ** gamma * math.log(p)

    best = None
    for j in range(1, num + 1):
        t = lo + (hi - lo) * float(j) / (num + 1)
        left = [y[i] for i in range(n) if v[i] <= t]
        right = [y[i] for i in range(n) if v[i] > t]
        if not left or not right:
            continue
        loss = (len(left) * part(sum(left), len(left)) + len(right) * part(sum(right), len(right))) / n
        if best is None or loss < best[0]:
            best = (loss, t, len(left))
    return best


class TestPartitionLosses:
    def test_entropy_examples(self):
        assert dft.partition_entropy(5, 5) == pytest.approx(math.log(2), abs=1e-12)
        assert dft.partition_entropy(10, 0) == 0.0
        assert dft.partition_entropy(0, 10) == 0.0
        assert dft.partition_entropy(1, 3) == pytest.approx(0.562335, abs=1e-6)

    def test_entropy_empty(self):
        with pytest.raises(ValueError):
            dft.partition_entropy(0, 0)

    def test_focal_examples(self):
        assert dft.focal_term(0.5, 1.0, 2.0) == pytest.approx(0.25 * math.log(2), abs=1e-12)
        assert dft.focal_term(1.0 - 1e-6) == pytest.approx(0.0, abs=1e-12)
        assert dft.focal_term(0.3, 1.0, 0.0) == pytest.approx(-math.log(0.3), abs=1e-15)
        assert math.isfinite(dft.focal_term(0.0))

    @given(st.integers(0, 500), st.integers(0, 500))
    def test_entropy_bounds(self, a, b):
        if a + b == 0:
            return
        assert 0.0 <= dft.partition_entropy(a, b) <= math.log(2) + 1e-15

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DftConfig(num_thresholds=1)
        with pytest.raises(ValueError):
            DftConfig(focal_gamma=-1)
        with pytest.raises(ValueError):
            DftConfig(prob_clamp_eps=0.5)
        with pytest.raises(ValueError):
            DftConfig(loss_kind="gini")


class TestScoreFeature:
    def test_separable(self):
        v = np.r_[np.linspace(0, 1, 10), np.linspace(5, 6, 10)]
        y = np.r_[np.zeros(10), np.ones(10)]
        best = dft.dft_score_feature(v, y)
        assert best.loss == 0.0
        assert 1.0 <= best.threshold < 5.0
        assert (best.n_left, best.n_right) == (10, 10)

    def test_independent_labels_near_ln2(self):
        rng = np.random.default_rng(3)
        v = rng.uniform(size=5000)
        y = rng.integers(0, 2, size=5000)
        assert abs(dft.dft_score_feature(v, y).loss - math.log(2)) < 0.05

    def test_constant_feature_degenerate(self):
        best = dft.dft_score_feature(np.full(8, 2.5), [0, 1, 0, 1, 0, 1, 0, 1])
        assert best.degenerate and best.threshold == 2.5
        assert best.loss == pytest.approx(math.log(2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            dft.dft_score_feature([1.0, 2.0], [0, 1, 1])

    @pytest.mark.parametrize("kind", ["entropy", "focal"])
    def test_oracle_fixtures(self, kind):
        rng = np.random.default_rng(11)
        cfg = DftConfig(loss_kind=kind)
        for _ in range(100):
            n = int(rng.integers(2, 65))
            v = np.round(rng.normal(size=n), int(rng.integers(0, 4)))
            y = rng.integers(0, 2, size=n)
            if v.min() == v.max():
                continue
            got = dft.dft_score_feature(v, y, cfg)
            loss, t, nl = brute_force(v, y, kind=kind)
            assert (got.loss, got.threshold, got.n_left) == (loss, t, nl)

    @given(st.lists(st.tuples(st.integers(-20, 20), st.integers(0, 1)), min_size=2, max_size=64),
           st.sampled_from(["entropy", "focal"]))
    def test_oracle_property(self, rows, kind):
        v = np.array([r[0] for r in rows], dtype=float)
        y = np.array([r[1] for r in rows])
        if v.min() == v.max():
            return
        got = dft.dft_score_feature(v, y, DftConfig(loss_kind=kind))
        assert got.loss == brute_force(v, y, kind=kind)[0]
        assert got.n_left + got.n_right == v.size and got.n_left >= 1 and got.n_right >= 1

    @given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=2, max_size=64),
           st.integers(1, 4), st.integers(-10, 10))
    def test_affine_invariance(self, rows, scale, shift):
        v = np.array([r[0] for r in rows], dtype=float)
        y = np.array([r[1] for r in rows])
        if v.min() == v.max():
            return
        a = dft.dft_score_feature(v, y, DftConfig(num_thresholds=7))
        b = dft.dft_score_feature(scale * v + shift, y, DftConfig(num_thresholds=7))
        assert a.loss == b.loss and a.n_left == b.n_left

    @given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 1)), min_size=2, max_size=64))
    def test_entropy_label_swap(self, rows):
        v = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        if v.min() == v.max():
            return
        a = dft.dft_score_feature(v, y)
        b = dft.dft_score_feature(v, 1 - y)
        assert a.loss == pytest.approx(b.loss, abs=1e-15)
        assert 0.0 <= a.loss <= math.log(2) + 1e-12

    def test_focal_not_symmetric(self):
        v = np.arange(20.0)
        y = np.array([0] * 14 + [1, 0, 1, 1, 0, 1])
        cfg = DftConfig(loss_kind="focal")
        assert dft.dft_score_feature(v, y, cfg).loss != dft.dft_score_feature(v, 1 - y, cfg).loss


class TestRanking:
    def test_label_feature_first(self, rng):
        y = rng.integers(0, 2, size=40)
        x = np.column_stack([rng.normal(size=40), y.astype(float), rng.normal(size=40)])
        r = dft.rank_features(x, y)
        assert r.order[0] == 1 and r.losses[0] == 0.0

    def test_duplicate_columns_adjacent(self, rng):
        y = rng.integers(0, 2, size=30)
        base = rng.normal(size=(30, 3))
        x = np.column_stack([base, base[:, 1]])
        r = dft.rank_features(x, y)
        pos = {int(f): i for i, f in enumerate(r.order)}
        assert abs(pos[1] - pos[3]) == 1
        assert r.losses[pos[1]] == r.losses[pos[3]]

    def test_matches_oracle_resort(self, rng):
        x = rng.normal(size=(50, 20))
        y = rng.integers(0, 2, size=50)
        r = dft.rank_features(x, y)
        oracle = sorted(range(20), key=lambda j: (brute_force(x[:, j], y)[0], j))
        assert r.order.tolist() == oracle
        assert np.all(np.diff(r.losses) >= 0)

    def test_permutation_equivariant(self, rng):
        x = rng.normal(size=(40, 6))
        y = rng.integers(0, 2, size=40)
        perm = rng.permutation(6)
        a = dft.rank_features(x, y)
        b = dft.rank_features(x[:, perm], y, columns=perm)
        assert a.order.tolist() == b.order.tolist()
        assert np.array_equal(a.losses, b.losses)

    def test_csv_and_round_trip(self, rng):
        x = rng.normal(size=(20, 3))
        y = rng.integers(0, 2, size=20)
        r = dft.rank_features(x, y)
        lines = r.to_csv().splitlines()
        assert lines[0] == "feature_index,threshold,loss" and len(lines) == 4
        back = dft.DftRanking.from_dict(r.to_dict(), n_total=20)
        assert back.order.tolist() == r.order.tolist()
        assert [e.n_right for e in back.entries] == [e.n_right for e in r.entries]


class TestSelection:
    def ranking(self, losses):
        return dft.DftRanking([dft.PartitionLoss(i, 0.0, l, 1, 1) for i, l in enumerate(losses)])

    def test_top_k(self):
        r = self.ranking([0.1, 0.2, 0.3, 0.4, 0.5])
        assert dft.select_features(r, "top_k", 2).tolist() == [0, 1]
        assert dft.select_features(r, "top_k", 5).tolist() == [0, 1, 2, 3, 4]
        assert r.selected_indices.tolist() == [0, 1, 2, 3, 4]

    def test_elbow_step(self):
        r = self.ranking([0, 0, 0, 1, 1, 1])
        assert dft.select_features(r, "elbow").tolist() == [0, 1, 2]

    def test_elbow_straight_line_keeps_all(self):
        assert dft.elbow_index([0.0, 1.0, 2.0, 3.0]) == 3

    def test_errors(self):
        with pytest.raises(ValueError):
            dft.select_features(dft.DftRanking([]), "top_k", 1)
        r = self.ranking([0.1, 0.2])
        with pytest.raises(ValueError):
            dft.select_features(r, "top_k", 3)
        with pytest.raises(ValueError):
            dft.select_features(r, "median")
