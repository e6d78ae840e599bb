import numpy as np
import pytest

from conesep import Rng, partition
from conesep.errors import DimensionError
from conesep.evalkit import (
    orthogonality_stats,
    partition_purity,
    recall_at_k,
    subset_recall,
)
from conesep.numeric import unit_rows


class TestRecallAtK:
    def test_self_retrieval(self, rng):
        gallery = unit_rows(rng.normal(12, 16))
        out = recall_at_k(gallery, gallery, np.arange(12), [1, 5])
        assert out[1] == 1.0 and out[5] == 1.0

    def test_k_at_least_gallery_size(self, rng):
        queries, gallery = rng.normal(6, 4), rng.normal(9, 4)
        out = recall_at_k(queries, gallery, np.zeros(6, dtype=int), [9, 20])
        assert out[9] == 1.0 and out[20] == 1.0

    def test_monte_carlo_random_gallery(self):
        # random queries vs random gallery: hit rate approaches k / G
        g, k, total = 20, 4, 0.0
        trials = 0
        for seed in range(8):
            rng = Rng(seed)
            queries = rng.normal(300, 8)
            gallery = rng.normal(g, 8)
            gt = np.asarray(rng.integers(0, g, size=300))
            total += recall_at_k(queries, gallery, gt, [k])[k] * 300
            trials += 300
        assert total / trials == pytest.approx(k / g, abs=0.04)

    def test_nondecreasing_in_k(self, rng):
        queries, gallery = rng.normal(40, 6), rng.normal(30, 6)
        gt = np.asarray(rng.integers(0, 30, size=40))
        out = recall_at_k(queries, gallery, gt, [1, 3, 10, 30])
        values = [out[k] for k in (1, 3, 10, 30)]
        assert values == sorted(values)

    def test_tie_broken_by_lower_index(self):
        queries = np.array([[1.0, 0.0]])
        gallery = np.array([[1.0, 0.0], [1.0, 0.0]])  # identical items
        assert recall_at_k(queries, gallery, [0], [1])[1] == 1.0
        assert recall_at_k(queries, gallery, [1], [1])[1] == 0.0
        assert recall_at_k(queries, gallery, [1], [2])[2] == 1.0

    def test_bad_gt(self, rng):
        with pytest.raises(DimensionError):
            recall_at_k(rng.normal(2, 3), rng.normal(4, 3), [5, 0], [1])


class TestSubsetRecall:
    def test_singleton_candidates(self, rng):
        queries, gallery = rng.normal(5, 4), rng.normal(8, 4)
        gt = np.arange(5)
        sets = [[i] for i in range(5)]
        out = subset_recall(queries, gallery, gt, sets, [1])
        assert out[1] == 1.0

    def test_full_gallery_reduces_to_recall(self, rng):
        queries, gallery = rng.normal(10, 5), rng.normal(7, 5)
        gt = np.asarray(rng.integers(0, 7, size=10))
        sets = [list(range(7))] * 10
        full = recall_at_k(queries, gallery, gt, [1, 3])
        sub = subset_recall(queries, gallery, gt, sets, [1, 3])
        assert sub == full

    def test_matches_sorting_oracle(self, rng):
        queries, gallery = rng.normal(20, 6), rng.normal(30, 6)
        gt = np.asarray(rng.integers(0, 30, size=20))
        sets = []
        for i in range(20):
            extra = [int(x) for x in rng.choice(30, 5)]
            sets.append(sorted({int(gt[i]), *extra}))
        out = subset_recall(queries, gallery, gt, sets, [1, 2, 3])

        sims = unit_rows(queries) @ unit_rows(gallery).T
        for k in (1, 2, 3):
            hits = 0
            for i, cand in enumerate(sets):
                ranked = sorted(cand, key=lambda j: (-sims[i, j], j))
                hits += int(gt[i] in ranked[:k])
            assert out[k] == pytest.approx(hits / 20)

    def test_subset_recall_dominates_full(self, rng):
        queries, gallery = rng.normal(15, 5), rng.normal(25, 5)
        gt = np.asarray(rng.integers(0, 25, size=15))
        sets = [sorted({int(gt[i]), *(int(x) for x in rng.choice(25, 5))}) for i in range(15)]
        sub = subset_recall(queries, gallery, gt, sets, [3])
        full = recall_at_k(queries, gallery, gt, [3])
        assert sub[3] >= full[3]

    def test_missing_gt_rejected(self, rng):
        with pytest.raises(ValueError):
            subset_recall(rng.normal(1, 3), rng.normal(4, 3), [0], [[1, 2]], [1])


class TestPartitionPurity:
    def test_perfect_partition(self):
        flags = np.array([False, False, True, True])
        part = partition(np.array([0.9, 0.8, 0.1, 0.2]), 0.5)
        report = partition_purity(part, flags)
        assert report.precision == 1.0 and report.recall == 1.0 and report.f1 == 1.0
        assert report.real_positive == 2 and report.wrong_positive == 0

    def test_all_clean_partition_base_rate(self):
        flags = np.zeros(100, dtype=bool)
        flags[:20] = True
        report = partition_purity(partition(np.ones(100), 0.5), flags)
        assert report.precision == pytest.approx(0.8)
        assert report.recall == 1.0

    def test_counting_oracle(self, rng):
        for seed in range(5):
            r = Rng(seed)
            scores = r.uniform(1, 50)[0]
            flags = r.uniform(1, 50)[0] > 0.4
            part = partition(scores, 0.1)
            report = partition_purity(part, flags)
            tp = sum(1 for i in range(50) if scores[i] >= 0.1 and not flags[i])
            fp = sum(1 for i in range(50) if scores[i] >= 0.1 and flags[i])
            fn = sum(1 for i in range(50) if scores[i] < 0.1 and not flags[i])
            assert report.real_positive == tp and report.wrong_positive == fp
            if tp + fp:
                assert report.precision == pytest.approx(tp / (tp + fp))
            if tp + fn:
                assert report.recall == pytest.approx(tp / (tp + fn))

    def test_length_mismatch(self):
        part = partition(np.ones(3), 0.5)
        with pytest.raises(DimensionError):
            partition_purity(part, np.zeros(4, dtype=bool))


class TestOrthogonality:
    def test_exact_orthogonality(self):
        f_c = np.array([[1.0, 0.0], [0.0, 1.0]])
        f_neg = np.array([[0.0, 1.0], [1.0, 0.0]])
        stats = orthogonality_stats(f_c, f_neg, bins=10)
        assert stats["mean"] == 0.0 and stats["std"] == 0.0

    def test_identity(self, rng):
        f = rng.normal(5, 6)
        stats = orthogonality_stats(f, f)
        assert stats["mean"] == pytest.approx(1.0)

    def test_histogram_conserves_count(self, rng):
        f_c, f_neg = rng.normal(37, 8), rng.normal(37, 8)
        stats = orthogonality_stats(f_c, f_neg, bins=13)
        assert sum(stats["histogram"]) == 37
        assert len(stats["histogram"]) == 13
        assert stats["bin_edges"][0] == -1.0 and stats["bin_edges"][-1] == 1.0

    def test_extreme_value_lands_in_last_bin(self):
        f = np.array([[1.0, 0.0]])
        stats = orthogonality_stats(f, f, bins=4)
        assert stats["histogram"][-1] == 1

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            orthogonality_stats(rng.normal(3, 4), rng.normal(4, 4))
