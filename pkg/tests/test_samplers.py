"""Method dispatch, tensor-shape contracts, exclusion, adaptive filter."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from negseq.data import PopularityTable
from negseq.samplers import (ConfigurationError, Method, SamplerConfig,
                             adaptive_filter, build_candidate_pool,
                             build_negatives, sample_batch, sample_global,
                             sample_mixed, trace_rows)


def pop_table(freqs):
    arr = np.zeros(len(freqs) + 1, dtype=np.int64)
    arr[1:] = freqs
    return PopularityTable(freq=arr, total_interactions=int(arr.sum()))


def uniform_pop(n):
    return pop_table([1] * n)


class TestSampleGlobal:
    def test_uniform_conformance_chi_square(self):
        pop = uniform_pop(100)
        rng = np.random.default_rng(0)
        draws, shortfall = sample_global(pop, 0.0, 100_000, set(), rng)
        assert shortfall  # 10^5 draws over only 100 distinct items
        assert draws.size == 100_000
        counts = np.bincount(draws, minlength=101)[1:]
        assert stats.chisquare(counts).pvalue > 0.01

    def test_popularity_conformance_chi_square(self):
        pop = pop_table([3, 1])
        rng = np.random.default_rng(1)
        draws, shortfall = sample_global(pop, 1.0, 100_000, set(), rng)
        assert shortfall
        counts = np.bincount(draws, minlength=3)[1:]
        expected = np.array([0.75, 0.25]) * draws.size
        assert stats.chisquare(counts, expected).pvalue > 0.01

    def test_exclusion_restricted_conformance(self):
        freqs = np.arange(1, 101)
        pop = pop_table(list(freqs))
        excluded = set(range(1, 40))
        rng = np.random.default_rng(2)
        draws, shortfall = sample_global(pop, 1.0, 100_000, excluded, rng)
        assert shortfall
        assert not np.isin(draws, list(excluded)).any()
        counts = np.bincount(draws, minlength=101)[40:]
        target = freqs[39:].astype(float)
        expected = target / target.sum() * draws.size
        assert stats.chisquare(counts, expected).pvalue > 0.01

    def test_forced_single_outcome(self):
        pop = uniform_pop(5)
        draws, shortfall = sample_global(pop, 0.0, 1, set([1, 2, 3, 4]),
                                         np.random.default_rng(3))
        assert not shortfall
        assert list(draws) == [5]

    def test_shortfall_flagged_but_draws_delivered(self):
        pop = uniform_pop(5)
        draws, shortfall = sample_global(pop, 0.0, 10, set([4, 5]),
                                         np.random.default_rng(4))
        assert shortfall
        assert draws.size == 10
        assert set(draws.tolist()) <= {1, 2, 3}

    def test_nothing_eligible_returns_empty_flagged(self):
        pop = uniform_pop(3)
        draws, shortfall = sample_global(pop, 0.0, 4, {1, 2, 3},
                                         np.random.default_rng(4))
        assert shortfall
        assert draws.size == 0

    def test_seeded_determinism(self):
        pop = pop_table([5, 3, 2, 1])
        a, _ = sample_global(pop, 1.0, 50, {2}, np.random.default_rng(9))
        b, _ = sample_global(pop, 1.0, 50, {2}, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)


class TestSampleBatch:
    def test_definition_example(self):
        # u1's positive A (id 1), u2's positive B (id 2); u1 history = {A}
        neg = sample_batch([1, 2], [np.array([1]), np.array([3])],
                           seq_len=4)
        assert neg.logical_shape == (2, 4, 2)
        np.testing.assert_array_equal(neg.pool, [[1, 2], [1, 2]])
        np.testing.assert_array_equal(neg.exclusion,
                                      [[True, False], [False, False]])

    def test_single_user_batch_empty_eligible(self):
        neg = sample_batch([7], [np.array([3, 7])], seq_len=2)
        assert neg.exclusion.all()

    def test_no_history_overlap_sees_everything(self):
        neg = sample_batch([1, 2, 3], [np.array([9])] * 3, seq_len=2)
        assert not neg.exclusion.any()


class TestSampleMixed:
    def test_pool_sizes_concatenate(self):
        batch_part = sample_batch([1, 2], [np.array([1]), np.array([2])],
                                  seq_len=3)
        pop = uniform_pop(50)
        cfg = SamplerConfig(method="random", n_negatives=4)
        rand_part = build_candidate_pool(
            cfg, np.zeros((2, 3), np.int64), np.zeros((2, 3), np.int64),
            [np.array([1]), np.array([2])], pop, np.random.default_rng(0))
        mixed = sample_mixed(batch_part, rand_part)
        assert mixed.logical_shape == (2, 3, 6)
        assert mixed.pool.shape == (2, 6)

    def test_zero_random_part_is_batch_identity(self):
        batch_part = sample_batch([1, 2], [np.array([1]), np.array([2])],
                                  seq_len=3)
        empty = sample_mixed(batch_part, batch_part)
        np.testing.assert_array_equal(empty.pool[:, :2], batch_part.pool)


class TestAdaptiveFilter:
    def brute_force(self, scores, k, excluded):
        """Sort by (score desc, index asc), take first min(k, eligible)."""
        order = sorted(range(len(scores)),
                       key=lambda i: (-scores[i], i))
        eligible = [i for i in order if not excluded[i]]
        keep = set(eligible[:k])
        return np.array([i in keep for i in range(len(scores))])

    def test_worked_example(self):
        scores = np.array([[[0.9, 0.1, 0.5, 0.7]]])
        retention = adaptive_filter(scores, 2, np.zeros((1, 4), bool))
        np.testing.assert_array_equal(retention[0, 0],
                                      [True, False, False, True])

    def test_saturating_k_retains_all_eligible(self):
        scores = np.array([[[0.9, 0.1, 0.5]]])
        excl = np.array([[False, True, False]])
        retention = adaptive_filter(scores, 10, excl)
        np.testing.assert_array_equal(retention[0, 0],
                                      [True, False, True])

    def test_equal_scores_tie_break_low_index(self):
        scores = np.zeros((1, 1, 5))
        retention = adaptive_filter(scores, 2, np.zeros((1, 5), bool))
        np.testing.assert_array_equal(retention[0, 0],
                                      [True, True, False, False, False])

    def test_nonpositive_k_rejected(self):
        with pytest.raises(ConfigurationError):
            adaptive_filter(np.zeros((1, 1, 3)), 0, np.zeros((1, 3), bool))

    def test_exhaustive_small_instances_match_oracle(self):
        rng = np.random.default_rng(0)
        for pool_size in range(1, 13):
            for k in range(1, pool_size + 1):
                for kind in ("float", "ties", "constant"):
                    if kind == "float":
                        scores = rng.normal(size=pool_size)
                    elif kind == "ties":
                        scores = rng.integers(0, 3,
                                              size=pool_size).astype(float)
                    else:
                        scores = np.zeros(pool_size)
                    excluded = rng.random(pool_size) < 0.25
                    got = adaptive_filter(scores[None, None, :], k,
                                          excluded[None, :])[0, 0]
                    want = self.brute_force(scores, k, excluded)
                    np.testing.assert_array_equal(got, want)

    def test_retention_counts_exact(self, rng):
        scores = rng.normal(size=(3, 4, 9))
        excl = rng.random((3, 9)) < 0.4
        k = 3
        retention = adaptive_filter(scores, k, excl)
        eligible = (~excl).sum(axis=1)
        for b in range(3):
            expected = min(k, eligible[b])
            assert (retention[b].sum(axis=-1) == expected).all()


class TestBuildNegatives:
    def args(self, B=8, S=16, corpus=200, seed=0):
        rng = np.random.default_rng(seed)
        seqs = rng.integers(1, corpus + 1, size=(B, S)).astype(np.int64)
        targets = rng.integers(1, corpus + 1, size=(B, S)).astype(np.int64)
        histories = [np.unique(np.concatenate([seqs[b], targets[b]]))
                     for b in range(B)]
        return seqs, targets, histories, uniform_pop(corpus), \
            np.random.default_rng(seed + 1)

    def scorer_for(self, corpus=200, seed=0):
        emb = np.random.default_rng(seed).normal(size=(corpus + 1, 4))

        def scorer(seqs, pool):
            user = np.ones((seqs.shape[0], seqs.shape[1], 4))
            return np.einsum("bsd,bpd->bsp", user, emb[pool])
        return scorer

    @pytest.mark.parametrize("method,expected_p", [
        (Method.RANDOM, 32), (Method.POPULARITY, 32), (Method.BATCH, 8),
        (Method.MIXED, 40), (Method.ADAPTIVE, 32),
        (Method.ADAPTIVE_MIXED, 40),
    ])
    def test_logical_shapes(self, method, expected_p):
        seqs, targets, histories, pop, rng = self.args()
        cfg = SamplerConfig(method=method, n_negatives=32, k_retain=4,
                            batch_to_random_ratio=None)
        neg = build_negatives(cfg, seqs, targets, histories, pop, rng,
                              model_scorer=self.scorer_for())
        assert neg.logical_shape == (8, 16, expected_p)
        assert neg.pool.shape == (8, expected_p)
        if method in (Method.ADAPTIVE, Method.ADAPTIVE_MIXED):
            assert neg.retention is not None
            assert neg.retention.shape == (8, 16, expected_p)
        else:
            assert neg.retention is None

    def test_mixed_ratio_respected(self):
        seqs, targets, histories, pop, rng = self.args(B=4)
        cfg = SamplerConfig(method="mixed", n_negatives=32,
                            batch_to_random_ratio=10.0)
        neg = build_candidate_pool(cfg, seqs, targets, histories, pop, rng)
        assert neg.logical_shape == (4, 16, 4 + 40)

    def test_adaptive_without_scorer_is_configuration_error(self):
        seqs, targets, histories, pop, rng = self.args()
        cfg = SamplerConfig(method="adaptive", n_negatives=8, k_retain=2)
        with pytest.raises(ConfigurationError, match="scorer"):
            build_negatives(cfg, seqs, targets, histories, pop, rng)

    def test_no_unexcluded_candidate_in_history(self):
        for method in Method:
            seqs, targets, histories, pop, rng = self.args(seed=3)
            cfg = SamplerConfig(method=method, n_negatives=16, k_retain=4,
                                batch_to_random_ratio=None)
            neg = build_candidate_pool(cfg, seqs, targets, histories, pop,
                                       rng)
            for b, hist in enumerate(histories):
                usable = neg.pool[b][~neg.exclusion[b]]
                assert not np.isin(usable, hist).any()

    def test_seeded_determinism(self):
        for method in Method:
            cfg = SamplerConfig(method=method, n_negatives=16, k_retain=4,
                                batch_to_random_ratio=None)
            seqs, targets, histories, pop, _ = self.args(seed=5)
            a = build_candidate_pool(cfg, seqs, targets, histories, pop,
                                     np.random.default_rng(77))
            b = build_candidate_pool(cfg, seqs, targets, histories, pop,
                                     np.random.default_rng(77))
            np.testing.assert_array_equal(a.pool, b.pool)
            np.testing.assert_array_equal(a.exclusion, b.exclusion)

    def test_shortfall_still_fills_pool_iid(self):
        seqs = np.array([[1, 2]], dtype=np.int64)
        targets = np.array([[2, 0]], dtype=np.int64)
        histories = [np.array([1, 2], dtype=np.int64)]
        cfg = SamplerConfig(method="random", n_negatives=10)
        neg = build_candidate_pool(cfg, seqs, targets, histories,
                                   uniform_pop(5),
                                   np.random.default_rng(0))
        assert neg.logical_shape == (1, 2, 10)
        assert neg.shortfall[0]
        usable = neg.pool[0][~neg.exclusion[0]]
        assert usable.size == 10
        assert set(usable.tolist()) <= {3, 4, 5}

    def test_nothing_eligible_gives_fully_excluded_row(self):
        seqs = np.array([[1, 2]], dtype=np.int64)
        targets = np.array([[2, 0]], dtype=np.int64)
        histories = [np.array([1, 2, 3], dtype=np.int64)]
        cfg = SamplerConfig(method="random", n_negatives=4)
        neg = build_candidate_pool(cfg, seqs, targets, histories,
                                   uniform_pop(3),
                                   np.random.default_rng(0))
        assert neg.exclusion[0].all()

    def test_trace_rows_cover_pool(self):
        seqs, targets, histories, pop, rng = self.args(B=2, S=3)
        cfg = SamplerConfig(method="random", n_negatives=4)
        neg = build_candidate_pool(cfg, seqs, targets, histories, pop, rng)
        rows = list(trace_rows(neg, users=np.array([10, 11])))
        assert len(rows) == 2 * 3 * 4
        assert {r[0] for r in rows} == {10, 11}


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(1, 24), st.integers(0, 10_000))
def test_exclusion_property_random_batches(batch_size, n_neg, seed):
    """No usable candidate may collide with its user's sequence."""
    rng = np.random.default_rng(seed)
    corpus = 50
    seqs = rng.integers(1, corpus + 1,
                        size=(batch_size, 6)).astype(np.int64)
    targets = rng.integers(1, corpus + 1,
                           size=(batch_size, 6)).astype(np.int64)
    histories = [np.unique(np.concatenate([seqs[b], targets[b]]))
                 for b in range(batch_size)]
    cfg = SamplerConfig(method="mixed", n_negatives=n_neg,
                        batch_to_random_ratio=None)
    neg = build_candidate_pool(cfg, seqs, targets, histories,
                               uniform_pop(corpus),
                               np.random.default_rng(seed + 1))
    for b, hist in enumerate(histories):
        usable = neg.pool[b][~neg.exclusion[b]]
        assert not np.isin(usable, hist).any()
