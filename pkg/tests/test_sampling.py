"""Neighbor windows, batch dictionaries, and negative sampling."""

import numpy as np
import pytest

from tidegraph.errors import LeakageError
from tidegraph.events import EventStore
from tidegraph.sampling import (
    PAD_ID,
    NegativeSampler,
    NegativeSamplingStrategy,
    NeighborSampler,
    build_batch_index,
    sample_negatives,
    sample_neighbors,
)


def _store_from_rows(rows, **kw):
    src, tgt, ts = zip(*rows)
    return EventStore(src, tgt, ts, np.zeros((len(rows), 2)), **kw)


def _brute_history(store, anchor, query_time):
    """All (time, partner, event_id) of anchor strictly before query_time."""
    out = []
    for i in range(store.num_events):
        s, t, ts = int(store.src[i]), int(store.tgt[i]), float(store.timestamps[i])
        if ts >= query_time:
            continue
        if s == anchor:
            out.append((ts, t, i))
        if t == anchor:
            out.append((ts, s, i))
    out.sort(key=lambda x: (x[0], x[2]))
    return out


class TestNeighborWindows:
    def test_underfull_window_left_pads(self):
        store = _store_from_rows([(0, 5, 1.0), (0, 6, 2.0), (1, 7, 3.0)])
        seq = sample_neighbors(store, 0, 10.0, n=4)
        np.testing.assert_array_equal(seq.ids, [PAD_ID, PAD_ID, 5, 6])
        np.testing.assert_array_equal(seq.times, [10.0, 10.0, 1.0, 2.0])
        np.testing.assert_array_equal(seq.mask, [False, False, True, True])
        assert np.all(seq.edge_feats[:2] == 0)

    def test_no_history_all_pad(self):
        store = _store_from_rows([(0, 5, 1.0)])
        seq = sample_neighbors(store, 3, 10.0, n=4)
        assert seq.num_real == 0
        np.testing.assert_array_equal(seq.ids, [PAD_ID] * 4)

    def test_recent_takes_latest_before_query(self):
        rows = [(0, 10 + k, float(k)) for k in range(6)]
        store = _store_from_rows(rows)
        seq = sample_neighbors(store, 0, 4.5, n=4)
        # history before 4.5 is t=0..4; the 4 latest are t=1..4
        expected = [(t, p) for t, p, _ in _brute_history(store, 0, 4.5)][-4:]
        np.testing.assert_array_equal(seq.times, [t for t, _ in expected])
        np.testing.assert_array_equal(seq.ids, [p for _, p in expected])

    def test_strictly_before_query_time(self):
        store = _store_from_rows([(0, 5, 2.0), (0, 6, 2.0)])
        seq = sample_neighbors(store, 0, 2.0, n=4)
        assert seq.num_real == 0

    def test_recent_is_history_suffix_randomized(self):
        rng = np.random.default_rng(0)
        n_events = 300
        ts = np.sort(rng.uniform(0, 500, n_events))
        store = EventStore(rng.integers(0, 15, n_events), rng.integers(0, 15, n_events), ts)
        sampler = NeighborSampler(store)
        for _ in range(1000):
            anchor = int(rng.integers(0, 15))
            q = float(rng.uniform(0, 600))
            n = int(rng.integers(1, 9))
            seq = sampler.sample(anchor, q, n)
            hist = _brute_history(store, anchor, q)
            suffix = hist[-min(n, len(hist)) :] if hist else []
            real = seq.num_real
            assert real == min(n, len(hist))
            np.testing.assert_array_equal(seq.ids[n - real :], [p for _, p, _ in suffix])
            np.testing.assert_array_equal(seq.event_ids[n - real :], [e for _, _, e in suffix])
            assert np.all(seq.times[seq.mask] < q)

    def test_uniform_no_leakage_and_reproducible(self):
        rng = np.random.default_rng(1)
        n_events = 200
        ts = np.sort(rng.uniform(0, 100, n_events))
        store = EventStore(rng.integers(0, 8, n_events), rng.integers(0, 8, n_events), ts)
        sampler = NeighborSampler(store)
        a = sampler.sample(2, 80.0, 6, "uniform", np.random.default_rng(42))
        b = sampler.sample(2, 80.0, 6, "uniform", np.random.default_rng(42))
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.event_ids, b.event_ids)
        assert np.all(a.times[a.mask] < 80.0)
        mask_times = a.times[a.mask]
        assert np.all(np.diff(mask_times) >= 0)

    def test_uniform_underfull_takes_everything(self):
        store = _store_from_rows([(0, 5, 1.0), (0, 6, 2.0)])
        seq = sample_neighbors(store, 0, 9.0, n=5, strategy="uniform", rng=np.random.default_rng(0))
        assert seq.num_real == 2

    def test_leakage_guard(self):
        store = _store_from_rows([(0, 5, 1.0), (0, 6, 2.0)])
        sampler = NeighborSampler(store)
        # break the sort order so the binary search admits a future event
        sampler._times[sampler._ptr[0] : sampler._ptr[1]] = [50.0, 5.0]
        with pytest.raises(LeakageError):
            sampler.sample(0, 10.0, 2)


class TestBatchIndex:
    def test_single_pair(self):
        store = _store_from_rows([(0, 5, 1.0), (1, 6, 2.0)])
        index = build_batch_index(store, [(0, 5, 3.0)], n=4)
        assert set(index.src_index) == {0}
        assert set(index.tgt_index) == {5}
        assert index.m == 1

    def test_duplicate_src_last_wins(self):
        store = _store_from_rows([(0, 5, 1.0), (0, 6, 2.0), (0, 7, 3.0)])
        index = build_batch_index(store, [(0, 5, 2.5), (0, 6, 3.5)], n=4)
        assert list(index.src_index) == [0]
        # the surviving window was sampled at the later query time
        assert index.src_index[0].query_time == 3.5
        assert index.m == 2

    def test_default_batch_size_distinct_keys(self):
        rows = [(i, 200 + i, float(i)) for i in range(200)]
        store = _store_from_rows(rows)
        batch = [(i, 200 + i, 300.0) for i in range(200)]
        index = build_batch_index(store, batch, n=2)
        assert len(index.src_index) == 200
        assert len(index.tgt_index) == 200


class TestNegativeSampling:
    def test_forced_choice_with_two_targets(self):
        store = _store_from_rows([(0, 10, 1.0), (1, 11, 2.0)])
        strat = NegativeSamplingStrategy("random", seed=0)
        for trial in range(20):
            neg, fell = sample_negatives(store, [(0, 10, 3.0)], strat)
            assert neg[0] == 11
            assert not fell[0]

    def test_historical_fallback_flagged(self):
        store = _store_from_rows([(0, 10, 1.0), (1, 11, 2.0)])
        strat = NegativeSamplingStrategy("historical", seed=0)
        # src 2 has no history at all -> random fallback
        neg, fell = sample_negatives(store, [(2, 10, 3.0)], strat, train_range=(0, 2))
        assert fell[0]
        assert neg[0] in (11,)  # only non-positive target

    def test_historical_pool_matches_brute_force(self):
        rng = np.random.default_rng(5)
        rows = []
        t = 0.0
        for _ in range(20):
            t += float(rng.uniform(0.5, 2.0))
            rows.append((int(rng.integers(0, 4)), int(10 + rng.integers(0, 5)), t))
        store = _store_from_rows(rows)
        train_range = (0, 20)  # whole toy stream is the training range
        strat = NegativeSamplingStrategy("historical", seed=3)
        sampler = NegativeSampler(store, strat, train_range)
        query_t = t + 10.0
        for src in range(4):
            for pos_tgt in range(10, 15):
                pool = sampler._pool(src, query_t, pos_tgt)
                brute = {
                    int(tg)
                    for s, tg, _ in rows
                    if s == src and tg != pos_tgt
                }
                assert set(int(v) for v in pool) == brute

    def test_historical_draws_come_from_pool(self):
        rows = [(0, 10, 1.0), (0, 11, 2.0), (0, 12, 3.0), (1, 13, 4.0)]
        store = _store_from_rows(rows)
        strat = NegativeSamplingStrategy("historical", seed=9)
        positives = [(0, 12, 5.0)] * 50
        neg, fell = sample_negatives(store, positives, strat, train_range=(0, 4))
        assert not fell.any()
        assert set(neg) <= {10, 11}

    def test_inductive_restricted_to_new_edges(self):
        # (0,10) first seen in train; (0,11) first seen after the train range
        rows = [(0, 10, 1.0), (1, 12, 2.0), (0, 11, 3.0), (0, 10, 4.0)]
        store = _store_from_rows(rows)
        strat = NegativeSamplingStrategy("inductive", seed=2)
        positives = [(0, 13, 5.0)] * 30
        # universe misses 13, so no SamplingError; train covers first 2 events
        neg, fell = NegativeSampler(store, strat, (0, 2)).sample(positives)
        assert not fell.any()
        assert set(neg) == {11}

    def test_inductive_fallback_when_all_pairs_trained(self):
        rows = [(0, 10, 1.0), (0, 11, 2.0)]
        store = _store_from_rows(rows)
        strat = NegativeSamplingStrategy("inductive", seed=2)
        neg, fell = NegativeSampler(store, strat, (0, 2)).sample([(0, 10, 3.0)])
        assert fell[0]

    def test_strategy_aliases(self):
        assert NegativeSamplingStrategy("rnd").kind == "random"
        assert NegativeSamplingStrategy("hist").kind == "historical"
        assert NegativeSamplingStrategy("ind").kind == "inductive"
        with pytest.raises(ValueError):
            NegativeSamplingStrategy("bogus")

    def test_random_excludes_only_paired_positive(self):
        store = _store_from_rows([(0, 10, 1.0), (0, 11, 2.0), (0, 12, 3.0)])
        strat = NegativeSamplingStrategy("random", seed=1)
        neg, _ = sample_negatives(store, [(0, 11, 4.0)] * 200, strat)
        assert 11 not in set(neg)
        assert set(neg) == {10, 12}
