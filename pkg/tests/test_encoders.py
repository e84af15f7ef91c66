"""Temporal encoding, interaction counting, and season-trend decomposition."""

import math

import numpy as np
import pytest

from tidegraph.encoders import (
    GRANULARITY_SECONDS,
    MteConfig,
    bie_counts,
    bie_embed,
    bie_reconstruct,
    build_ste_signal,
    encode_coarse_time,
    encode_fine_time,
    mix_temporal,
    ste_decompose,
)
from tidegraph.errors import ConfigError, LeakageError
from tidegraph.sampling import PAD_ID, BatchNeighborIndex, NeighborSequence


def make_seq(anchor, ids, n=None, query_time=100.0):
    """Hand-built window; times are arbitrary ascending values before query."""
    ids = list(ids)
    n = n or len(ids)
    pad = n - len(ids)
    full = np.array([PAD_ID] * pad + ids, dtype=np.int64)
    times = np.full(n, query_time)
    times[pad:] = np.linspace(1.0, 50.0, len(ids))
    return NeighborSequence(
        anchor=anchor,
        query_time=query_time,
        ids=full,
        times=times,
        edge_feats=np.zeros((n, 0)),
        event_ids=np.where(full == PAD_ID, -1, np.arange(n)),
    )


class TestFineTime:
    def test_zero_offset_is_all_ones(self):
        cfg = MteConfig(d_t=8)
        np.testing.assert_array_equal(encode_fine_time(0.0, cfg), np.ones(8))

    def test_first_component_is_plain_cosine(self):
        cfg = MteConfig(d_t=6, alpha=3.0, beta=2.0)
        for dt in (0.5, 2.0, 77.0):
            assert encode_fine_time(dt, cfg)[0] == pytest.approx(math.cos(dt), abs=1e-15)

    def test_matches_scalar_oracle(self):
        cfg = MteConfig(d_t=4, alpha=2.0, beta=2.0)
        got = encode_fine_time(100.0, cfg)
        expected = [math.cos(2.0 ** (-(j - 1) / 2.0) * 100.0) for j in (1, 2, 3, 4)]
        np.testing.assert_allclose(got, expected, atol=1e-15)

    def test_negative_offset_rejected(self):
        with pytest.raises(LeakageError):
            encode_fine_time(-1.0, MteConfig(d_t=4))

    def test_batched_shape(self):
        cfg = MteConfig(d_t=5)
        out = encode_fine_time(np.zeros((3, 7)), cfg)
        assert out.shape == (3, 7, 5)
        np.testing.assert_array_equal(out, 1.0)

    def test_injectivity_proxy(self):
        # 100 distinct offsets below a max satisfying the decay condition
        cfg = MteConfig(d_t=32, alpha=10.0, beta=3.0)
        dt_max = 5000.0
        cfg.validate_decay(dt_max)
        rng = np.random.default_rng(0)
        offsets = rng.uniform(0, dt_max, 100)
        vectors = encode_fine_time(offsets, cfg)
        for i in range(100):
            for j in range(i + 1, 100):
                assert not np.allclose(vectors[i], vectors[j], atol=1e-12)

    def test_decay_validation(self):
        cfg = MteConfig(d_t=100)  # alpha = beta = 10
        cfg.validate_decay(1000.0)  # residual 1e3 * 10**-9.9 ~ 1.3e-7 < 1e-6
        with pytest.raises(ConfigError, match="decay"):
            cfg.validate_decay(3600.0 * 24 * 30)


class TestCoarseTime:
    def test_zero_offset(self):
        bucket, term = encode_coarse_time(0.0, MteConfig(d_t=4, r_segments=4))
        assert bucket == 0
        np.testing.assert_array_equal(term, np.zeros(4))

    def test_weekly_bucket_boundary(self):
        cfg = MteConfig(d_t=3, granularity="weekly", r_segments=4)
        b1, t1 = encode_coarse_time(604800.0, cfg)
        assert b1 == 1
        np.testing.assert_allclose(t1, 0.25)
        b0, t0 = encode_coarse_time(604799.0, cfg)
        assert b0 == 0
        np.testing.assert_array_equal(t0, 0.0)

    def test_divisors_follow_printed_formula(self):
        assert GRANULARITY_SECONDS["weekly"] == 24 * 7 * 3600
        assert GRANULARITY_SECONDS["monthly"] == 24 * 7 * 30 * 3600
        assert GRANULARITY_SECONDS["yearly"] == 24 * 7 * 365 * 3600

    def test_divisor_override(self):
        cfg = MteConfig(d_t=2, granularity="monthly", divisor_override=30 * 24 * 3600)
        bucket, _ = encode_coarse_time(31 * 24 * 3600.0, cfg)
        assert bucket == 1

    def test_monotone_and_segment_constant(self):
        cfg = MteConfig(d_t=2, granularity="weekly", r_segments=8)
        week = GRANULARITY_SECONDS["weekly"]
        offsets = np.linspace(0, 5 * week, 1000)
        buckets, _ = encode_coarse_time(offsets, cfg)
        assert np.all(np.diff(buckets) >= 0)
        # identical embedding within a segment, flip exactly at the divisor
        inside, _ = encode_coarse_time(np.array([2 * week + 1.0, 3 * week - 1.0]), cfg)
        assert inside[0] == inside[1] == 2
        edge, _ = encode_coarse_time(np.array([3 * week - 1e-3, 3 * week]), cfg)
        assert tuple(edge) == (2, 3)


class TestMix:
    def test_sum_identity(self):
        fine = np.ones(4)
        np.testing.assert_array_equal(mix_temporal(fine, np.zeros(4), "sum"), fine)

    def test_sum_values(self):
        out = mix_temporal(np.array([1.0, 1.0]), np.array([0.25, 0.25]), "sum")
        np.testing.assert_allclose(out, [1.25, 1.25])

    def test_concat(self):
        out = mix_temporal(np.array([1.0, 1.0]), np.array([0.25, 0.25]), "concat")
        np.testing.assert_allclose(out, [1.0, 1.0, 0.25, 0.25])
        assert out.shape == (4,)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            mix_temporal(np.ones(3), np.ones(4), "sum")


def _worked_example():
    """The bipartite reconstruction scenario with known count matrices.

    Sources are 0..4 and targets 10..14. The source anchor 0 has window
    [10, 11, 12, 10]; the target anchor 10 has window [0, 1, 2, 0]. The batch
    dictionaries know node 1 -> {11, 13} and node 12 -> {2, 4}.
    """
    src_seq = make_seq(0, [10, 11, 12, 10])
    tgt_seq = make_seq(10, [0, 1, 2, 0])
    index = BatchNeighborIndex(
        src_index={1: make_seq(1, [11, 13], n=4)},
        tgt_index={12: make_seq(12, [2, 4], n=4)},
        m=2,
    )
    return src_seq, tgt_seq, index


class TestReconstruction:
    def test_worked_example_sequences(self):
        src_seq, tgt_seq, index = _worked_example()
        src_new, tgt_new = bie_reconstruct(src_seq, tgt_seq, index)
        assert set(src_new.replacements) == {2}
        np.testing.assert_array_equal(src_new.replacements[2], [2, 4])
        assert src_new.token_ids(0) == 10 and src_new.token_ids(3) == 10
        assert src_new.token_ids(1) == 11
        assert set(tgt_new.replacements) == {1}
        np.testing.assert_array_equal(tgt_new.replacements[1], [11, 13])

    def test_worked_example_counts(self):
        src_seq, tgt_seq, index = _worked_example()
        i_src, i_tgt = bie_counts(*bie_reconstruct(src_seq, tgt_seq, index))
        np.testing.assert_array_equal(i_src, [[2, 2], [1, 1], [1, 0], [2, 2]])
        np.testing.assert_array_equal(i_tgt, [[2, 2], [0, 1], [1, 1], [2, 2]])

    def test_empty_index_changes_nothing(self):
        src_seq, tgt_seq, _ = _worked_example()
        empty = BatchNeighborIndex(src_index={}, tgt_index={}, m=0)
        src_new, tgt_new = bie_reconstruct(src_seq, tgt_seq, empty)
        assert src_new.replacements == {} and tgt_new.replacements == {}

    def test_shared_neighbors_not_processed(self):
        # non-bipartite: both windows hold the same ids, so the work set is empty
        src_seq = make_seq(0, [5, 6, 7])
        tgt_seq = make_seq(1, [6, 7, 5])
        index = BatchNeighborIndex(
            src_index={5: make_seq(5, [8], n=3), 6: make_seq(6, [9], n=3)},
            tgt_index={7: make_seq(7, [3], n=3)},
            m=2,
        )
        src_new, tgt_new = bie_reconstruct(src_seq, tgt_seq, index)
        assert src_new.replacements == {} and tgt_new.replacements == {}

    def test_all_pad_windows_zero_counts(self):
        src_seq = make_seq(0, [], n=4)
        tgt_seq = make_seq(10, [], n=4)
        empty = BatchNeighborIndex(src_index={}, tgt_index={}, m=0)
        i_src, i_tgt = bie_counts(*bie_reconstruct(src_seq, tgt_seq, empty))
        np.testing.assert_array_equal(i_src, np.zeros((4, 2)))
        np.testing.assert_array_equal(i_tgt, np.zeros((4, 2)))


def brute_force_counts(src_seq, tgt_seq, index):
    """Quadratic list-scan reference for the reconstruction + counting pipeline."""
    src_ids = [int(v) for v in src_seq.ids if v != PAD_ID]
    tgt_ids = [int(v) for v in tgt_seq.ids if v != PAD_ID]
    shared = set(src_ids) & set(tgt_ids)
    anchors = {src_seq.anchor, tgt_seq.anchor}

    def expanded_multiset(seq, opposite):
        out = []
        for v in seq.ids:
            v = int(v)
            if v == PAD_ID:
                continue
            if v in anchors or v in shared or opposite.get(v) is None:
                out.append(v)
            else:
                out.extend(int(x) for x in opposite[v].ids if x != PAD_ID)
        return out

    src_multi = expanded_multiset(src_seq, index.tgt_index)
    tgt_multi = expanded_multiset(tgt_seq, index.src_index)
    mutual = (src_ids.count(tgt_seq.anchor), tgt_ids.count(src_seq.anchor))

    def counts_for(seq, own_list, cross_list, own_is_src):
        rows = []
        for v in seq.ids:
            v = int(v)
            if v == PAD_ID:
                rows.append((0, 0))
            elif v in anchors:
                rows.append(mutual)
            else:
                own = own_list.count(v)
                cross = cross_list.count(v)
                rows.append((own, cross) if own_is_src else (cross, own))
        return np.array(rows)

    i_src = counts_for(src_seq, src_ids, tgt_multi, own_is_src=True)
    i_tgt = counts_for(tgt_seq, tgt_ids, src_multi, own_is_src=False)
    return i_src, i_tgt


class TestCountsOracle:
    def test_randomized_equivalence(self):
        rng = np.random.default_rng(42)
        for trial in range(500):
            n = int(rng.integers(1, 17))
            bipartite = trial % 2 == 0
            if bipartite:
                src_pool = np.arange(0, 8)
                tgt_pool = np.arange(8, 16)
            else:
                src_pool = tgt_pool = np.arange(0, 12)
            src_anchor = int(rng.choice(src_pool))
            tgt_anchor = int(rng.choice(tgt_pool))
            k1, k2 = int(rng.integers(0, n + 1)), int(rng.integers(0, n + 1))
            src_seq = make_seq(src_anchor, rng.choice(tgt_pool, size=k1).tolist(), n=n)
            tgt_seq = make_seq(tgt_anchor, rng.choice(src_pool, size=k2).tolist(), n=n)
            src_index, tgt_index = {}, {}
            for node in rng.choice(src_pool, size=3):
                depth = int(rng.integers(0, n + 1))
                src_index[int(node)] = make_seq(int(node), rng.choice(tgt_pool, size=depth).tolist(), n=n)
            for node in rng.choice(tgt_pool, size=3):
                depth = int(rng.integers(0, n + 1))
                tgt_index[int(node)] = make_seq(int(node), rng.choice(src_pool, size=depth).tolist(), n=n)
            index = BatchNeighborIndex(src_index, tgt_index, m=3)

            got = bie_counts(*bie_reconstruct(src_seq, tgt_seq, index))
            want = brute_force_counts(src_seq, tgt_seq, index)
            np.testing.assert_array_equal(got[0], want[0])
            np.testing.assert_array_equal(got[1], want[1])


class TestCountEmbedding:
    def test_zero_counts_zero_bias_zero_rows(self):
        counts = np.zeros((3, 2))
        out = bie_embed(counts, np.ones((2, 4)), np.zeros(4), np.ones((4, 5)), np.zeros(5))
        np.testing.assert_array_equal(out, np.zeros((3, 5)))

    def test_rectifier_passes_positive(self):
        counts = np.array([[1.0, 2.0]])
        w1 = np.eye(2)
        out = bie_embed(counts, w1, np.zeros(2), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out, counts)

    def test_matches_hand_composition(self):
        rng = np.random.default_rng(0)
        w1, b1 = rng.normal(size=(2, 3)), rng.normal(size=3)
        w2, b2 = rng.normal(size=(3, 4)), rng.normal(size=4)
        counts = np.array([[2.0, 2.0]])
        hidden = np.maximum(counts @ w1 + b1, 0.0)
        np.testing.assert_allclose(
            bie_embed(counts, w1, b1, w2, b2), hidden @ w2 + b2, atol=1e-15
        )


class TestSeasonTrend:
    def test_constant_signal(self):
        q = np.full((6, 1), 3.25)
        parts = ste_decompose(q, 3)
        np.testing.assert_array_equal(parts.trend, q)
        np.testing.assert_array_equal(parts.seasonal, np.zeros_like(q))

    def test_window_one_is_identity(self):
        q = np.random.default_rng(0).normal(size=(5, 2))
        parts = ste_decompose(q, 1)
        np.testing.assert_array_equal(parts.trend, q)
        np.testing.assert_array_equal(parts.seasonal, np.zeros_like(q))

    def test_hand_moving_average(self):
        q = np.array([[0.1], [0.2], [0.3], [0.4]])
        parts = ste_decompose(q, 3)
        np.testing.assert_allclose(
            parts.trend[:, 0], [0.4 / 3, 0.2, 0.3, 1.1 / 3], atol=1e-15
        )

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            ste_decompose(np.zeros((4, 1)), 2)

    def test_window_longer_than_sequence_rejected(self):
        with pytest.raises(ConfigError):
            ste_decompose(np.zeros((4, 1)), 5)

    def test_exact_reconstruction_randomized(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            window = int(rng.choice([w for w in range(1, n + 1, 2)]))
            q = rng.normal(size=(2, n, 3))
            parts = ste_decompose(q, window)
            # the seasonal part is bit-for-bit the residual of the input
            # minus the trend; the re-summed pair agrees to one rounding
            np.testing.assert_array_equal(parts.seasonal, q - parts.trend)
            np.testing.assert_allclose(parts.seasonal + parts.trend, q, rtol=0, atol=1e-15)
            assert np.all(np.isfinite(parts.trend))

    def test_signal_from_window(self):
        seq = make_seq(0, [3, 7, 7], n=4)
        sig = build_ste_signal(seq, num_nodes=10)
        np.testing.assert_allclose(sig[:, 0], [0.0, 0.3, 0.7, 0.7])

    def test_signal_all_pad(self):
        seq = make_seq(0, [], n=3)
        np.testing.assert_array_equal(build_ste_signal(seq, 10), np.zeros((3, 1)))

    def test_signal_range_endpoints(self):
        seq = make_seq(0, [0, 9], n=2)
        np.testing.assert_allclose(build_ste_signal(seq, 10)[:, 0], [0.0, 0.9])


class TestMteConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ConfigError):
            MteConfig(d_t=0)
        with pytest.raises(ConfigError):
            MteConfig(granularity="daily")
        with pytest.raises(ConfigError):
            MteConfig(r_segments=0)
        with pytest.raises(ConfigError):
            MteConfig(combine="mean")
        with pytest.raises(ConfigError):
            MteConfig(alpha=-1.0)

    def test_defaults_are_sqrt_dt(self):
        cfg = MteConfig(d_t=100)
        assert cfg.alpha == pytest.approx(10.0)
        assert cfg.beta == pytest.approx(10.0)

    def test_omega_first_is_one(self):
        cfg = MteConfig(d_t=7, alpha=5.0, beta=3.0)
        assert cfg.omega[0] == 1.0
        assert np.all(np.diff(cfg.omega) < 0)
