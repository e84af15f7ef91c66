"""End-to-end model: widths, gradients, determinism, capacity, checkpoints."""

import numpy as np
import pytest

from tidegraph.encoders import MteConfig
from tidegraph.errors import ConfigError
from tidegraph.harness import build_scoring_batch, gradcheck_fixture, sample_pair_windows
from tidegraph.model import (
    ModelConfig,
    ModelParameters,
    batch_loss,
    featurize_pairs,
    forward_batch,
    grad_check,
    link_head,
    load_checkpoint,
    loss_and_grads,
    node_state_prob,
    save_checkpoint,
)
from tidegraph.optim import AdamState, adam_step
from tidegraph.sampling import NegativeSampler, NegativeSamplingStrategy, NeighborSampler
from tidegraph.synth import generate_cycle_corpus


def small_cfg(**kw):
    defaults = dict(
        n_neighbors=4, hidden=8, layers=1, heads=2, dropout=0.0,
        d_b=3, d_s=2, d_tr=2, ste_window=3,
        mte=MteConfig(d_t=6, alpha=26.0, beta=10.0, granularity="weekly", r_segments=4),
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


def tiny_batch(cfg, corpus_seed=0, pairs=3):
    store, _ = generate_cycle_corpus(num_sources=5, num_targets=15, num_events=150, seed=corpus_seed, d_e=2)
    sampler = NeighborSampler(store)
    pos = [(int(store.src[i]), int(store.tgt[i]), float(store.timestamps[i]))
           for i in range(store.num_events - pairs, store.num_events)]
    neg, _ = NegativeSampler(store, NegativeSamplingStrategy("random", seed=1)).sample(pos)
    batch, labels = build_scoring_batch(sampler, store, cfg, pos, neg, np.random.default_rng(0))
    return store, batch, labels


class TestConfig:
    def test_token_width_sum_mode(self):
        cfg = small_cfg()
        assert cfg.token_width(0, 2) == 2 + 6 + 3 + 2 + 2

    def test_token_width_concat_mode(self):
        cfg = small_cfg(mte=MteConfig(d_t=6, alpha=26.0, beta=10.0, combine="concat"))
        assert cfg.token_width(0, 2) == 2 + 12 + 3 + 2 + 2

    def test_token_width_ablations(self):
        assert small_cfg(time_mode="none").token_width(0, 2) == 2 + 3 + 2 + 2
        assert small_cfg(use_bie=False).token_width(0, 2) == 2 + 6 + 2 + 2
        assert small_cfg(use_ste=False).token_width(0, 2) == 2 + 6 + 3
        assert small_cfg(layout="sl").token_width(0, 2) == 2 + 6
        assert small_cfg(layout="ml").token_width(0, 2) == 2 + 6

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            small_cfg(hidden=9, heads=2)
        with pytest.raises(ConfigError):
            small_cfg(dropout=1.0)
        with pytest.raises(ConfigError):
            small_cfg(layout="both")


class TestForward:
    def test_probabilities_in_range_all_layouts(self):
        for layout in ("il", "sl", "ml"):
            cfg = small_cfg(layout=layout)
            store, batch, labels = tiny_batch(cfg)
            params = ModelParameters(cfg, store.d_n, store.d_e, seed=0)
            probs, cache = forward_batch(params, cfg, batch)
            assert probs.shape == labels.shape
            assert np.all((probs > 0) & (probs < 1))
            assert np.all(np.isfinite(cache["final_tokens"]))

    def test_cold_start_windows_are_finite(self):
        # anchors with no history at all produce all-PAD windows
        cfg = small_cfg()
        store, _, _ = tiny_batch(cfg)
        sampler = NeighborSampler(store)
        pairs = [(0, 6, 0.5)]  # before any event
        seq_pairs, index = sample_pair_windows(sampler, pairs, cfg)
        assert seq_pairs[0][0].num_real == 0
        batch = featurize_pairs(seq_pairs, index, store, cfg)
        params = ModelParameters(cfg, store.d_n, store.d_e, seed=0)
        probs, _ = forward_batch(params, cfg, batch)
        assert np.all(np.isfinite(probs))

    def test_forward_is_deterministic(self):
        cfg = small_cfg()
        store, batch, labels = tiny_batch(cfg)
        params = ModelParameters(cfg, store.d_n, store.d_e, seed=3)
        a, _ = forward_batch(params, cfg, batch)
        b, _ = forward_batch(params, cfg, batch)
        np.testing.assert_array_equal(a, b)

    def test_dropout_träining_changes_output_eval_does_not(self):
        cfg = small_cfg(dropout=0.4)
        store, batch, labels = tiny_batch(cfg)
        params = ModelParameters(cfg, store.d_n, store.d_e, seed=3)
        t1, _ = forward_batch(params, cfg, batch, training=True, rng=np.random.default_rng(0))
        t2, _ = forward_batch(params, cfg, batch, training=True, rng=np.random.default_rng(1))
        assert not np.array_equal(t1, t2)
        e1, _ = forward_batch(params, cfg, batch)
        e2, _ = forward_batch(params, cfg, batch)
        np.testing.assert_array_equal(e1, e2)

    def test_heads_interface(self):
        cfg = small_cfg()
        store, batch, labels = tiny_batch(cfg)
        params = ModelParameters(cfg, store.d_n, store.d_e, seed=0)
        emb = np.random.default_rng(0).normal(size=(5, cfg.hidden))
        p_link = link_head(params, emb, emb)
        p_node = node_state_prob(params, emb)
        assert p_link.shape == (5,) and np.all((p_link > 0) & (p_link < 1))
        assert p_node.shape == (5,) and np.all((p_node > 0) & (p_node < 1))


class TestGradients:
    def test_gradcheck_small_models_all_layouts(self):
        for layout in ("il", "sl", "ml"):
            cfg = small_cfg(layout=layout)
            store, batch, labels = tiny_batch(cfg)
            params = ModelParameters(cfg, store.d_n, store.d_e, seed=1)
            err = grad_check(params, cfg, batch, labels, epsilon=1e-5,
                             num_checks=150, rng=np.random.default_rng(0))
            assert err < 1e-4, f"layout {layout}: {err}"

    def test_gradcheck_reference_dimensions(self):
        params, cfg, batch, labels = gradcheck_fixture()
        err = grad_check(params, cfg, batch, labels, epsilon=1e-5,
                         num_checks=250, rng=np.random.default_rng(0))
        assert err < 1e-4

    def test_gradcheck_concat_time_mode(self):
        cfg = small_cfg(mte=MteConfig(d_t=6, alpha=26.0, beta=10.0, combine="concat"))
        store, batch, labels = tiny_batch(cfg)
        params = ModelParameters(cfg, store.d_n, store.d_e, seed=1)
        err = grad_check(params, cfg, batch, labels, epsilon=1e-5,
                         num_checks=150, rng=np.random.default_rng(0))
        assert err < 1e-4

    def test_zero_epsilon_rejected(self):
        params, cfg, batch, labels = gradcheck_fixture()
        with pytest.raises(ValueError):
            grad_check(params, cfg, batch, labels, epsilon=0.0)

    def test_linear_only_path_is_exact(self):
        # loss is quadratic in the link head's second layer: finite
        # differences are exact there up to roundoff
        params, cfg, batch, labels = gradcheck_fixture()
        loss_and_grads(params, cfg, batch, labels)
        analytic = params.grads["link.b2"].copy()
        eps = 1e-6
        t = params.values["link.b2"]
        t[0] += eps
        up = batch_loss(params, cfg, batch, labels)
        t[0] -= 2 * eps
        down = batch_loss(params, cfg, batch, labels)
        t[0] += eps
        numeric = (up - down) / (2 * eps)
        assert abs(numeric - analytic[0]) < 1e-9


class TestTrainingDynamics:
    def test_single_batch_overfit(self):
        cfg = small_cfg(hidden=16, layers=2)
        store, batch, labels = tiny_batch(cfg, pairs=4)
        params = ModelParameters(cfg, store.d_n, store.d_e, seed=0)
        state = AdamState.for_params(params.values)
        losses = []
        for step in range(200):
            loss, _ = loss_and_grads(params, cfg, batch, labels)
            adam_step(params.values, params.grads, state, lr=3e-3)
            losses.append(loss)
            if loss < 0.05:
                break
        assert min(losses) < 0.05, f"final loss {losses[-1]}"
        tail = losses[3:]
        assert all(b <= a + 1e-9 for a, b in zip(tail, tail[1:])), "loss not monotone after step 3"

    def test_fixed_seed_replays_bitwise(self):
        cfg = small_cfg(dropout=0.2)
        store, batch, labels = tiny_batch(cfg)

        def run():
            params = ModelParameters(cfg, store.d_n, store.d_e, seed=5)
            state = AdamState.for_params(params.values)
            rng = np.random.default_rng(7)
            trajectory = []
            for _ in range(5):
                loss, _ = loss_and_grads(params, cfg, batch, labels, training=True, rng=rng)
                adam_step(params.values, params.grads, state, lr=1e-3)
                trajectory.append(loss)
            return trajectory

        assert run() == run()


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params, cfg, batch, labels = gradcheck_fixture()
        state = AdamState.for_params(params.values)
        loss_and_grads(params, cfg, batch, labels)
        adam_step(params.values, params.grads, state, lr=1e-3)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, params, state, config_hash="abc123", extra={"best_epoch": 7})
        loaded = load_checkpoint(path)
        assert loaded["meta"]["config_hash"] == "abc123"
        assert loaded["meta"]["best_epoch"] == 7
        assert loaded["adam"]["t"] == 1
        for k, v in params.values.items():
            np.testing.assert_array_equal(loaded["values"][k], v)
        for k, v in state.m.items():
            np.testing.assert_array_equal(loaded["adam"]["m"][k], v)
