import numpy as np
import pytest

from langxfer.model import (PRESETS, ModelConfig, TokenBatch, forward,
                            init_params, loss_and_perplexity,
                            relative_position_bucket)

TINY = ModelConfig(d_model=64, n_layers=2, n_heads=4, d_head=16, d_ff=128, seq_len=64)


def rand_batch(rng, b, t):
    toks = rng.integers(0, 256, size=(b, t))
    return TokenBatch(toks, np.roll(toks, -1, axis=1), np.ones((b, t), dtype=bool))


class TestModelConfig:
    def test_presets_valid(self):
        for cfg in PRESETS.values():
            cfg.validate()

    def test_ref65m_preset_dimensions(self):
        cfg = PRESETS["ref65m"]
        assert (cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_head, cfg.d_ff,
                cfg.seq_len) == (640, 10, 10, 64, 2560, 1024)

    def test_invalid_fields_reported_individually(self):
        bad = ModelConfig(d_model=65, n_layers=0, n_heads=4, d_head=16,
                          d_ff=128, seq_len=1, vocab_size=300)
        with pytest.raises(ValueError) as err:
            bad.validate()
        msg = str(err.value)
        assert "vocab_size" in msg
        assert "n_layers" in msg
        assert "seq_len" in msg
        assert "d_model" in msg  # mismatch with heads

    def test_roundtrip_dict(self):
        assert ModelConfig.from_dict(TINY.to_dict()) == TINY


class TestInitParams:
    def test_deterministic(self):
        a = init_params(TINY, seed=7)
        b = init_params(TINY, seed=7)
        for k in a.tensors:
            assert np.array_equal(a.tensors[k], b.tensors[k])

    def test_seed_changes_weights(self):
        a = init_params(TINY, seed=7)
        b = init_params(TINY, seed=8)
        assert not np.array_equal(a.tensors["embed"], b.tensors["embed"])

    def test_ref65m_param_count(self):
        params = init_params(PRESETS["ref65m"], seed=0)
        assert abs(params.count - 65_000_000) / 65_000_000 < 0.05

    def test_embedding_shape(self):
        cfg = ModelConfig(d_model=64, n_layers=1, n_heads=4, d_head=16,
                          d_ff=128, seq_len=32)
        params = init_params(cfg, seed=1)
        assert params.tensors["embed"].shape == (256, 64)

    def test_gains_one_bias_zero(self):
        params = init_params(TINY, seed=3)
        assert (params.tensors["layers.0.attn_gain"] == 1).all()
        assert (params.tensors["rel_bias"] == 0).all()

    def test_truncated_two_sigma(self):
        params = init_params(TINY, seed=5)
        std = 1 / np.sqrt(TINY.d_model)
        assert np.abs(params.tensors["layers.0.wq"]).max() <= 2 * std + 1e-7


class TestForward:
    def test_output_shape(self):
        params = init_params(TINY, seed=0)
        rng = np.random.default_rng(0)
        logits = forward(params, rand_batch(rng, 2, 16))
        assert logits.shape == (2, 16, 256)
        assert np.isfinite(logits).all()

    def test_zero_embedding_uniform_logits(self):
        params = init_params(TINY, seed=1)
        params.tensors["embed"][:] = 0.0
        rng = np.random.default_rng(1)
        logits = forward(params, rand_batch(rng, 2, 16))
        assert np.abs(logits - logits[..., :1]).max() < 1e-6

    def test_causal_mask_bitwise(self):
        params = init_params(TINY, seed=2)
        rng = np.random.default_rng(2)
        toks = rng.integers(0, 256, size=(1, 16))
        base = forward(params, toks)
        perturbed = toks.copy()
        perturbed[0, 9] = (perturbed[0, 9] + 13) % 256
        other = forward(params, perturbed)
        assert np.array_equal(base[:, :9], other[:, :9])
        assert not np.array_equal(base[:, 9:], other[:, 9:])

    def test_causality_over_positions(self):
        params = init_params(TINY, seed=3)
        rng = np.random.default_rng(3)
        toks = rng.integers(0, 256, size=(1, 12))
        base = forward(params, toks)
        for t in range(1, 12):
            mod = toks.copy()
            mod[0, t:] = rng.integers(0, 256, size=12 - t)
            assert np.array_equal(forward(params, mod)[:, :t], base[:, :t])

    def test_attention_and_output_rows_normalized(self):
        params = init_params(TINY, seed=4)
        rng = np.random.default_rng(4)
        _, attn_probs, out_probs = forward(params, rand_batch(rng, 2, 16),
                                           return_probs=True)
        for probs in attn_probs:
            assert np.abs(probs.sum(axis=-1) - 1).max() < 1e-6
        assert np.abs(out_probs.sum(axis=-1) - 1).max() < 1e-6

    def test_rejects_bad_ids(self):
        params = init_params(TINY, seed=5)
        with pytest.raises(ValueError, match=r"\[0, 256\)"):
            forward(params, np.full((1, 8), 300))

    def test_rejects_overlength(self):
        params = init_params(TINY, seed=5)
        with pytest.raises(ValueError, match="exceeds"):
            forward(params, np.zeros((1, TINY.seq_len + 1), dtype=int))

    def test_tied_embedding_single_storage(self):
        params = init_params(TINY, seed=6)
        rng = np.random.default_rng(6)
        batch = rand_batch(rng, 1, 8)
        before = forward(params, batch)
        params.tensors["embed"][42] += 0.5  # mutating the one matrix moves logits[...,42]
        after = forward(params, batch)
        assert not np.array_equal(before[..., 42], after[..., 42])
        assert "output" not in params.tensors  # no separate projection exists


class TestLossAndPerplexity:
    def test_uniform_logits(self):
        logits = np.zeros((1, 4, 256))
        targets = np.array([[1, 2, 3, 4]])
        mask = np.ones((1, 4), dtype=bool)
        loss, ppl = loss_and_perplexity(logits, targets, mask)
        assert loss == pytest.approx(np.log(256), abs=1e-9)
        assert ppl == pytest.approx(256.0, abs=1e-4)

    def test_confident_model_approaches_one(self):
        targets = np.array([[7, 9]])
        logits = np.zeros((1, 2, 256))
        logits[0, 0, 7] = 30.0
        logits[0, 1, 9] = 30.0
        _, ppl = loss_and_perplexity(logits, targets, np.ones((1, 2), dtype=bool))
        assert ppl <= 1.001

    def test_hand_computed_two_token_case(self):
        # softmax target probabilities 0.5 and 0.25 against 255 unit logits
        targets = np.array([[0, 0]])
        logits = np.zeros((1, 2, 256))
        logits[0, 0, 0] = np.log(255.0)        # p = 255/(255+255) = 1/2
        logits[0, 1, 0] = np.log(255.0 / 3.0)  # p = (255/3)/(255/3+255) = 1/4
        loss, ppl = loss_and_perplexity(logits, targets, np.ones((1, 2), dtype=bool))
        assert loss == pytest.approx((np.log(2) + np.log(4)) / 2, abs=1e-6)
        assert ppl == pytest.approx(2.8284, abs=1e-4)

    def test_all_false_mask_rejected(self):
        with pytest.raises(ValueError, match="mask"):
            loss_and_perplexity(np.zeros((1, 2, 256)), np.zeros((1, 2), dtype=int),
                                np.zeros((1, 2), dtype=bool))

    def test_mask_restricts_scoring(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((1, 6, 256))
        targets = rng.integers(0, 256, size=(1, 6))
        mask = np.array([[True, True, True, False, False, False]])
        full, _ = loss_and_perplexity(logits[:, :3], targets[:, :3],
                                      np.ones((1, 3), dtype=bool))
        masked, _ = loss_and_perplexity(logits, targets, mask)
        assert masked == pytest.approx(full, rel=1e-12)


class TestRelativePositionBucket:
    def test_zero_distance(self):
        assert relative_position_bucket(0, 32, 128) == 0

    def test_exact_region(self):
        assert relative_position_bucket(5, 32, 128) == 5

    def test_clamp_region(self):
        assert relative_position_bucket(500, 32, 128) == 31
        assert relative_position_bucket(128, 32, 128) == 31

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            relative_position_bucket(-1, 32, 128)

    def test_monotone_and_surjective(self):
        d = np.arange(0, 129)
        buckets = relative_position_bucket(d, 32, 128)
        assert (np.diff(buckets) >= 0).all()
        assert set(buckets.tolist()) == set(range(32))

    @pytest.mark.parametrize("n_buckets,max_distance", [(8, 32), (16, 64), (32, 128)])
    def test_properties_across_shapes(self, n_buckets, max_distance):
        d = np.arange(0, max_distance + 10)
        buckets = relative_position_bucket(d, n_buckets, max_distance)
        assert (np.diff(buckets) >= 0).all()
        assert buckets.max() == n_buckets - 1
        assert set(buckets[:max_distance + 1].tolist()) == set(range(n_buckets))
        half = n_buckets // 2
        assert (buckets[:half] == d[:half]).all()
