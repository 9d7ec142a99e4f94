import math

import numpy as np
import pytest

from langxfer.model import ModelConfig, Parameters, init_params
from langxfer.optim import (OptimizerState, TrainConfig, adamw_step,
                            clip_global_norm, finetune_config, lr_at,
                            pretrain_config, warmup_for_size)

CFG = ModelConfig(d_model=32, n_layers=1, n_heads=2, d_head=16, d_ff=48, seq_len=32)


def scalar_params(value: float) -> Parameters:
    return Parameters(CFG, {"w": np.array([value], dtype=np.float64)})


class TestSchedule:
    def test_pretrain_preset_rates(self):
        cfg = pretrain_config(total_steps=1000, batch_sequences=4, seq_len=32, seed=0)
        assert cfg.peak_lr == 2e-4 and cfg.final_lr == 2e-5

    def test_final_step_reaches_final_lr(self):
        cfg = pretrain_config(total_steps=1000, batch_sequences=4, seq_len=32, seed=0)
        assert lr_at(1000, cfg) == pytest.approx(2e-5)
        assert lr_at(5000, cfg) == pytest.approx(2e-5)  # clamps past the end

    def test_no_warmup_starts_at_peak(self):
        cfg = pretrain_config(total_steps=100, batch_sequences=4, seq_len=32, seed=0)
        assert lr_at(0, cfg) == pytest.approx(2e-4)

    def test_halfway_cosine_value(self):
        cfg = pretrain_config(total_steps=1000, batch_sequences=4, seq_len=32, seed=0)
        expected = 2e-5 + (2e-4 - 2e-5) * 0.5 * (1 + math.cos(math.pi * 0.5))
        assert lr_at(500, cfg) == pytest.approx(expected)
        assert expected == pytest.approx(1.1e-4)

    def test_warmup_is_linear_and_continuous(self):
        cfg = pretrain_config(total_steps=1000, batch_sequences=4, seq_len=32,
                              seed=0, warmup_steps=100)
        assert lr_at(0, cfg) == 0.0
        assert lr_at(50, cfg) == pytest.approx(1e-4)
        assert lr_at(100, cfg) == pytest.approx(2e-4)  # both sides meet at peak

    def test_monotone_nonincreasing_after_warmup(self):
        cfg = pretrain_config(total_steps=500, batch_sequences=4, seq_len=32,
                              seed=0, warmup_steps=50)
        rates = [lr_at(s, cfg) for s in range(50, 520)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_constant_phase(self):
        cfg = finetune_config(rung_bytes=1000, largest_rung=False,
                              batch_sequences=4, seq_len=32, seed=0)
        assert cfg.peak_lr == 2e-5 and cfg.epochs == 10
        assert lr_at(0, cfg) == 2e-5
        assert lr_at(10_000, cfg) == 2e-5

    def test_largest_rung_epochs(self):
        cfg = finetune_config(rung_bytes=1000, largest_rung=True,
                              batch_sequences=4, seq_len=32, seed=0)
        assert cfg.epochs == 3

    def test_negative_step_rejected(self):
        cfg = pretrain_config(total_steps=10, batch_sequences=4, seq_len=32, seed=0)
        with pytest.raises(ValueError):
            lr_at(-1, cfg)

    def test_warmup_rule_by_size(self):
        assert warmup_for_size(60_000) == 0
        assert warmup_for_size(2_000_000) == 1
        assert warmup_for_size(6_000_000_000) == 3000
        sizes = [10 ** k for k in range(3, 11)]
        warmups = [warmup_for_size(s) for s in sizes]
        assert warmups == sorted(warmups)

    def test_validation_collects_errors(self):
        cfg = TrainConfig(phase="nope", peak_lr=-1, final_lr=1e-5, warmup_steps=9999,
                          batch_sequences=0, seq_len=1, seed=0)
        with pytest.raises(ValueError) as err:
            cfg.validate()
        msg = str(err.value)
        assert "phase" in msg and "warmup" in msg and "batch_sequences" in msg


class TestAdamW:
    def test_zero_grads_no_decay_leaves_params(self):
        params = scalar_params(1.5)
        state = OptimizerState.init(params, weight_decay=0.0)
        adamw_step(params, {"w": np.zeros(1)}, state, lr=0.1)
        assert params.tensors["w"][0] == 1.5
        assert state.step == 1

    def test_first_step_equals_lr(self):
        # theta=0, g=1, b1=.9, b2=.999, eps=0, wd=0 -> update is exactly lr
        params = scalar_params(0.0)
        state = OptimizerState.init(params, eps=0.0, weight_decay=0.0)
        adamw_step(params, {"w": np.ones(1)}, state, lr=0.01)
        assert params.tensors["w"][0] == pytest.approx(-0.01, rel=1e-12)

    def test_decoupled_decay(self):
        params = scalar_params(1.0)
        state = OptimizerState.init(params, weight_decay=0.1)
        adamw_step(params, {"w": np.zeros(1)}, state, lr=0.01)
        assert params.tensors["w"][0] == pytest.approx(0.999, rel=1e-12)

    def test_lr_zero_touches_only_state(self):
        params = init_params(CFG, seed=0)
        before = {k: v.copy() for k, v in params.tensors.items()}
        state = OptimizerState.init(params, weight_decay=0.0)
        grads = {k: np.ones_like(v) for k, v in params.tensors.items()}
        adamw_step(params, grads, state, lr=0.0)
        assert state.step == 1
        assert any(state.m[k].any() for k in state.m)
        for k in before:
            assert np.array_equal(params.tensors[k], before[k])

    def test_accumulators_start_at_zero(self):
        params = init_params(CFG, seed=1)
        state = OptimizerState.init(params)
        assert state.step == 0
        assert all(not state.m[k].any() for k in state.m)
        assert all(not state.v[k].any() for k in state.v)

    def test_nonfinite_gradient_names_layer(self):
        params = init_params(CFG, seed=2)
        grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        grads["layers.0.wq"][0, 0] = np.nan
        state = OptimizerState.init(params)
        with pytest.raises(RuntimeError, match="layers.0.wq"):
            adamw_step(params, grads, state, lr=1e-3)


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_global_norm(grads, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    assert grads["a"][0] == pytest.approx(0.6)
    assert grads["b"][0] == pytest.approx(0.8)
    grads2 = {"a": np.array([0.3])}
    clip_global_norm(grads2, max_norm=1.0)
    assert grads2["a"][0] == pytest.approx(0.3)  # under the cap: untouched
