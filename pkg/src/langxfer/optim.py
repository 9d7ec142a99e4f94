"""AdamW with decoupled weight decay, plus the warmup/cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import NumericsError, Parameters

MAX_WARMUP_STEPS = 3000
WARMUP_BYTES_PER_STEP = 2_000_000  # finetune warmup: one step per 2 MB of rung


@dataclass
class TrainConfig:
    phase: str  # pretrain | finetune | scratch-ladder
    peak_lr: float
    final_lr: float
    warmup_steps: int
    batch_sequences: int
    seq_len: int
    seed: int
    total_steps: int | None = None
    epochs: int | None = None
    eval_interval: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0

    def validate(self) -> None:
        errors = []
        if self.phase not in ("pretrain", "finetune", "scratch-ladder"):
            errors.append(f"unknown phase {self.phase!r}")
        if self.peak_lr <= 0 or self.final_lr < 0:
            errors.append("learning rates must be positive")
        if not (0 <= self.warmup_steps <= MAX_WARMUP_STEPS):
            errors.append(f"warmup_steps must lie in [0, {MAX_WARMUP_STEPS}]")
        if self.total_steps is None and self.epochs is None:
            errors.append("one of total_steps / epochs is required")
        if self.batch_sequences < 1 or self.seq_len < 2:
            errors.append("batch_sequences >= 1 and seq_len >= 2 required")
        if self.eval_interval < 1:
            errors.append("eval_interval must be >= 1")
        if errors:
            raise ValueError("invalid train config: " + "; ".join(errors))

    @property
    def uses_cosine(self) -> bool:
        return self.phase == "pretrain"

    def to_dict(self) -> dict:
        return asdict(self)


def pretrain_config(total_steps: int, batch_sequences: int, seq_len: int,
                    seed: int, **overrides) -> TrainConfig:
    """Pretraining preset: peak 2e-4 decayed to 2e-5 by cosine."""
    base = dict(phase="pretrain", peak_lr=2e-4, final_lr=2e-5, warmup_steps=0,
                total_steps=total_steps, batch_sequences=batch_sequences,
                seq_len=seq_len, seed=seed)
    base.update(overrides)
    cfg = TrainConfig(**base)
    cfg.validate()
    return cfg


def finetune_config(rung_bytes: int, largest_rung: bool, batch_sequences: int,
                    seq_len: int, seed: int, scratch: bool = False,
                    **overrides) -> TrainConfig:
    """Finetuning preset: constant 2e-5 for 10 epochs (3 on the largest
    rung), warmup growing with the rung size up to 3000 steps."""
    base = dict(phase="scratch-ladder" if scratch else "finetune",
                peak_lr=2e-5, final_lr=2e-5,
                warmup_steps=warmup_for_size(rung_bytes),
                epochs=3 if largest_rung else 10,
                batch_sequences=batch_sequences, seq_len=seq_len, seed=seed)
    base.update(overrides)
    cfg = TrainConfig(**base)
    cfg.validate()
    return cfg


def warmup_for_size(rung_bytes: int) -> int:
    """Warmup steps for a finetuning dataset size: 0 for small rungs,
    growing to the 3000-step cap (non-decreasing in the rung size)."""
    return min(MAX_WARMUP_STEPS, rung_bytes // WARMUP_BYTES_PER_STEP)


def lr_at(step: int, config: TrainConfig) -> float:
    """Learning rate at a step: linear warmup to peak, then either cosine
    decay to final_lr over the remaining steps (pretrain) or constant
    (finetune phases). Steps beyond the schedule clamp to the final value."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if config.warmup_steps > 0 and step < config.warmup_steps:
        return config.peak_lr * step / config.warmup_steps
    if not config.uses_cosine:
        return config.peak_lr
    total = config.total_steps
    if total is None:
        raise ValueError("cosine decay needs total_steps")
    span = max(1, total - config.warmup_steps)
    progress = min(1.0, max(0.0, (step - config.warmup_steps) / span))
    return config.final_lr + (config.peak_lr - config.final_lr) * 0.5 * (
        1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    step: int
    m: dict[str, np.ndarray] = field(repr=False)
    v: dict[str, np.ndarray] = field(repr=False)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def init(cls, params: Parameters, beta1=0.9, beta2=0.999, eps=1e-8,
             weight_decay=0.01) -> "OptimizerState":
        return cls(step=0,
                   m={k: np.zeros_like(v) for k, v in params.tensors.items()},
                   v={k: np.zeros_like(v) for k, v in params.tensors.items()},
                   beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)


def adamw_step(params: Parameters, grads: dict[str, np.ndarray],
               state: OptimizerState, lr: float) -> tuple[Parameters, OptimizerState]:
    """One bias-corrected Adam update with decoupled weight decay
    (lr * wd * theta). Parameters and state are updated in place and
    returned."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, theta in params.tensors.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update += state.weight_decay * theta
        theta -= lr * update
    return params, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``;
    returns the pre-clip norm."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(np.square(g, dtype=np.float64)))
    norm = math.sqrt(sq)
    if max_norm and norm > max_norm:
        scale = np.float32(max_norm / norm)
        for g in grads.values():
            g *= scale
    return norm
