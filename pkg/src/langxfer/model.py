"""Byte-vocabulary decoder-only transformer in plain NumPy.

The model operates directly on the 256 byte values (no special tokens).
Architecture: pre-norm residual blocks with RMS normalization, multi-head
causal attention with a T5-style bucketed relative-position bias shared
across layers, a gated-GELU MLP, and an output projection tied to the
input embedding matrix (one storage location).

Everything here is a pure function over immutable parameter snapshots;
gradients are hand-written reverse mode so that training and the
finite-difference checker in ``gradcheck`` stay fully independent of any
autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

RMS_EPS = 1e-6
# Additive mask value: large enough that exp(x - rowmax) underflows to
# exactly 0.0, which is what makes the causality invariant bitwise.
NEG_MASK = -1e30

# tanh-form GELU constants
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class NumericsError(RuntimeError):
    """Non-finite value encountered; message names the offending layer."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_head: int
    d_ff: int
    seq_len: int
    vocab_size: int = 256
    n_rel_buckets: int = 32
    rel_max_distance: int = 128

    def validate(self) -> None:
        """Check all invariants, reporting every violation at once."""
        errors = []
        if self.vocab_size != 256:
            errors.append(f"vocab_size must be 256 (byte vocabulary), got {self.vocab_size}")
        for name in ("d_model", "n_layers", "n_heads", "d_head", "d_ff", "seq_len",
                     "n_rel_buckets", "rel_max_distance"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                errors.append(f"{name} must be a positive integer, got {value!r}")
        if isinstance(self.seq_len, int) and self.seq_len < 2:
            errors.append(f"seq_len must be >= 2, got {self.seq_len}")
        if (isinstance(self.d_model, int) and isinstance(self.n_heads, int)
                and isinstance(self.d_head, int)
                and self.d_model != self.n_heads * self.d_head):
            errors.append(
                f"d_model ({self.d_model}) must equal n_heads*d_head "
                f"({self.n_heads}*{self.d_head}={self.n_heads * self.d_head})")
        if errors:
            raise ValueError("invalid model config: " + "; ".join(errors))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**{f.name: int(d[f.name]) for f in fields(cls) if f.name in d})
        cfg.validate()
        return cfg


# The 65M-parameter scale the training recipe was designed around, plus
# two sizes that actually run on a single desktop core.
PRESETS = {
    "ref65m": ModelConfig(d_model=640, n_layers=10, n_heads=10, d_head=64,
                         d_ff=2560, seq_len=1024),
    "desk": ModelConfig(d_model=64, n_layers=2, n_heads=4, d_head=16,
                        d_ff=128, seq_len=128),
    "tiny": ModelConfig(d_model=32, n_layers=1, n_heads=2, d_head=16,
                        d_ff=64, seq_len=64),
}


def layer_names(config: ModelConfig) -> list[str]:
    """Canonical tensor names, in checkpoint order."""
    names = ["embed"]
    for i in range(config.n_layers):
        names += [f"layers.{i}.{p}" for p in
                  ("attn_gain", "wq", "wk", "wv", "wo",
                   "mlp_gain", "w_gate", "w_up", "w_down")]
    names += ["final_gain", "rel_bias"]
    return names


@dataclass
class Parameters:
    """Named weight tensors. ``tensors['embed']`` doubles as the output
    projection; there is deliberately no separate output weight."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    @property
    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["embed"].dtype

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.config,
                          {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise NumericsError(f"non-finite parameter values in {name}")


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) truncated at +/- 2 std, by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(np.float32)


def init_params(config: ModelConfig, seed: int) -> Parameters:
    """Deterministic random initialization.

    Projections (including the shared embedding) are truncated normal with
    std 1/sqrt(d_model); normalization gains start at 1 and the relative
    bias table at 0.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(config.d_model)
    d, h, dh, f = config.d_model, config.n_heads, config.d_head, config.d_ff
    tensors: dict[str, np.ndarray] = {}
    tensors["embed"] = _trunc_normal(rng, (config.vocab_size, d), std)
    for i in range(config.n_layers):
        p = f"layers.{i}."
        tensors[p + "attn_gain"] = np.ones(d, dtype=np.float32)
        tensors[p + "wq"] = _trunc_normal(rng, (d, h * dh), std)
        tensors[p + "wk"] = _trunc_normal(rng, (d, h * dh), std)
        tensors[p + "wv"] = _trunc_normal(rng, (d, h * dh), std)
        tensors[p + "wo"] = _trunc_normal(rng, (h * dh, d), std)
        tensors[p + "mlp_gain"] = np.ones(d, dtype=np.float32)
        tensors[p + "w_gate"] = _trunc_normal(rng, (d, f), std)
        tensors[p + "w_up"] = _trunc_normal(rng, (d, f), std)
        tensors[p + "w_down"] = _trunc_normal(rng, (f, d), std)
    tensors["final_gain"] = np.ones(d, dtype=np.float32)
    tensors["rel_bias"] = np.zeros((config.n_rel_buckets, h), dtype=np.float32)
    return Parameters(config, tensors)


@dataclass
class TokenBatch:
    """Inputs/targets are (batch, seq_len) byte ids; targets are the inputs
    shifted left by one. The loss mask selects scored positions."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (self.inputs.shape == self.targets.shape == self.mask.shape):
            raise ValueError("inputs, targets and mask must share one shape")
        if self.inputs.ndim != 2:
            raise ValueError(f"batch must be 2-D (batch, seq_len), got {self.inputs.shape}")
        for name, arr in (("inputs", self.inputs), ("targets", self.targets)):
            if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
                raise ValueError(f"{name} contain ids outside [0, 255]")
        if not self.mask.any(axis=1).all():
            raise ValueError("every sequence needs at least one masked-in position")

    @property
    def n_sequences(self) -> int:
        return self.inputs.shape[0]


def relative_position_bucket(distance, n_buckets: int, max_distance: int):
    """Map causal attention distances (query_pos - key_pos >= 0) to bucket
    indices: small distances get their own bucket, larger ones share
    log-spaced buckets up to ``max_distance``, beyond which everything
    lands in the last bucket."""
    d = np.asarray(distance)
    if (d < 0).any():
        raise ValueError("relative distance must be >= 0 for causal attention")
    if n_buckets == 1:
        out = np.zeros_like(d)
        return out if out.shape else int(out)
    max_exact = n_buckets // 2
    ratio = np.log(np.maximum(d, 1) / max_exact) / math.log(max_distance / max_exact)
    large = max_exact + (ratio * (n_buckets - max_exact)).astype(np.int64)
    large = np.minimum(large, n_buckets - 1)
    out = np.where(d < max_exact, d, large)
    return out if out.shape else int(out)


@lru_cache(maxsize=16)
def _bucket_matrix(seq_len: int, n_buckets: int, max_distance: int) -> np.ndarray:
    """(T, T) bucket indices for distance i-j; future positions (j > i) are
    masked out of attention, so their entries are arbitrary (clipped to 0)."""
    pos = np.arange(seq_len)
    dist = np.maximum(pos[:, None] - pos[None, :], 0)
    out = relative_position_bucket(dist, n_buckets, max_distance)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def _bucket_onehot(seq_len: int, n_buckets: int, max_distance: int) -> np.ndarray:
    """(n_buckets, T*T) float32 indicator used to reduce per-position bias
    gradients into the shared bucket table with one matmul."""
    buckets = _bucket_matrix(seq_len, n_buckets, max_distance).reshape(-1)
    onehot = np.zeros((n_buckets, buckets.size), dtype=np.float32)
    onehot[buckets, np.arange(buckets.size)] = 1.0
    onehot.setflags(write=False)
    return onehot


@lru_cache(maxsize=16)
def _causal_additive(seq_len: int, dtype_name: str) -> np.ndarray:
    dtype = np.dtype(dtype_name)
    out = np.where(np.tril(np.ones((seq_len, seq_len), dtype=bool)),
                   dtype.type(0), dtype.type(NEG_MASK))
    out.setflags(write=False)
    return out


def _rmsnorm(x: np.ndarray, gain: np.ndarray):
    inv = 1.0 / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + RMS_EPS)
    return x * inv * gain, inv


def _rmsnorm_bwd(dy, x, gain, inv):
    d = x.shape[-1]
    dyg = dy * gain
    dot = np.sum(dyg * x, axis=-1, keepdims=True)
    dx = dyg * inv - x * (inv ** 3) * (dot / d)
    dgain = np.sum(dy * x * inv, axis=tuple(range(x.ndim - 1)))
    return dx, dgain


def _split_heads(x: np.ndarray, n_heads: int, d_head: int) -> np.ndarray:
    b, t, _ = x.shape
    return x.reshape(b, t, n_heads, d_head).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _mlp_forward(x, w_gate, w_up, w_down, activation="gelu"):
    """Gated MLP block: (act(x@w_gate) * (x@w_up)) @ w_down. Returns the
    output plus the cache needed by ``_mlp_backward``."""
    u_gate = x @ w_gate
    u_up = x @ w_up
    if activation == "gelu":
        # keep tanh around so backward does not have to recompute it
        t = np.tanh(_GELU_C * (u_gate + _GELU_A * u_gate * u_gate * u_gate))
        act_out = 0.5 * u_gate * (1.0 + t)
    elif activation == "identity":  # test hook: makes the block multilinear
        t = None
        act_out = u_gate
    else:
        raise ValueError(f"unknown activation {activation!r}")
    gated = act_out * u_up
    return gated @ w_down, (x, u_gate, u_up, act_out, gated, t)


def _mlp_backward(dy, cache, w_gate, w_up, w_down, activation="gelu"):
    x, u_gate, u_up, act_out, gated, t = cache
    x2 = x.reshape(-1, x.shape[-1])
    dgated = dy @ w_down.T
    dw_down = gated.reshape(-1, gated.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    du_up = dgated * act_out
    if activation == "gelu":
        # act_grad = 0.5*(1+t) + 0.5*u*(1-t^2)*c*(1+3a*u^2), built in place
        inner = u_gate * u_gate
        inner *= 3.0 * _GELU_A
        inner += 1.0
        inner *= 0.5 * _GELU_C
        inner *= u_gate
        tt = t * t
        np.subtract(1.0, tt, out=tt)
        inner *= tt
        inner += 0.5
        inner += 0.5 * t
        act_grad = inner
        act_grad *= u_up
        act_grad *= dgated
        du_gate = act_grad
    else:
        du_gate = dgated * u_up
    dw_up = x2.T @ du_up.reshape(-1, du_up.shape[-1])
    dw_gate = x2.T @ du_gate.reshape(-1, du_gate.shape[-1])
    dx = du_up @ w_up.T + du_gate @ w_gate.T
    return dx, dw_gate, dw_up, dw_down


def _check_inputs(config: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be (batch, seq_len), got shape {tokens.shape}")
    if tokens.shape[1] > config.seq_len:
        raise ValueError(
            f"sequence length {tokens.shape[1]} exceeds config.seq_len {config.seq_len}")
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= config.vocab_size:
        raise ValueError("token ids must lie in [0, 256)")
    return tokens.astype(np.int64)


def _forward_cached(params: Parameters, tokens: np.ndarray, activation: str,
                    check_finite: bool = False):
    """Forward pass keeping the per-layer intermediates for backward."""
    cfg = params.config
    tokens = _check_inputs(cfg, tokens)
    tensors = params.tensors
    dtype = params.dtype
    b, t = tokens.shape
    h, dh = cfg.n_heads, cfg.d_head
    scale = dtype.type(1.0 / math.sqrt(dh))

    buckets = _bucket_matrix(t, cfg.n_rel_buckets, cfg.rel_max_distance)
    causal_add = _causal_additive(t, dtype.name)

    # the bias table is shared by all layers, so build the additive
    # (heads, T, T) matrix (bias + causal mask) once per call
    bias_causal = tensors["rel_bias"][buckets].transpose(2, 0, 1) + causal_add

    x = tensors["embed"][tokens]
    caches = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        a_in, inv1 = _rmsnorm(x, tensors[p + "attn_gain"])
        q = _split_heads(a_in @ tensors[p + "wq"], h, dh)
        k = _split_heads(a_in @ tensors[p + "wk"], h, dh)
        v = _split_heads(a_in @ tensors[p + "wv"], h, dh)
        q *= scale  # fold 1/sqrt(d_head) into q
        scores = q @ k.transpose(0, 1, 3, 2)
        scores += bias_causal
        scores -= scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores, out=scores)
        probs /= probs.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(probs @ v)
        attn_out = ctx @ tensors[p + "wo"]
        x_mid = x + attn_out
        m_in, inv2 = _rmsnorm(x_mid, tensors[p + "mlp_gain"])
        mlp_out, mlp_cache = _mlp_forward(m_in, tensors[p + "w_gate"],
                                          tensors[p + "w_up"],
                                          tensors[p + "w_down"], activation)
        x_next = x_mid + mlp_out
        if check_finite and not np.isfinite(x_next).all():
            raise NumericsError(f"non-finite activations after layers.{i}")
        caches.append(dict(x=x, inv1=inv1, a_in=a_in, q=q, k=k, v=v,
                           probs=probs, ctx=ctx, x_mid=x_mid, inv2=inv2,
                           m_in=m_in, mlp=mlp_cache))
        x = x_next

    f_in, inv_f = _rmsnorm(x, tensors["final_gain"])
    logits = f_in @ tensors["embed"].T
    if check_finite and not np.isfinite(logits).all():
        raise NumericsError("non-finite logits at output projection")
    final = dict(x=x, inv_f=inv_f, f_in=f_in, buckets=buckets, scale=scale)
    return logits, caches, final


def forward(params: Parameters, batch, activation: str = "gelu",
            return_probs: bool = False):
    """Causal logits (batch, seq_len, 256). Position t sees tokens <= t only.

    ``batch`` may be a TokenBatch or a raw (batch, seq_len) id array.
    ``return_probs`` additionally returns each layer's attention
    distributions and the output softmax (verification hook).
    """
    tokens = batch.inputs if isinstance(batch, TokenBatch) else batch
    logits, caches, _ = _forward_cached(params, tokens, activation)
    if not return_probs:
        return logits
    m = logits.max(axis=-1, keepdims=True)
    out = np.exp(logits - m)
    out /= out.sum(axis=-1, keepdims=True)
    return logits, [c["probs"] for c in caches], out


def loss_and_perplexity(logits: np.ndarray, targets: np.ndarray,
                        mask: np.ndarray) -> tuple[float, float]:
    """Masked token-mean cross entropy in nats and its exponential."""
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ValueError("logits/targets/mask shapes are inconsistent")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("loss mask selects no positions")
    m = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(logits - m), axis=-1)) + m[..., 0]
    logp = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0] - lse
    loss = float(-(logp * mask).sum(dtype=np.float64) / n_masked)
    return loss, math.exp(loss)


def loss_and_grads(params: Parameters, batch: TokenBatch,
                   activation: str = "gelu", check_finite: bool = True):
    """Mean masked loss, perplexity and exact reverse-mode gradients.

    The tied embedding gradient accumulates both its output-projection and
    input-lookup contributions.
    """
    cfg = params.config
    tensors = params.tensors
    logits, caches, final = _forward_cached(params, batch.inputs, activation,
                                            check_finite=check_finite)
    mask = batch.mask
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("loss mask selects no positions")

    m = logits.max(axis=-1, keepdims=True)
    probs = np.exp(logits - m)
    z = probs.sum(axis=-1, keepdims=True)
    probs /= z
    lse = np.log(z[..., 0]) + m[..., 0]
    logp = np.take_along_axis(logits, batch.targets[..., None], axis=-1)[..., 0] - lse
    loss = float(-(logp * mask).sum(dtype=np.float64) / n_masked)

    dtype = params.dtype
    dlogits = probs
    rows, cols = np.indices(batch.targets.shape, sparse=True)
    dlogits[rows, cols, batch.targets] -= 1.0
    dlogits *= (mask / n_masked).astype(dtype)[..., None]

    grads = {k: np.zeros_like(v) for k, v in tensors.items()}
    b, t, v_sz = dlogits.shape
    d2 = dlogits.reshape(-1, v_sz)
    f2 = final["f_in"].reshape(-1, cfg.d_model)
    grads["embed"] += d2.T @ f2
    df_in = dlogits @ tensors["embed"]
    dx, dg = _rmsnorm_bwd(df_in, final["x"], tensors["final_gain"], final["inv_f"])
    grads["final_gain"] += dg

    scale = final["scale"]
    h, dh = cfg.n_heads, cfg.d_head
    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        c = caches[i]
        dmlp_in, dwg, dwu, dwd = _mlp_backward(dx, c["mlp"], tensors[p + "w_gate"],
                                               tensors[p + "w_up"],
                                               tensors[p + "w_down"], activation)
        grads[p + "w_gate"] += dwg
        grads[p + "w_up"] += dwu
        grads[p + "w_down"] += dwd
        dx_mid, dg2 = _rmsnorm_bwd(dmlp_in, c["x_mid"], tensors[p + "mlp_gain"], c["inv2"])
        grads[p + "mlp_gain"] += dg2
        dx_mid += dx  # residual branch

        dctx = dx_mid @ tensors[p + "wo"].T
        grads[p + "wo"] += c["ctx"].reshape(-1, h * dh).T @ dx_mid.reshape(-1, cfg.d_model)
        dctx = _split_heads(dctx, h, dh)
        probs_l = c["probs"]
        dprobs = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = probs_l.transpose(0, 1, 3, 2) @ dctx
        dprobs *= probs_l
        dscores = dprobs
        dscores -= probs_l * dprobs.sum(axis=-1, keepdims=True)
        if check_finite and not np.isfinite(dscores).all():
            raise NumericsError(f"non-finite attention gradient in layers.{i}")
        onehot = _bucket_onehot(t, cfg.n_rel_buckets, cfg.rel_max_distance).astype(dtype, copy=False)
        grads["rel_bias"] += onehot @ dscores.sum(axis=0).transpose(1, 2, 0).reshape(-1, h)
        # cached q is pre-scaled, so dk needs no extra factor while the
        # gradient of the raw q projection does
        dq = dscores @ c["k"]
        dq *= scale
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"]
        a2 = c["a_in"].reshape(-1, cfg.d_model)
        dq2 = _merge_heads(dq).reshape(-1, h * dh)
        dk2 = _merge_heads(dk).reshape(-1, h * dh)
        dv2 = _merge_heads(dv).reshape(-1, h * dh)
        grads[p + "wq"] += a2.T @ dq2
        grads[p + "wk"] += a2.T @ dk2
        grads[p + "wv"] += a2.T @ dv2
        da_in = (dq2 @ tensors[p + "wq"].T + dk2 @ tensors[p + "wk"].T
                 + dv2 @ tensors[p + "wv"].T).reshape(b, t, cfg.d_model)
        dx_new, dg1 = _rmsnorm_bwd(da_in, c["x"], tensors[p + "attn_gain"], c["inv1"])
        grads[p + "attn_gain"] += dg1
        dx = dx_mid + dx_new

    np.add.at(grads["embed"], batch.inputs.reshape(-1), dx.reshape(-1, cfg.d_model))
    if check_finite:
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient in {name}")
    return loss, math.exp(loss), grads


def backward(params: Parameters, batch: TokenBatch,
             activation: str = "gelu") -> dict[str, np.ndarray]:
    """Gradients of the mean masked loss w.r.t. every parameter tensor."""
    return loss_and_grads(params, batch, activation)[2]


def batch_loss(params: Parameters, batch: TokenBatch,
               activation: str = "gelu") -> float:
    logits = forward(params, batch, activation)
    return loss_and_perplexity(logits, batch.targets, batch.mask)[0]
