"""Causal-LM training harness: pretraining, finetune ladders, evaluation.

One orchestrator loop owns each run; batches arrive in a seed-determined
order, dev perplexity is checked periodically, and the best-dev snapshot
is what gets serialized and scored on the test set (reloaded from disk,
so the reported number always reflects the stored checkpoint).
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus, pack, split_budget
from .model import (ModelConfig, Parameters, TokenBatch, forward, init_params,
                    loss_and_grads, loss_and_perplexity)
from .optim import (OptimizerState, TrainConfig, adamw_step, clip_global_norm,
                    lr_at, warmup_for_size)
from .transfer import SCRATCH_TAG, PerplexityCurve

DEV_FRACTION = 0.01
DEFAULT_EVAL_BYTES = 65_536

# rng stream salts so every consumer of the run seed is independent
_SALT_BATCH_ORDER = 0xBA7C
_SALT_DEV_SPLIT = 0xDE5
_SALT_TEST_SPLIT = 0xE7A1
_SALT_RUNG_SAMPLE = 0x5A5A


@dataclass
class RunRecord:
    run_id: str
    source: str
    target: str
    rung_bytes: int | None
    seed: int
    config: dict
    dev_history: list[tuple[int, float]] = field(default_factory=list)
    best_step: int | None = None
    best_dev_perplexity: float | None = None
    checkpoint_path: str | None = None
    test_perplexity: float | None = None
    final_loss: float | None = None
    n_train_sequences: int = 0

    def to_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.__dict__, indent=2, default=str) + "\n")
        tmp.replace(path)


def evaluate(params: Parameters, eval_batches: list[TokenBatch]) -> float:
    """Perplexity over all evaluation tokens: exp of the masked mean loss,
    aggregated in float64 across batches."""
    if not eval_batches:
        raise ValueError("evaluation set is empty")
    total_nats = 0.0
    total_tokens = 0
    for batch in eval_batches:
        logits = forward(params, batch)
        loss, _ = loss_and_perplexity(logits, batch.targets, batch.mask)
        n = int(batch.mask.sum())
        total_nats += loss * n
        total_tokens += n
    return float(np.exp(total_nats / total_tokens))


def make_batches(inputs: np.ndarray, targets: np.ndarray,
                 batch_sequences: int) -> list[TokenBatch]:
    """Fixed-order batches covering every sequence (last batch may be short)."""
    batches = []
    for start in range(0, len(inputs), batch_sequences):
        sl = slice(start, start + batch_sequences)
        batches.append(TokenBatch(inputs[sl], targets[sl],
                                  np.ones_like(inputs[sl], dtype=bool)))
    return batches


def corpus_eval_batches(corpus: Corpus, seq_len: int,
                        batch_sequences: int) -> list[TokenBatch]:
    inputs, targets = pack(corpus, seq_len)
    if len(inputs) == 0:
        raise ValueError(f"corpus {corpus.language!r} too small to pack even one sequence")
    return make_batches(inputs, targets, batch_sequences)


def _dev_split(inputs, targets, seed_seq: list[int]):
    n = len(inputs)
    rng = np.random.default_rng(seed_seq)
    order = rng.permutation(n)
    n_dev = max(1, int(round(DEV_FRACTION * n)))
    if n_dev >= n:
        raise ValueError("corpus too small to hold out a dev set")
    dev_idx, train_idx = order[:n_dev], np.sort(order[n_dev:])
    return (inputs[train_idx], targets[train_idx],
            inputs[dev_idx], targets[dev_idx])


def train_loop(params: Parameters, inputs: np.ndarray, targets: np.ndarray,
               config: TrainConfig, dev_batches: list[TokenBatch],
               record: RunRecord, curve_rows: list | None = None) -> Parameters:
    """Run the optimization; returns the best-dev parameter snapshot and
    fills the record's history in place."""
    config.validate()
    n = len(inputs)
    if n < config.batch_sequences:
        raise ValueError(
            f"corpus too small: {n} packed sequences < batch of {config.batch_sequences}")
    batches_per_epoch = n // config.batch_sequences
    total_steps = (config.total_steps if config.total_steps is not None
                   else config.epochs * batches_per_epoch)
    if total_steps < 1:
        raise ValueError("schedule resolves to zero steps")

    state = OptimizerState.init(params, config.beta1, config.beta2,
                                config.eps, config.weight_decay)
    rng = np.random.default_rng([config.seed, _SALT_BATCH_ORDER])
    mask = np.ones((config.batch_sequences, inputs.shape[1]), dtype=bool)
    order = rng.permutation(n)
    cursor = 0
    best_params = None
    record.n_train_sequences = n

    for step in range(total_steps):
        if cursor + config.batch_sequences > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + config.batch_sequences]
        cursor += config.batch_sequences
        batch = TokenBatch(inputs[idx], targets[idx], mask)
        loss, _, grads = loss_and_grads(params, batch)
        clip_global_norm(grads, config.grad_clip)
        adamw_step(params, grads, state, lr_at(step, config))
        record.final_loss = loss

        dev_ppl = None
        if (step + 1) % config.eval_interval == 0 or step == total_steps - 1:
            dev_ppl = evaluate(params, dev_batches)
            record.dev_history.append((step + 1, dev_ppl))
            if record.best_dev_perplexity is None or dev_ppl < record.best_dev_perplexity:
                record.best_dev_perplexity = dev_ppl
                record.best_step = step + 1
                best_params = params.copy()
        if curve_rows is not None:
            curve_rows.append((step + 1, loss, dev_ppl))
    return best_params if best_params is not None else params.copy()


def pretrain(model_config: ModelConfig, train_config: TrainConfig,
             corpus: Corpus, out_dir, run_id: str = "pretrain") -> RunRecord:
    """Pretrain from random init on a source corpus; emits the loss curve
    CSV and the best-dev checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not corpus.documents:
        raise ValueError("pretraining corpus is empty")
    if corpus.total_bytes < train_config.batch_sequences * train_config.seq_len:
        raise ValueError(
            f"pretraining corpus of {corpus.total_bytes} bytes is smaller than "
            f"one batch ({train_config.batch_sequences}x{train_config.seq_len})")
    inputs, targets = pack(corpus, train_config.seq_len)
    tr_in, tr_tg, dev_in, dev_tg = _dev_split(
        inputs, targets, [train_config.seed, _SALT_DEV_SPLIT])
    dev_batches = make_batches(dev_in, dev_tg, train_config.batch_sequences)

    params = init_params(model_config, train_config.seed)
    record = RunRecord(run_id=run_id, source=corpus.language, target=corpus.language,
                       rung_bytes=None, seed=train_config.seed,
                       config=train_config.to_dict())
    curve_rows: list = []
    best = train_loop(params, tr_in, tr_tg, train_config, dev_batches, record, curve_rows)

    ckpt = out_dir / "checkpoint.bin"
    save_checkpoint(best, ckpt)
    record.checkpoint_path = str(ckpt)
    _write_loss_curve(out_dir / "loss_curve.csv", curve_rows)
    record.to_json(out_dir / "record.json")
    return record


def _write_loss_curve(path, rows) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        fh.write("step,loss,dev_ppl\n")
        for step, loss, dev in rows:
            fh.write(f"{step},{loss!r},{'' if dev is None else repr(dev)}\n")
    tmp.replace(path)


def finetune(init, ladder: list[int], corpus: Corpus, train_config: TrainConfig,
             out_dir=None, model_config: ModelConfig | None = None,
             eval_bytes: int = DEFAULT_EVAL_BYTES,
             test_corpus: Corpus | None = None,
             source_tag: str | None = None) -> tuple[PerplexityCurve, list[RunRecord]]:
    """Train one independent run per ladder rung, all starting from the same
    initialization, and evaluate each rung's best-dev checkpoint on a test
    set held out from the target corpus.

    ``init`` is a checkpoint path or Parameters; None means from-scratch
    (random init, producing the scratch curve) and then requires
    ``model_config``. Rung runs share nothing and are seeded by the rung
    size, so permuting the ladder cannot change any rung's result.
    """
    ladder = [int(r) for r in ladder]
    if not ladder or sorted(set(ladder)) != ladder:
        raise ValueError("ladder must be a non-empty strictly increasing list of byte sizes")
    if isinstance(init, (str, Path)):
        base_params = load_checkpoint(init)
    elif isinstance(init, Parameters):
        base_params = init
    elif init is None:
        if model_config is None:
            raise ValueError("scratch finetuning needs a model_config")
        base_params = init_params(model_config, train_config.seed)
    else:
        raise TypeError(f"init must be a checkpoint path, Parameters or None, got {type(init)}")
    init_tag = SCRATCH_TAG if init is None else (source_tag or "pretrained")

    if test_corpus is None:
        test_corpus, pool = split_budget(corpus, eval_bytes,
                                         [train_config.seed, _SALT_TEST_SPLIT])
    else:
        pool = corpus
    test_batches = corpus_eval_batches(test_corpus, train_config.seq_len,
                                       train_config.batch_sequences)
    if pool.total_bytes < ladder[-1]:
        raise ValueError(
            f"largest rung {ladder[-1]} exceeds the available finetuning pool "
            f"({pool.total_bytes} bytes after the test holdout)")

    records: list[RunRecord] = []
    sizes: list[float] = []
    ppls: list[float] = []
    tmp_ctx = None
    if out_dir is None:
        tmp_ctx = tempfile.TemporaryDirectory(prefix="langxfer_ladder_")
        out_dir = tmp_ctx.name
    out_dir = Path(out_dir)
    try:
        for rung in ladder:
            rung_dir = out_dir / f"rung_{rung}"
            rung_dir.mkdir(parents=True, exist_ok=True)
            rung_corpus, _ = split_budget(
                pool, rung, [train_config.seed, rung, _SALT_RUNG_SAMPLE])
            inputs, targets = pack(rung_corpus, train_config.seq_len)
            tr_in, tr_tg, dev_in, dev_tg = _dev_split(
                inputs, targets, [train_config.seed, rung, _SALT_DEV_SPLIT])
            dev_batches = make_batches(dev_in, dev_tg, train_config.batch_sequences)
            cfg = _rung_config(train_config, rung, rung == ladder[-1])
            params = base_params.copy()
            record = RunRecord(run_id=f"{init_tag}_to_{corpus.language}_rung{rung}",
                               source=init_tag, target=corpus.language,
                               rung_bytes=rung, seed=cfg.seed, config=cfg.to_dict())
            curve_rows: list = []
            best = train_loop(params, tr_in, tr_tg, cfg, dev_batches, record, curve_rows)
            ckpt = rung_dir / "checkpoint.bin"
            save_checkpoint(best, ckpt)
            record.checkpoint_path = str(ckpt)
            # score the stored checkpoint, not the in-memory weights
            reloaded = load_checkpoint(ckpt)
            record.test_perplexity = evaluate(reloaded, test_batches)
            _write_loss_curve(rung_dir / "loss_curve.csv", curve_rows)
            record.to_json(rung_dir / "record.json")
            records.append(record)
            sizes.append(float(rung))
            ppls.append(record.test_perplexity)
    finally:
        if tmp_ctx is not None:
            tmp_ctx.cleanup()
    curve = PerplexityCurve(corpus.language, init_tag, np.array(sizes), np.array(ppls))
    return curve, records


def _rung_config(base: TrainConfig, rung: int, largest: bool) -> TrainConfig:
    """Per-rung schedule: warmup grows with the rung size; the largest rung
    trains for at most 3 epochs (it tends to overfit beyond that)."""
    epochs = base.epochs
    if epochs is not None and largest and base.total_steps is None:
        epochs = max(1, min(epochs, 3))
    return replace(base, epochs=epochs, warmup_steps=warmup_for_size(rung))
