"""Log-likelihood objective, Adam with warmup schedule, batching, train loop."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import PAD_ID
from .errors import ConfigError, DataError
from .tensor import Tape, Tensor


@dataclass
class TrainConfig:
    batch_tokens: int = 2000
    warmup_steps: int = 4000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    seed: int = 0
    max_steps: int = 100
    checkpoint_every: int = 0  # 0: only the final checkpoint
    grad_clip: float = 0.0  # 0: off

    def validate(self):
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.batch_tokens < 1:
            raise ConfigError(f"batch_tokens must be >= 1, got {self.batch_tokens}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass
class Batch:
    examples: list
    src_ids: np.ndarray  # [B, S] PAD-filled
    src_mask: np.ndarray  # [B, S] bool
    tgt_ids: np.ndarray  # [B, T] PAD-filled, BOS...EOS wrapped
    tgt_mask: np.ndarray  # [B, T] bool

    @property
    def target_tokens(self):
        return int(self.tgt_mask[:, 1:].sum())


def nll_loss(logprobs, targets, pad_mask):
    """Mean over non-pad positions of -log P(y_t); PAD positions contribute zero."""
    targets = np.asarray(targets, dtype=np.intp)
    mask = np.asarray(pad_mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise DataError("nll_loss: every target position is padding")
    picked = T.take_along_last(logprobs, targets)
    masked = T.mul(picked, Tensor(mask.astype(np.float64)))
    return masked.sum() * (-1.0 / count)


def lr_schedule(step, d_model, warmup_steps):
    """Inverse-sqrt schedule with linear warmup (peak at step == warmup_steps)."""
    if step < 1:
        raise ConfigError(f"lr_schedule needs step >= 1, got {step}")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(named_params, state: AdamState, lr, config: TrainConfig):
    """Bias-corrected Adam update reading each parameter's populated .grad."""
    if config.grad_clip > 0.0:
        total = math.sqrt(sum(float((p.grad ** 2).sum()) for _, p in named_params))
        if total > config.grad_clip:
            scale = config.grad_clip / total
            for _, p in named_params:
                p.grad *= scale
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in named_params:
        g = p.grad
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)


def example_token_count(example):
    return example.graph.n_text + len(example.target)


def _pad_matrix(rows, width):
    ids = np.full((len(rows), width), PAD_ID, dtype=np.intp)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = True
    return ids, mask


def _to_batch(examples):
    src_rows = [ex.graph.textual_nodes for ex in examples]
    tgt_rows = [ex.target for ex in examples]
    src_ids, src_mask = _pad_matrix(src_rows, max(len(r) for r in src_rows))
    tgt_ids, tgt_mask = _pad_matrix(tgt_rows, max(len(r) for r in tgt_rows))
    return Batch(list(examples), src_ids, src_mask, tgt_ids, tgt_mask)


def make_batches(examples, batch_tokens, rng):
    """Length-bucketed, seeded-shuffled batches under a source+target token cap.

    An example larger than the cap forms a singleton batch. Every example
    appears exactly once.
    """
    order = sorted(range(len(examples)),
                   key=lambda i: (example_token_count(examples[i]), rng.random()))
    batches = []
    current, current_tokens = [], 0
    for idx in order:
        t = example_token_count(examples[idx])
        if current and current_tokens + t > batch_tokens:
            batches.append(_to_batch([examples[i] for i in current]))
            current, current_tokens = [], 0
        current.append(idx)
        current_tokens += t
    if current:
        batches.append(_to_batch([examples[i] for i in current]))
    rng.shuffle(batches)
    return batches


def batch_loss(model, batch: Batch, mode="eval", rng=None):
    """Teacher-forced mean NLL over the batch's non-pad target positions."""
    rows = [model.example_logprobs(ex, mode=mode, rng=rng) for ex in batch.examples]
    stacked = T.pad_stack(rows, length=batch.tgt_ids.shape[1] - 1)
    return nll_loss(stacked, batch.tgt_ids[:, 1:], batch.tgt_mask[:, 1:])


def dataset_loss(model, examples, batch_tokens=2000):
    """Token-weighted eval NLL over a dataset."""
    rng = np.random.default_rng(0)
    total, count = 0.0, 0
    for batch in make_batches(examples, batch_tokens, rng):
        n = batch.target_tokens
        total += batch_loss(model, batch, mode="eval").item() * n
        count += n
    return total / count


@dataclass
class TrainResult:
    curve: list  # (step, lr, loss)
    final_checkpoint: str
    csv_path: str


def write_loss_csv(curve, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in curve:
            writer.writerow([step, repr(float(lr)), repr(float(loss))])


def train(model, examples, config: TrainConfig, out_dir, run_config=None, log=None):
    """Run forward/backward/adam to max_steps; write checkpoints and the loss CSV.

    Fully deterministic given the seed: batching, dropout, and iteration
    order all come from generators spawned off config.seed.
    """
    config.validate()
    if not examples:
        raise DataError("training needs a non-empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    batch_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(2)
    batch_rng = np.random.default_rng(batch_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    named = model.named_parameters()
    state = AdamState()
    run_config = dict(run_config or {})
    curve = []
    step = 0
    d_model = model.enc_config.d_model
    while step < config.max_steps:
        for batch in make_batches(examples, config.batch_tokens, batch_rng):
            step += 1
            T.zero_grads(p for _, p in named)
            with Tape() as tape:
                loss = batch_loss(model, batch, mode="train", rng=dropout_rng)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                dump = os.path.join(out_dir, "diagnostic_batch.json")
                with open(dump, "w", encoding="utf-8") as fh:
                    json.dump({"step": step, "loss": repr(loss_value),
                               "src_ids": batch.src_ids.tolist(),
                               "tgt_ids": batch.tgt_ids.tolist()}, fh)
                raise DataError(f"non-finite loss {loss_value} at step {step}; "
                                f"offending batch dumped to {dump}")
            tape.backward(loss)
            lr = lr_schedule(step, d_model, config.warmup_steps)
            adam_step(named, state, lr, config)
            curve.append((step, lr, loss_value))
            if log is not None:
                log(f"step {step} lr {lr:.6g} loss {loss_value:.6f}")
            if config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(os.path.join(out_dir, f"checkpoint_{step:06d}.ckpt"),
                                run_config, named)
            if step >= config.max_steps:
                break
    final = os.path.join(out_dir, "checkpoint_final.ckpt")
    save_checkpoint(final, run_config, named)
    csv_path = os.path.join(out_dir, "loss_curve.csv")
    write_loss_csv(curve, csv_path)
    return TrainResult(curve=curve, final_checkpoint=final, csv_path=csv_path)
