"""SGD training with gradient clipping and validation-based annealing."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..corpus import BatchPlan, CorpusSplit, batchify
from .model import (
    DivergenceError,
    ForwardCache,
    LmConfig,
    LmParameters,
    LmState,
    forward_window,
    backward_window,
    init_params,
    softmax_xent,
)
from .score import stream_nll


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float  # nats/token
    valid_loss: float  # nats/token
    learning_rate: float
    seconds: float


@dataclass
class TrainingLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def append(self, record: EpochRecord) -> None:
        if self.epochs:
            last = self.epochs[-1]
            if record.epoch != last.epoch + 1:
                raise ValueError("epochs must be recorded in order")
            if record.learning_rate > last.learning_rate:
                raise ValueError("learning rate may never increase")
        self.epochs.append(record)

    def as_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "epochs": [vars(e) for e in self.epochs],
        }


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_update(params: LmParameters, grads: dict[str, np.ndarray], lr: float) -> None:
    for name, tensor in params.named_tensors().items():
        tensor -= lr * grads[name]


def train_step(
    params: LmParameters,
    inputs: np.ndarray,
    targets: np.ndarray,
    state: LmState,
    rng: np.random.Generator,
) -> tuple[float, dict[str, np.ndarray], LmState]:
    """One BPTT window: returns (mean nats/token, grads, detached state)."""
    logits, new_state, cache = forward_window(
        params, inputs, state, train_mode=True, rng=rng, keep_cache=True
    )
    T, B, V = logits.shape
    loss, dlogits = softmax_xent(logits.reshape(T * B, V), targets.reshape(T * B))
    grads = backward_window(params, cache, dlogits)
    return loss, grads, new_state


def train(config: LmConfig, split: CorpusSplit) -> tuple[LmParameters, TrainingLog]:
    """Train from scratch; returns the best-validation-epoch parameters.

    The learning rate divides by config.anneal_factor after every epoch
    whose validation loss does not improve on the best seen so far.
    """
    if config.num_layers < 1:
        raise ValueError("training requires at least one recurrent layer")
    for name in ("train", "valid"):
        if not getattr(split, name):
            raise ValueError(f"{name} split is empty")
    params = init_params(config, vocab_size=len(split.vocab))
    dropout_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,))
    )
    train_stream = split.stream("train")
    valid_stream = split.stream("valid")
    batches = batchify(train_stream, BatchPlan(config.batch_size, config.bptt_len))

    log = TrainingLog()
    lr = config.learning_rate
    best_loss = math.inf
    best_params = params.clone()
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        state = LmState.zeros(config, config.batch_size, dtype=params.embedding.dtype)
        total_nats = 0.0
        total_tokens = 0
        for inp, tgt in batches:
            inputs = np.ascontiguousarray(inp.T)
            targets = np.ascontiguousarray(tgt.T)
            loss, grads, state = train_step(params, inputs, targets, state, dropout_rng)
            if not math.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite in epoch {epoch}")
            clip_gradients(grads, config.grad_clip_norm)
            sgd_update(params, grads, lr)
            n = inputs.size
            total_nats += loss * n
            total_tokens += n
        valid_loss = stream_nll(params, valid_stream) / len(valid_stream)
        if not math.isfinite(valid_loss):
            raise DivergenceError(f"validation loss became non-finite in epoch {epoch}")
        log.append(
            EpochRecord(
                epoch,
                total_nats / max(total_tokens, 1),
                valid_loss,
                lr,
                time.perf_counter() - started,
            )
        )
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_params = params.clone()
            log.best_epoch = epoch
        else:
            lr /= config.anneal_factor
    best_params.check_finite()
    return best_params, log
