"""Multi-task training: emotion loss plus weighted auxiliary losses under AdamW."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .aux_tasks import build_aux1, build_aux2, make_class_pools
from .data import Batch, Sample, make_batch
from .fusion import (
    FusionConfig,
    FusionModelParams,
    UnimodalHeadParams,
    forward,
    forward_unimodal,
    init_params,
    init_unimodal,
    predict,
)
from .tensor import Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    lambda_main: float = 1.0
    lambda_aux1: float = 1.0
    lambda_aux2: float = 1.0
    enable_aux1: bool = False
    enable_aux2: bool = False
    grad_clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.lambda_main <= 0.0:
            raise ValueError("lambda_main must be positive")
        if min(self.lambda_aux1, self.lambda_aux2) < 0.0:
            raise ValueError("loss weights must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0.0 or self.weight_decay < 0.0:
            raise ValueError("eps must be positive and weight_decay non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0.0:
            raise ValueError("grad_clip_norm must be positive when set")


NamedParams = list[tuple[str, Tensor]]


@dataclass
class OptimizerState:
    """Per-parameter first/second moment estimates and the shared step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_optimizer(params: NamedParams) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(p.data) for name, p in params},
        v={name: np.zeros_like(p.data) for name, p in params},
    )


def adamw_step(params: NamedParams, state: OptimizerState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update; decay acts on the pre-update value."""
    state.t += 1
    t = state.t
    for name, p in params:
        g = p.grad
        if g is None:
            raise RuntimeError(f"missing gradient for parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        p.data = p.data - cfg.learning_rate * (
            m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data
        )


def clip_gradients(params: NamedParams, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


@dataclass
class StepRecord:
    epoch: int
    step: int
    l_main: float
    l_aux1: float
    l_aux2: float
    train_acc: float

    def as_line(self) -> str:
        return (
            f"epoch={self.epoch} step={self.step} l_main={self.l_main:.6f} "
            f"l_aux1={self.l_aux1:.6f} l_aux2={self.l_aux2:.6f} train_acc={self.train_acc:.4f}"
        )


def trainable_params(params: FusionModelParams, skip_attention: bool) -> NamedParams:
    """Attention weights are frozen out when the model runs in pooled-concat mode."""
    named = list(params.named())
    if skip_attention:
        named = [(n, p) for n, p in named if n.startswith("head.")]
    return named


def train_step(
    params: FusionModelParams,
    model_cfg: FusionConfig,
    batch: Batch,
    class_pools: dict[int, list[Sample]] | None,
    cfg: TrainConfig,
    state: OptimizerState,
    rng: np.random.Generator,
    trainable: NamedParams,
    skip_attention: bool = False,
) -> tuple[float, float, float, float]:
    """One optimization step over the three-task loss; returns losses and batch accuracy.

    Disabled auxiliary terms contribute exactly zero and skip their forward
    pass entirely; zero-weighted but enabled terms still run forward and
    contribute an exact zero through the scale factor.
    """
    dropout_rng = rng if model_cfg.dropout_rate > 0.0 else None
    T.zero_grads([p for _, p in trainable])
    with T.Tape() as tape:
        _, main_logits, _ = forward(
            params, model_cfg, batch, skip_attention=skip_attention, attn_dropout_rng=dropout_rng
        )
        l_main = T.cross_entropy(main_logits, batch.labels)
        loss = T.scale(l_main, cfg.lambda_main)
        l_aux1_value = 0.0
        if cfg.enable_aux1:
            aux1 = build_aux1(batch, model_cfg.num_emotions, rng)
            _, _, aux1_logits = forward(
                params, model_cfg, aux1.features, skip_attention=skip_attention,
                attn_dropout_rng=dropout_rng,
            )
            l_aux1 = T.cross_entropy(aux1_logits, aux1.combined_labels)
            loss = T.add(loss, T.scale(l_aux1, cfg.lambda_aux1))
            l_aux1_value = l_aux1.item()
        l_aux2_value = 0.0
        if cfg.enable_aux2:
            if class_pools is None:
                raise ValueError("same-class swap task needs class pools from the training split")
            aux2 = build_aux2(batch, class_pools, rng)
            _, aux2_logits, _ = forward(
                params, model_cfg, aux2, skip_attention=skip_attention,
                attn_dropout_rng=dropout_rng,
            )
            l_aux2 = T.cross_entropy(aux2_logits, aux2.labels)
            loss = T.add(loss, T.scale(l_aux2, cfg.lambda_aux2))
            l_aux2_value = l_aux2.item()
    tape.backward(loss)
    if cfg.grad_clip_norm is not None:
        clip_gradients(trainable, cfg.grad_clip_norm)
    adamw_step(trainable, state, cfg)
    acc = float(np.mean(predict(main_logits.data) == batch.labels))
    return l_main.item(), l_aux1_value, l_aux2_value, acc


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(
    train_samples: Sequence[Sample],
    model_cfg: FusionConfig,
    cfg: TrainConfig,
    skip_attention: bool = False,
) -> tuple[FusionModelParams, list[StepRecord]]:
    """Seeded multi-epoch training over shuffled batches of the given split."""
    if not train_samples:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(model_cfg, rng)
    trainable = trainable_params(params, skip_attention)
    state = init_optimizer(trainable)
    class_pools = make_class_pools(list(train_samples)) if cfg.enable_aux2 else None
    history: list[StepRecord] = []
    for epoch in range(cfg.epochs):
        for step, idx in enumerate(iter_batches(len(train_samples), cfg.batch_size, rng)):
            batch = make_batch([train_samples[i] for i in idx])
            l_main, l_aux1, l_aux2, acc = train_step(
                params, model_cfg, batch, class_pools, cfg, state, rng, trainable,
                skip_attention=skip_attention,
            )
            history.append(StepRecord(epoch, step, l_main, l_aux1, l_aux2, acc))
    return params, history


def train_unimodal(
    train_samples: Sequence[Sample],
    modality: str,
    feature_dim: int,
    num_emotions: int,
    cfg: TrainConfig,
) -> tuple[UnimodalHeadParams, list[StepRecord]]:
    """Pooled-features affine baseline over a single modality."""
    if modality not in ("audio", "text"):
        raise ValueError(f"modality must be 'audio' or 'text', got {modality!r}")
    if not train_samples:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    params = init_unimodal(feature_dim, num_emotions, rng)
    named = list(params.named())
    state = init_optimizer(named)
    history: list[StepRecord] = []
    for epoch in range(cfg.epochs):
        for step, idx in enumerate(iter_batches(len(train_samples), cfg.batch_size, rng)):
            batch = make_batch([train_samples[i] for i in idx])
            features = batch.audio if modality == "audio" else batch.text
            mask = batch.audio_mask if modality == "audio" else batch.text_mask
            T.zero_grads([p for _, p in named])
            with T.Tape() as tape:
                logits = forward_unimodal(params, features, mask)
                loss = T.scale(T.cross_entropy(logits, batch.labels), cfg.lambda_main)
            tape.backward(loss)
            if cfg.grad_clip_norm is not None:
                clip_gradients(named, cfg.grad_clip_norm)
            adamw_step(named, state, cfg)
            acc = float(np.mean(predict(logits.data) == batch.labels))
            history.append(StepRecord(epoch, step, loss.item(), 0.0, 0.0, acc))
    return params, history
