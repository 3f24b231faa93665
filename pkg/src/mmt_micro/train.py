"""Parameter init, Adam with gradient clipping and L2 penalty, the epoch
loop, and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .model import ModelParams, ParamSpec, TranslationModel
from .tensor import Rng, Tape, Tensor, backward, global_norm_clip, zero_grads

log = logging.getLogger(__name__)


def init_params(specs: list[ParamSpec], rng: Rng, dtype=np.float32) -> ModelParams:
    """He-style init: weights ~ N(0, 2/fan_in), biases exactly zero."""
    params = ModelParams()
    for spec in specs:
        if spec.bias:
            data = np.zeros(spec.shape, dtype=dtype)
        else:
            std = np.sqrt(2.0 / spec.fan_in)
            data = rng.normal(spec.shape, std=std).astype(dtype)
        params.add(spec.name, Tensor(data, requires_grad=True), bias=spec.bias)
    return params


@dataclass
class OptimizerState:
    """Adam moment buffers, aligned by parameter name."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def adam_step(params: ModelParams, state: OptimizerState, lr: float) -> None:
    """One bias-corrected Adam update from the gradients in ``.grad``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise RuntimeError(f"non-finite gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


def l2_penalty(params: ModelParams, factor: float) -> Tensor:
    """factor * sum of squared weights, biases excluded."""
    acc = None
    for name, p in params.items():
        if params.is_bias(name):
            continue
        term = T.mul(p, p).sum()
        acc = term if acc is None else T.add(acc, term)
    if acc is None:
        return Tensor(np.zeros((), dtype=np.float32))
    return T.scale(acc, factor)


@dataclass
class EpochStats:
    mean_loss: float
    grad_norm_mean: float
    grad_norm_max: float
    clipped_steps: int
    steps: int


def train_epoch(
    model: TranslationModel,
    batches,
    opt: OptimizerState,
    dropout_rng: Rng,
) -> EpochStats:
    """One pass over prepared batches: forward, loss + penalty, backward,
    clip to the configured norm, Adam step."""
    cfg = model.cfg
    tensors = model.params.tensors()
    total_loss = 0.0
    total_tokens = 0
    norms = []
    clipped = 0
    for batch in batches:
        zero_grads(tensors)
        with Tape(rng=dropout_rng) as tape:
            loss, n_tokens = model.batch_loss(
                batch.src_ids, batch.src_mask, batch.tgt_in, batch.tgt_ref,
                batch.tgt_mask, features=batch.features,
                training=True, rng=dropout_rng,
            )
            objective = T.add(loss, l2_penalty(model.params, cfg.l2_factor))
        backward(objective, tape)
        norm = float(np.sqrt(sum(float((t.grad.astype(np.float64) ** 2).sum())
                                 for t in tensors if t.grad is not None)))
        scale = global_norm_clip(tensors, cfg.clip_norm)
        if scale < 1.0:
            clipped += 1
        adam_step(model.params, opt, cfg.lr)
        norms.append(norm)
        total_loss += float(loss.data) * n_tokens
        total_tokens += n_tokens
    if total_tokens == 0:
        raise ConfigError("epoch had no target tokens")
    return EpochStats(
        mean_loss=total_loss / total_tokens,
        grad_norm_mean=float(np.mean(norms)),
        grad_norm_max=float(np.max(norms)),
        clipped_steps=clipped,
        steps=len(norms),
    )


@dataclass
class EarlyStopState:
    """Stop after ``patience`` evaluations without improvement."""

    patience: int
    best: float = -np.inf
    since: int = 0
    best_epoch: int = -1

    def update(self, value: float, epoch: int) -> bool:
        if value > self.best:
            self.best = value
            self.since = 0
            self.best_epoch = epoch
            return True
        self.since += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since >= self.patience
