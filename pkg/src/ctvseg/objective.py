"""Composite BCE + Dice loss, the trainable/frozen split and the AdamW optimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.tensor import ContractError, Tensor, as_tensor

DICE_SMOOTH = 1e-5


class ConfigError(ValueError):
    pass


class PartitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    ce: float = 1.0
    dice: float = 1.0

    def __post_init__(self):
        if self.ce < 0 or self.dice < 0:
            raise ConfigError(f"loss weights must be non-negative, got ce={self.ce} dice={self.dice}")
        if self.ce == 0 and self.dice == 0:
            raise ConfigError("at least one loss weight must be positive")


def _check(logits, y):
    z, t = as_tensor(logits), as_tensor(y)
    if z.shape != t.shape:
        raise ContractError(f"logits {z.shape} vs target {t.shape}")
    return z, t


def bce_loss(logits, y) -> Tensor:
    # -[y log s(z) + (1-y) log(1-s(z))] == softplus(z) - y*z
    z, t = _check(logits, y)
    return ops.mean(ops.sub(ops.softplus(z), ops.mul(t, z)))


def dice_loss(logits, y, smooth: float = DICE_SMOOTH) -> Tensor:
    """Soft Dice per sample (axis 0 is the batch), averaged over the batch."""
    z, t = _check(logits, y)
    p = ops.sigmoid(z)
    if z.ndim == 0:
        axes = None
    else:
        axes = tuple(range(1, z.ndim)) if z.ndim > 1 else None
    inter = ops.sum(ops.mul(p, t), axis=axes)
    denom = ops.add(ops.sum(p, axis=axes), ops.sum(t, axis=axes))
    score = ops.div(ops.add(ops.mul(inter, 2.0), smooth), ops.add(denom, smooth))
    return ops.sub(1.0, ops.mean(score))


def total_loss(logits, y, w: LossWeights = LossWeights()) -> Tensor:
    parts = []
    if w.ce:
        parts.append(ops.mul(bce_loss(logits, y), w.ce) if w.ce != 1 else bce_loss(logits, y))
    if w.dice:
        d = dice_loss(logits, y)
        parts.append(ops.mul(d, w.dice) if w.dice != 1 else d)
    return parts[0] if len(parts) == 1 else ops.add(parts[0], parts[1])


def partition_params(model) -> tuple[dict, dict]:
    """(trainable, frozen) name->Parameter maps; frozen is exactly the language model."""
    frozen_ids = {id(p) for p in model.frozen_parameters()}
    trainable, frozen = {}, {}
    for name, p in model.named_parameters():
        if id(p) in frozen_ids:
            frozen[name] = p
        elif p.frozen:
            raise PartitionError(f"{name} is frozen but not part of the language model")
        else:
            trainable[name] = p
    seen = set(trainable) | set(frozen)
    missing = [n for n, _ in model.named_parameters() if n not in seen]
    if missing or set(trainable) & set(frozen):
        raise PartitionError(f"unpartitioned parameters: {missing}")
    return trainable, frozen


class AdamW:
    """Adam with decoupled weight decay; frozen parameters are skipped."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.frozen or p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data * (1.0 - self.lr * self.wd) - self.lr * update).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state(self, state) -> None:
        self.t = int(state["t"])
        for i in range(len(self.params)):
            self.m[i] = np.array(state[f"m{i}"])
            self.v[i] = np.array(state[f"v{i}"])
