"""Adam with per-group learning rates, gradient clipping and two LR schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigError


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray | None], state: AdamState, lr: float | list[float],
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction.

    ``lr`` is either one rate or a per-parameter list. A ``None`` gradient or a
    zero rate leaves the parameter untouched bit for bit.
    """
    lrs = lr if isinstance(lr, (list, tuple)) else [lr] * len(params)
    if any(r < 0 for r in lrs):
        raise ConfigError(f"learning rate must be >= 0, got {min(lrs)}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if lrs[i] == 0.0:
            continue
        mhat = m / bc1
        vhat = v / bc2
        p -= (lrs[i] * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, params, lr: float = 1e-4, group_lr: dict[str, float] | None = None,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0,
                 clip_norm: float | None = None):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.group_lr = dict(group_lr or {})
        for g, r in self.group_lr.items():
            if r < 0:
                raise ConfigError(f"learning rate for group {g!r} must be >= 0, got {r}")
        self.betas, self.eps = betas, eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.state = AdamState([np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])
        self.scale = 1.0

    def rates(self) -> list[float]:
        return [self.group_lr.get(p.group, self.lr) * self.scale for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                f = self.clip_norm / (norm + 1e-6)
                grads = [None if g is None else g * f for g in grads]
        if self.weight_decay:
            grads = [None if g is None else g + self.weight_decay * p.data for g, p in zip(grads, self.params)]
        adam_step([p.data for p in self.params], grads, self.state, self.rates(),
                  self.betas[0], self.betas[1], self.eps)


@dataclass
class PlateauSchedule:
    """Halve (``factor``) the LR after ``patience`` epochs without improvement."""

    patience: int = 5
    factor: float = 0.5
    best: float = math.inf
    bad_epochs: int = 0
    scale: float = 1.0

    def step(self, metric: float, epoch: int | None = None) -> float:
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.scale *= self.factor
                self.bad_epochs = 0
        return self.scale


@dataclass
class CosineSchedule:
    period: int
    min_scale: float = 0.0
    scale: float = field(default=1.0)

    def step(self, metric: float | None = None, epoch: int = 0) -> float:
        t = min(epoch + 1, self.period)
        self.scale = self.min_scale + (1 - self.min_scale) * 0.5 * (1 + math.cos(math.pi * t / self.period))
        return self.scale


def make_schedule(kind: str, epochs: int, patience: int = 5, factor: float = 0.5):
    if kind == "plateau":
        return PlateauSchedule(patience=patience, factor=factor)
    if kind == "cosine":
        return CosineSchedule(period=max(1, epochs))
    if kind == "none":
        return None
    raise ConfigError(f"unknown scheduler {kind!r}")
