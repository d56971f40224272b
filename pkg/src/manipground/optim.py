"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    total_steps: int
    warmup_steps: int = 200
    peak_lr: float = 1e-4
    floor_lr: float = 1e-6

    def __post_init__(self):
        if not 0 < self.floor_lr <= self.peak_lr:
            raise ValueError("need 0 < floor_lr <= peak_lr")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")

    def __call__(self, step: int) -> float:
        return lr_at(self, step)


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear warmup from 0 to the peak, then cosine decay to the floor."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    w = schedule.warmup_steps
    if step < w:
        return schedule.peak_lr * step / w
    if step == w:
        return schedule.peak_lr
    if step == schedule.total_steps:
        return schedule.floor_lr
    progress = (step - w) / (schedule.total_steps - w)
    return schedule.floor_lr + (schedule.peak_lr - schedule.floor_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam moments with bias correction; decay ``lr * wd * theta`` applied separately.

    Parameters flagged ``no_decay`` (biases, norms, learnable queries) are not decayed.
    """

    def __init__(self, named_params, weight_decay: float = 0.02, betas=(0.9, 0.999), eps: float = 1e-8):
        self.named_params: list[tuple[str, Tensor]] = list(named_params)
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self, lr: float) -> None:
        for (name, p) in self.named_params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape} for {name}")
            if not np.all(np.isfinite(p.grad)):
                bad = int((~np.isfinite(p.grad)).sum())
                raise FloatingPointError(f"non-finite gradient in {name} ({bad} entries) at step {self.step_count + 1}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, (_, p) in enumerate(self.named_params):
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            wd = 0.0 if p.no_decay else self.weight_decay
            p.data -= lr * update + lr * wd * p.data

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def state(self) -> dict:
        return {"step": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state: dict) -> None:
        if len(state["m"]) != len(self.m):
            raise ValueError("optimizer state does not match parameter list")
        for k, (a, b) in enumerate(zip(state["m"], state["v"])):
            if a.shape != self.m[k].shape:
                raise ValueError(f"optimizer state shape mismatch for {self.named_params[k][0]}")
            self.m[k][...] = a
            self.v[k][...] = b
        self.step_count = int(state["step"])


def adamw_step(state: AdamW, lr: float) -> None:
    state.step(lr)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
