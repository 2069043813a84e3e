"""Decoupled-weight-decay Adam and the cyclic cosine-restart schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class CosineRestartSchedule:
    """Cosine decay from peak*restart_weight to eta_min inside each period;
    resets at period boundaries, clamps to the final floor afterwards."""

    def __init__(self, base_lr: float, periods: list[int],
                 restart_weights: list[float], eta_mins: list[float]):
        if not (len(periods) == len(restart_weights) == len(eta_mins)):
            raise ValueError("periods, restart_weights, eta_mins must align")
        self.base_lr = base_lr
        self.periods = list(periods)
        self.restart_weights = list(restart_weights)
        self.eta_mins = list(eta_mins)
        self.starts = np.concatenate([[0], np.cumsum(periods)])

    def lr(self, step: int) -> float:
        if step >= self.starts[-1]:
            return self.eta_mins[-1]
        i = int(np.searchsorted(self.starts, step, side="right")) - 1
        local = step - self.starts[i]
        peak = self.base_lr * self.restart_weights[i]
        floor = self.eta_mins[i]
        cos = 0.5 * (1.0 + np.cos(np.pi * local / self.periods[i]))
        return floor + (peak - floor) * cos
