"""AdamW with decoupled weight decay and global-norm gradient clipping."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import ConfigError
from .module import Parameter

# full-scale defaults
WEIGHT_DECAY = 0.01
CLIP_NORM = 1.0


def global_grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    params = [p for p in params if p.grad is not None]
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad = p.grad * p.grad.dtype.type(scale)
    return norm


class AdamW:
    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = WEIGHT_DECAY,
        clip_norm: float = CLIP_NORM,
    ):
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("optimizer state is keyed by parameter name; call Module.assign_names() first")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.state: dict[str, dict] = {}
        self.last_grad_norm = 0.0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        live = [p for p in self.params if not p.frozen and p.grad is not None]
        self.last_grad_norm = clip_grad_norm(live, self.clip_norm)
        for p in live:
            st = self.state.get(p.name)
            if st is None:
                st = self.state[p.name] = {
                    "step": 0,
                    "m": np.zeros_like(p.data),
                    "v": np.zeros_like(p.data),
                }
            st["step"] += 1
            g = p.grad
            st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * g * g
            m_hat = st["m"] / (1 - self.beta1 ** st["step"])
            v_hat = st["v"] / (1 - self.beta2 ** st["step"])
            update = lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)
            p.data = (p.data - update).astype(p.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, st in self.state.items():
            out[f"{name}#m"] = st["m"]
            out[f"{name}#v"] = st["v"]
        return out

    def steps(self) -> dict[str, int]:
        return {name: st["step"] for name, st in self.state.items()}

    def load_state(self, arrays: dict[str, np.ndarray], steps: dict[str, int]) -> None:
        self.state = {
            name: {"step": int(step), "m": arrays[f"{name}#m"].copy(), "v": arrays[f"{name}#v"].copy()}
            for name, step in steps.items()
        }
