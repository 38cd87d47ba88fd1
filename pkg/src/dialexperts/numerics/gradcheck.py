"""Central finite-difference gradient checking.

The checker perturbs tensors in place, so it works equally for explicit
inputs and for parameters captured inside a model closure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckResult:
    max_rel_err: float
    per_tensor: list[float] = field(default_factory=list)

    def ok(self, tol: float) -> bool:
        return self.max_rel_err <= tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-6,
    fd_dtype=np.float64,
    max_elems: int | None = None,
    seed: int = 0,
    order: int = 2,
) -> GradCheckResult:
    """Compare autodiff gradients of scalar ``fn()`` with central differences.

    The finite-difference evaluations run with the perturbed tensor cast to
    ``fd_dtype``, so a 32-bit analytic gradient is judged against a 64-bit
    numerical one. With ``max_elems`` only a random subset of coordinates
    per tensor is probed. ``order=4`` uses the five-point stencil, whose
    smaller truncation error allows a larger ``eps`` and so less roundoff.
    """
    if order == 2:
        stencil = ((1.0, 0.5), (-1.0, -0.5))
    elif order == 4:
        stencil = ((2.0, -1 / 12), (1.0, 8 / 12), (-1.0, -8 / 12), (-2.0, 1 / 12))
    else:
        raise ValueError(f"order must be 2 or 4, got {order}")
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in tensors]

    errors = []
    for t, grad in zip(tensors, analytic):
        original = t.data
        base = original.astype(fd_dtype)
        coords = np.arange(base.size)
        if max_elems is not None and base.size > max_elems:
            coords = np.sort(rng.choice(base.size, size=max_elems, replace=False))
        numeric = np.empty(len(coords))
        try:
            for k, flat in enumerate(coords):
                total = 0.0
                for step, weight in stencil:
                    probe = base.copy().reshape(-1)
                    probe[flat] += step * eps
                    t.data = probe.reshape(base.shape)
                    with no_grad():
                        total += weight * float(np.asarray(fn().data, dtype=np.float64))
                numeric[k] = total / eps
        finally:
            t.data = original
        errors.append(relative_error(grad.reshape(-1)[coords], numeric))
    return GradCheckResult(max(errors) if errors else 0.0, errors)
