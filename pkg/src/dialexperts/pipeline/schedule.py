"""Linear warm-up followed by linear decay to a floor."""
from __future__ import annotations


def lr_at(step: int, warmup_steps: int, total_steps: int, base_lr: float = 1e-4, min_lr: float = 5e-5) -> float:
    """0 → base_lr over ``warmup_steps``, then base_lr → min_lr at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps} and {total_steps}")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr + (min_lr - base_lr) * frac


def warmup_steps_for(total_steps: int, frac: float) -> int:
    return min(int(round(frac * total_steps)), total_steps - 1)
