"""Fused differentiable operations with hand-written backward passes."""
from __future__ import annotations

import math

import numpy as np

from ..errors import MaskError, ShapeError
from .tensor import Tensor

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def masked_softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is False get probability 0.

    A row with no allowed entry raises MaskError instead of producing NaNs.
    """
    x = logits.data
    if mask is None:
        z = x
    else:
        mask = np.asarray(mask, dtype=bool)
        try:
            full = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise ShapeError(f"mask {mask.shape} does not broadcast to logits {x.shape}") from None
        if not full.any(axis=-1).all():
            raise MaskError("fully masked softmax row")
        z = np.where(full, x, -np.inf)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (logits,), backward, "masked_softmax")


def softmax(logits: Tensor) -> Tensor:
    return masked_softmax(logits, None)


def log_softmax(logits: Tensor) -> Tensor:
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return Tensor._result(out, (logits,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm affine params {gain.shape}/{bias.shape} do not match width {width}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(out, (x, gain, bias), backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    a = x.data
    inner = _GELU_C * (a + 0.044715 * a**3)
    t = np.tanh(inner)
    out = 0.5 * a * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * d_inner),)

    return Tensor._result(out, (x,), backward, "gelu")


def _validate_soft_targets(y: np.ndarray) -> None:
    sums = y.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(sums - 1.0).reshape(-1)))
        raise ValueError(f"target row {bad} sums to {sums.reshape(-1)[bad]:.8f}, expected 1")


def cross_entropy(
    inputs: Tensor,
    targets,
    weights: np.ndarray | None = None,
    from_probs: bool = False,
) -> Tensor:
    """Weighted mean over rows of -sum(y * log p).

    ``inputs`` holds logits (default) or probabilities over the last axis.
    ``targets`` are class ids (shape ``inputs.shape[:-1]``) or distributions
    (shape ``inputs.shape``). Rows with zero weight are ignored.
    """
    x = inputs.data
    targets = np.asarray(targets)
    num_classes = x.shape[-1]
    if targets.shape == x.shape[:-1] and targets.dtype.kind in "iub":
        if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
            raise ValueError(f"class id out of range [0, {num_classes})")
        y = np.zeros_like(x)
        np.put_along_axis(y, targets[..., None].astype(np.int64), 1.0, axis=-1)
    elif targets.shape == x.shape:
        y = targets.astype(x.dtype)
        _validate_soft_targets(y)
    else:
        raise ShapeError(f"targets {targets.shape} incompatible with inputs {x.shape}")

    w = np.ones(x.shape[:-1], dtype=x.dtype) if weights is None else np.asarray(weights, dtype=x.dtype)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy needs at least one row with positive weight")
    scale = (w / total)[..., None]

    if from_probs:
        logp = np.where(y > 0, np.log(np.where(y > 0, x, 1.0)), 0.0)
    else:
        shifted = x - x.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    value = -(y * logp * scale).sum()

    def backward(g):
        if from_probs:
            d = np.where(y > 0, -y / np.where(y > 0, x, 1.0), 0.0)
        else:
            d = np.exp(logp) * y.sum(axis=-1, keepdims=True) - y
        return (g * d * scale,)

    return Tensor._result(np.asarray(value, dtype=x.dtype), (inputs,), backward, "cross_entropy")


def masked_max(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Max over ``axis`` restricted to entries where ``mask`` is True."""
    full = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not full.any(axis=axis).all():
        raise MaskError("masked_max over an empty set")
    z = np.where(full, x.data, -np.inf)
    idx = np.expand_dims(np.argmax(z, axis=axis), axis)
    value = np.squeeze(np.take_along_axis(x.data, idx, axis=axis), axis=axis)

    def backward(g):
        out = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return Tensor._result(value, (x,), backward, "masked_max")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    return x / ((x * x).sum(axis=axis, keepdims=True) + eps).sqrt()


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = x @ weight
    return out if bias is None else out + bias


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    return weight[np.asarray(ids, dtype=np.int64)]
