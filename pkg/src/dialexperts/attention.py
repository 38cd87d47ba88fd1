"""Multi-head attention with boolean masks and pre-layer-normalisation."""
from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .numerics import LayerNorm, Linear, Module, Tensor, masked_softmax


class MultiHeadAttention(Module):
    """``out = W_o · softmax(QKᵀ/√d_h, mask) V`` with Q from ``LN(x)``.

    ``mask`` is boolean and broadcasts to (batch, heads, queries, keys);
    True means the query may attend to the key. When ``context`` is given
    keys and values come from it (cross-attention) and it is used as-is.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, prenorm: bool = True):
        if dim % heads:
            raise ShapeError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.dim = dim
        self.norm = LayerNorm(dim) if prenorm else None
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, mask: np.ndarray | None = None, context: Tensor | None = None) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"attention expects width {self.dim}, got {x.shape}")
        h = self.norm(x) if self.norm is not None else x
        src = h if context is None else context
        q, k, v = self._split(self.q(h)), self._split(self.k(src)), self._split(self.v(src))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.dim // self.heads))
        probs = masked_softmax(scores, mask)
        out = (probs @ v).transpose(0, 2, 1, 3).reshape(x.shape[0], x.shape[1], self.dim)
        return self.o(out)


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """(batch, keys) validity → mask broadcastable to (batch, heads, queries, keys)."""
    return np.asarray(valid, dtype=bool)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))
