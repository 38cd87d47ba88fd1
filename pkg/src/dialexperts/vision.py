"""Visual front end: pixels to an F×P×D token grid and the masked spatial/temporal passes.

Tokens are ordered frame-major: flat index ``frame * P + patch``. The spatial
mask lets a token see every token of its own frame; the temporal mask lets it
see the tokens at its own patch position in every frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .attention import MultiHeadAttention
from .errors import ShapeError
from .numerics import Linear, Module, Tensor

RAW_PATCH = 14  # EVA-CLIP patch size; P = H·W / (4·14²)


@lru_cache(maxsize=64)
def build_masks(num_frames: int, patches: int) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (F·P)×(F·P) spatial and temporal attention masks."""
    if num_frames < 1 or patches < 1:
        raise ValueError(f"need F >= 1 and P >= 1, got F={num_frames}, P={patches}")
    idx = np.arange(num_frames * patches)
    frame, patch = idx // patches, idx % patches
    spatial = frame[:, None] == frame[None, :]
    temporal = patch[:, None] == patch[None, :]
    spatial.setflags(write=False)
    temporal.setflags(write=False)
    return spatial, temporal


@dataclass
class VisualTokens:
    tokens: Tensor  # (B, F, P, D)
    num_frames: int
    patches_per_frame: int

    @property
    def spatial_mask(self) -> np.ndarray:
        return build_masks(self.num_frames, self.patches_per_frame)[0]

    @property
    def temporal_mask(self) -> np.ndarray:
        return build_masks(self.num_frames, self.patches_per_frame)[1]

    def flat(self) -> Tensor:
        b, f, p, d = self.tokens.shape
        return self.tokens.reshape(b, f * p, d)


class PatchEmbedder(Module):
    """Linear patch embedding, then 2×2 neighbouring patches are merged and projected to D."""

    def __init__(self, patch_size: int, dim: int, rng: np.random.Generator, patch_dim: int = 32, bias: bool = True):
        self.patch_size = patch_size
        self.dim = dim
        self.embed = Linear(3 * patch_size * patch_size, patch_dim, rng, bias=bias)
        self.proj = Linear(4 * patch_dim, dim, rng, bias=bias)

    def tokens_per_frame(self, height: int, width: int) -> int:
        return height * width // (4 * self.patch_size**2)

    def group_patches(self, frames: np.ndarray) -> np.ndarray:
        """(B, F, 3, H, W) pixels → (B, F, P, 4, 3·ps²) raw 2×2 patch blocks."""
        b, f, c, h, w = frames.shape
        ps = self.patch_size
        if h % (2 * ps) or w % (2 * ps):
            raise ShapeError(f"frame size {h}x{w} must be divisible by 2*patch_size={2 * ps}")
        hb, wb = h // (2 * ps), w // (2 * ps)
        x = frames.reshape(b, f, c, hb, 2, ps, wb, 2, ps)
        # -> (b, f, hb, wb, 2(row), 2(col), c, ps, ps)
        x = x.transpose(0, 1, 3, 6, 4, 7, 2, 5, 8)
        return x.reshape(b, f, hb * wb, 4, c * ps * ps)

    def forward(self, frames) -> VisualTokens:
        pixels = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        single = pixels.ndim == 4
        if single:
            pixels = pixels[None]
        if pixels.ndim != 5 or pixels.shape[2] != 3:
            raise ShapeError(f"expected (F, 3, H, W) or (B, F, 3, H, W) frames, got {pixels.shape}")
        blocks = self.group_patches(pixels)
        b, f, p = blocks.shape[:3]
        emb = self.embed(Tensor(blocks.astype(self.embed.weight.dtype, copy=False)))
        tokens = self.proj(emb.reshape(b, f, p, -1))
        return VisualTokens(tokens, num_frames=f, patches_per_frame=p)


def embed_frames(frames, embedder: PatchEmbedder) -> VisualTokens:
    return embedder(frames)


class SpatialTemporalAttention(Module):
    """Two independent self-attention passes over the same tokens, one per mask."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.spatial = MultiHeadAttention(dim, heads, rng)
        self.temporal = MultiHeadAttention(dim, heads, rng)

    def forward(self, v: VisualTokens) -> tuple[Tensor, Tensor]:
        x = v.flat()
        return self.spatial(x, v.spatial_mask), self.temporal(x, v.temporal_mask)

    def sequential(self, v: VisualTokens) -> Tensor:
        """Spatial then temporal attention in series (the factorised baseline)."""
        x = v.flat()
        x = x + self.spatial(x, v.spatial_mask)
        return x + self.temporal(x, v.temporal_mask)


def pre_attention(v: VisualTokens, params: SpatialTemporalAttention) -> tuple[Tensor, Tensor]:
    return params(v)
