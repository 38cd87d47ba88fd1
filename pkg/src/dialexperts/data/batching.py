"""Collation of samples into fixed-modality batches of frames and padded token ids."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import DataError
from .samples import DialogSample
from .visual import read_visual, sample_frame_indices
from .vocab import EOS, PAD, Vocabulary, tokenize


@dataclass
class Batch:
    ids: list[str]
    is_video: bool
    frames: np.ndarray  # (B, F, 3, H, W); F = 1 for images
    cap_ids: np.ndarray
    cap_valid: np.ndarray
    ctx_ids: np.ndarray | None
    ctx_valid: np.ndarray | None
    ans_ids: np.ndarray | None  # EOS-terminated, PAD-filled
    samples: list

    def __len__(self) -> int:
        return len(self.ids)


def pad_ids(rows: list[list[int]], min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists to the longest row; returns (ids, valid)."""
    width = max([min_len] + [len(r) for r in rows])
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
    return ids, ids != PAD


@lru_cache(maxsize=4096)
def _load_frames(path: str) -> np.ndarray:
    frames = read_visual(path)
    frames.setflags(write=False)
    return frames


def load_frames(sample, num_frames: int, image_size: int) -> np.ndarray:
    """Read a sample's payload and pick ``num_frames`` uniformly (one frame for images)."""
    path = sample.visual_path()
    frames = _load_frames(str(path))
    if frames.shape[1] != 3 or frames.shape[2:] != (image_size, image_size):
        raise DataError(f"{path}: frames are {frames.shape[1:]}, expected (3, {image_size}, {image_size})")
    if not sample.is_video:
        return frames[:1]
    return frames[sample_frame_indices(frames.shape[0], num_frames)]


def collate(
    samples,
    vocab: Vocabulary,
    num_frames: int,
    image_size: int,
    max_text_len: int = 32,
    max_ctx_len: int = 96,
    max_answer_len: int = 16,
) -> Batch:
    if not samples:
        raise DataError("cannot collate an empty batch")
    kinds = {bool(s.is_video) for s in samples}
    if len(kinds) > 1:
        raise DataError("a batch cannot mix video and image samples")
    frames = np.stack([load_frames(s, num_frames, image_size) for s in samples])
    cap_ids, cap_valid = pad_ids([tokenize(s.caption, vocab)[:max_text_len] for s in samples])
    ctx_ids = ctx_valid = ans_ids = None
    if isinstance(samples[0], DialogSample):
        ctx = []
        for s in samples:
            ids = tokenize(s.context(max_ctx_len), vocab)
            ctx.append(ids[-max_ctx_len:])  # the current question alone may exceed the budget
        ctx_ids, ctx_valid = pad_ids(ctx)
        answers = [tokenize(s.answer, vocab)[: max_answer_len - 1] + [EOS] for s in samples]
        ans_ids, _ = pad_ids(answers)
    return Batch(
        ids=[s.id for s in samples],
        is_video=kinds.pop(),
        frames=frames,
        cap_ids=cap_ids,
        cap_valid=cap_valid,
        ctx_ids=ctx_ids,
        ctx_valid=ctx_valid,
        ans_ids=ans_ids,
        samples=list(samples),
    )


def batch_indices(
    is_video: list[bool], batch_size: int, seed: int | None = None, epoch: int = 0, min_size: int = 1
) -> list[list[int]]:
    """Split sample indices into single-modality groups of at most ``batch_size``.

    With a seed the order is a pure function of (seed, epoch). Video and image
    batches alternate while both kinds remain. Groups smaller than
    ``min_size`` are dropped.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(is_video))
    if seed is not None:
        order = np.random.default_rng([seed, epoch]).permutation(len(is_video))
    groups = []
    for kind in (True, False):
        members = [int(i) for i in order if is_video[i] == kind]
        chunks = [members[i : i + batch_size] for i in range(0, len(members), batch_size)]
        groups.append([c for c in chunks if len(c) >= min_size])
    out = []
    for pair in _interleave(*groups):
        out.extend(pair)
    return out


def _interleave(*lists):
    for i in range(max((len(x) for x in lists), default=0)):
        yield [x[i] for x in lists if i < len(x)]


def make_batches(
    samples,
    batch_size: int,
    num_frames: int,
    image_size: int,
    vocab: Vocabulary,
    seed: int | None = None,
    epoch: int = 0,
    contrastive: bool = False,
    **limits,
) -> list[Batch]:
    """Batches over ``samples``; in contrastive mode batches of one are rejected."""
    if contrastive and batch_size < 2:
        raise ValueError("contrastive training needs batch_size >= 2")
    groups = batch_indices([s.is_video for s in samples], batch_size, seed, epoch, 2 if contrastive else 1)
    return [collate([samples[i] for i in g], vocab, num_frames, image_size, **limits) for g in groups]
