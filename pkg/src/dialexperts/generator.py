"""Toy encoder-decoder language model and its coupling to the expert stack.

The coupled expert-stack states are the encoder's input sequence. The decoder
reads ``[BOS, a_1, ..., a_{T-1}]`` and is trained to emit ``[a_1, ..., EOS]``.
"""
from __future__ import annotations

import logging

import numpy as np

from .data.vocab import BOS, EOS, PAD
from .attention import MultiHeadAttention, causal_mask, key_padding_mask
from .errors import ConfigError, ShapeError
from .numerics import (
    Embedding,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    Tensor,
    cross_entropy,
    gelu,
    no_grad,
)

log = logging.getLogger(__name__)


class FeedForward(Module):
    def __init__(self, dim: int, rng: np.random.Generator, multiplier: int = 4):
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, multiplier * dim, rng)
        self.fc2 = Linear(multiplier * dim, dim, rng, std=(multiplier * dim) ** -0.5 * 0.5)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(self.norm(x))))


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ffn = FeedForward(dim, rng)

    def forward(self, x: Tensor, mask) -> Tensor:
        x = x + self.attn(x, mask)
        return x + self.ffn(x)


class DecoderLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.ffn = FeedForward(dim, rng)

    def forward(self, x: Tensor, self_mask, memory: Tensor, memory_mask) -> Tensor:
        x = x + self.self_attn(x, self_mask)
        x = x + self.cross_attn(x, memory_mask, context=memory)
        return x + self.ffn(x)


class ToyLM(Module):
    """Small pre-norm transformer encoder-decoder with a shared token embedding."""

    def __init__(
        self,
        vocab_size: int,
        rng: np.random.Generator,
        dim: int = 64,  # full scale: 1024 (Flan-T5 large)
        heads: int = 4,
        enc_layers: int = 2,
        dec_layers: int = 2,
        max_enc_len: int = 256,
        max_dec_len: int = 32,
    ):
        self.dim = dim
        self.vocab_size = vocab_size
        self.max_enc_len = max_enc_len
        self.max_dec_len = max_dec_len
        self.embed = Embedding(vocab_size, dim, rng)
        self.enc_pos = Parameter(rng.normal(0.0, 0.02, size=(max_enc_len, dim)))
        self.dec_pos = Parameter(rng.normal(0.0, 0.02, size=(max_dec_len, dim)))
        self.encoder = [EncoderLayer(dim, heads, rng) for _ in range(enc_layers)]
        self.decoder = [DecoderLayer(dim, heads, rng) for _ in range(dec_layers)]
        self.enc_norm = LayerNorm(dim)
        self.dec_norm = LayerNorm(dim)
        self.head = Linear(dim, vocab_size, rng, std=0.02)  # vocabulary projection

    def encode(self, x: Tensor, valid: np.ndarray) -> Tensor:
        t = x.shape[1]
        if t > self.max_enc_len:
            raise ShapeError(f"encoder input length {t} exceeds {self.max_enc_len}")
        x = x + self.enc_pos[:t]
        mask = key_padding_mask(valid)
        for layer in self.encoder:
            x = layer(x, mask)
        return self.enc_norm(x)

    def decode(self, memory: Tensor, memory_valid: np.ndarray, dec_ids: np.ndarray) -> Tensor:
        """Vocabulary logits (B, T, V) for decoder input ids (B, T)."""
        t = dec_ids.shape[1]
        if t > self.max_dec_len:
            raise ShapeError(f"decoder length {t} exceeds {self.max_dec_len}")
        x = self.embed(dec_ids) + self.dec_pos[:t]
        self_mask = causal_mask(t)
        memory_mask = key_padding_mask(memory_valid)
        for layer in self.decoder:
            x = layer(x, self_mask, memory, memory_mask)
        return self.head(self.dec_norm(x))

    def embed_text(self, ids: np.ndarray, valid: np.ndarray) -> Tensor:
        """Encoder states for plain token sequences (used by the built-in sentence embedder)."""
        return self.encode(self.embed(ids), valid)


class CouplingLayer(Module):
    """Linear map from expert-stack width D to the LM width."""

    def __init__(self, dim: int, lm_dim: int, rng: np.random.Generator):
        self.linear = Linear(dim, lm_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.linear(x)


class TruncationCounter:
    def __init__(self):
        self.count = 0


truncations = TruncationCounter()


def prepare_answers(answers: np.ndarray, max_len: int) -> np.ndarray:
    """Validate answer ids (B, T), drop padding columns past the last EOS, truncate to max_len."""
    answers = np.asarray(answers, dtype=np.int64)
    if answers.ndim != 2:
        raise ShapeError(f"answers must be (B, T), got {answers.shape}")
    lengths = (answers != PAD).sum(axis=1)
    if (lengths == 0).any():
        raise ValueError("empty answer")
    for row, n in zip(answers, lengths):
        if row[n - 1] != EOS or (row[:n] == PAD).any():
            raise ValueError("answers must be contiguous and terminated by EOS")
    answers = answers[:, : int(lengths.max())]
    if answers.shape[1] > max_len:
        over = int((lengths > max_len).sum())
        truncations.count += over
        log.warning("truncated %d answer(s) to %d tokens", over, max_len)
        answers = answers[:, :max_len].copy()
        cut = lengths > max_len
        answers[cut, -1] = EOS
    return answers


def shift_right(answers: np.ndarray) -> np.ndarray:
    bos = np.full((answers.shape[0], 1), BOS, dtype=answers.dtype)
    shifted = np.concatenate([bos, answers[:, :-1]], axis=1)
    return np.where(shifted == PAD, PAD, shifted)


def teacher_forced_logits(memory: Tensor, memory_valid: np.ndarray, answers: np.ndarray, lm: ToyLM) -> Tensor:
    return lm.decode(memory, memory_valid, shift_right(answers))


def gen_loss(
    memory: Tensor,
    memory_valid: np.ndarray,
    answers: np.ndarray,
    lm: ToyLM,
    return_logits: bool = False,
):
    """Mean next-token cross-entropy over the answer tokens under teacher forcing.

    ``memory`` is the LM-encoder output for the coupled stack states.
    """
    answers = prepare_answers(answers, lm.max_dec_len)
    logits = teacher_forced_logits(memory, memory_valid, answers, lm)
    weights = (answers != PAD).astype(logits.dtype)
    loss = cross_entropy(logits, answers, weights=weights)
    return (loss, logits, answers) if return_logits else loss


def token_accuracy(logits: np.ndarray, answers: np.ndarray) -> tuple[int, int]:
    """(correct, total) argmax predictions over non-pad answer positions."""
    pred = np.asarray(logits).argmax(axis=-1)
    valid = answers != PAD
    return int(((pred == answers) & valid).sum()), int(valid.sum())


def greedy_decode(memory: Tensor, memory_valid: np.ndarray, lm: ToyLM, max_len: int) -> list[list[int]]:
    """Argmax decoding; ties go to the lowest token id. Returned lists exclude EOS."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    max_len = min(max_len, lm.max_dec_len)
    batch = memory.shape[0]
    ids = np.full((batch, 1), BOS, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    out: list[list[int]] = [[] for _ in range(batch)]
    with no_grad():
        for _ in range(max_len):
            logits = lm.decode(memory, memory_valid, ids).data[:, -1]
            nxt = logits.argmax(axis=-1)
            for b in range(batch):
                if done[b]:
                    continue
                if nxt[b] == EOS:
                    done[b] = True
                else:
                    out[b].append(int(nxt[b]))
            if done.all():
                break
            ids = np.concatenate([ids, np.where(done, PAD, nxt)[:, None]], axis=1)
    return out


def set_stage(model, stage: int) -> list[Parameter]:
    """Apply the freeze policy of a training stage; returns the parameters to optimise.

    Stage 1 leaves the LM and coupling out entirely, stage 2 freezes the LM,
    stage 3 trains everything.
    """
    if stage not in (1, 2, 3):
        raise ConfigError(f"invalid stage {stage!r}; expected 1, 2 or 3")
    model.freeze(False)
    lm_ids = {id(p) for p in model.lm.parameters()}
    coupling_ids = {id(p) for p in model.coupling.parameters()}
    if stage == 1:
        model.lm.freeze(True)
        model.coupling.freeze(True)
        return [p for p in model.parameters() if id(p) not in lm_ids | coupling_ids]
    if stage == 2:
        model.lm.freeze(True)
        return [p for p in model.parameters() if id(p) not in lm_ids]
    return model.parameters()
