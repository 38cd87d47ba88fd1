"""The full model: visual front end, expert stack, Stage-1 heads and the coupled toy LM."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data.batching import Batch
from .data.vocab import MASK, PAD, RESERVED
from .errors import ConfigError
from .experts import ExpertStack, ExpertStackConfig, ModalityBundle, available_streams
from .generator import CouplingLayer, ToyLM, gen_loss, greedy_decode, token_accuracy
from .numerics import Embedding, Linear, Module, Parameter, Tensor, concat, no_grad
from .objectives import (
    MLMHead,
    ProjectionHead,
    Temperature,
    mask_tokens,
    matching_loss,
    mlm_loss,
    sample_negatives,
    stc_loss,
    vtc_loss,
)
from .vision import PatchEmbedder, SpatialTemporalAttention

STAGE1_LOSSES = ("stc", "stm", "vtc", "vtm", "mlm")


@dataclass
class ModelConfig:
    vocab_size: int
    N: int = 4  # full scale: 12
    L: int = 3  # full scale: 9
    D: int = 64  # full scale: 1024
    heads: int = 4
    ffn_multiplier: int = 4
    num_frames: int = 4  # full scale: 4
    image_size: int = 56  # full scale: 224
    patch_size: int = 14  # full scale: 14
    patch_dim: int = 32
    proj_dim: int = 32  # full scale: 256
    lm_dim: int = 64  # full scale: 1024
    lm_heads: int = 4
    lm_enc_layers: int = 2
    lm_dec_layers: int = 2
    max_text_len: int = 32
    max_ctx_len: int = 96
    max_answer_len: int = 16
    use_experts: bool = True
    separate_spatial_temporal: bool = True

    def __post_init__(self):
        if self.vocab_size < 7:
            raise ConfigError("vocabulary too small")
        if self.image_size % (2 * self.patch_size):
            raise ConfigError(f"image_size {self.image_size} must be divisible by 2*patch_size")
        ExpertStackConfig(N=self.N, L=self.L, D=self.D, heads=self.heads)

    @property
    def patches_per_frame(self) -> int:
        return self.image_size**2 // (4 * self.patch_size**2)

    def stack_config(self) -> ExpertStackConfig:
        return ExpertStackConfig(
            N=self.N, L=self.L, D=self.D, heads=self.heads,
            ffn_multiplier=self.ffn_multiplier, use_experts=self.use_experts,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepOutput:
    loss: Tensor
    parts: dict[str, float] = field(default_factory=dict)


class DialModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.D
        self.embedder = PatchEmbedder(cfg.patch_size, d, rng, patch_dim=cfg.patch_dim)
        self.frame_pos = Parameter(rng.normal(0.0, 0.02, size=(cfg.num_frames, 1, d)))
        self.patch_pos = Parameter(rng.normal(0.0, 0.02, size=(1, cfg.patches_per_frame, d)))
        self.st_attn = SpatialTemporalAttention(d, cfg.heads, rng)
        self.tok_embed = Embedding(cfg.vocab_size, d, rng)
        self.text_pos = Parameter(rng.normal(0.0, 0.02, size=(max(cfg.max_text_len, cfg.max_ctx_len), d)))
        self.stack = ExpertStack(cfg.stack_config(), rng)
        self.proj = {name: ProjectionHead(d, cfg.proj_dim, rng) for name in ("spa", "tmp", "vis", "txt")}
        self.temperature = Temperature()
        self.stm_head = Linear(d, 2, rng)
        self.vtm_head = Linear(d, 2, rng)
        self.mlm_head = MLMHead(d, cfg.vocab_size, rng)
        self.coupling = CouplingLayer(d, cfg.lm_dim, rng)
        n_tokens = 1 + 2 * cfg.num_frames * cfg.patches_per_frame + cfg.max_text_len + cfg.max_ctx_len
        self.lm = ToyLM(
            cfg.vocab_size, rng, dim=cfg.lm_dim, heads=cfg.lm_heads,
            enc_layers=cfg.lm_enc_layers, dec_layers=cfg.lm_dec_layers,
            max_enc_len=n_tokens, max_dec_len=cfg.max_answer_len,
        )
        self.assign_names()

    # -- inputs ---------------------------------------------------------------------

    def visual_streams(self, frames: np.ndarray) -> dict[str, Tensor]:
        """Pixels (B, F, 3, H, W) → spatial and temporal token streams (B, F·P, D)."""
        v = self.embedder(frames)
        f = v.num_frames
        v.tokens = v.tokens + self.frame_pos[:f] + self.patch_pos
        if f == 1:
            # images: a single frame has no temporal stream
            return {"spa": self.st_attn.spatial(v.flat(), v.spatial_mask) + v.flat()}
        if not self.cfg.separate_spatial_temporal:
            return {"spa": self.st_attn.sequential(v)}
        x = v.flat()
        spa, tmp = self.st_attn(v)
        return {"spa": x + spa, "tmp": x + tmp}

    def text_stream(self, ids: np.ndarray) -> Tensor:
        return self.tok_embed(ids) + self.text_pos[: ids.shape[1]]

    def bundle(self, batch: Batch, stage: int) -> ModalityBundle:
        allowed = available_streams(stage, batch.is_video)
        streams = self.visual_streams(batch.frames)
        masks = {}
        if "cap" in allowed:
            streams["cap"] = self.text_stream(batch.cap_ids)
            masks["cap"] = batch.cap_valid
        if "ctx" in allowed:
            if batch.ctx_ids is None:
                raise ConfigError(f"stage {stage} needs dialog samples with a context")
            streams["ctx"] = self.text_stream(batch.ctx_ids)
            masks["ctx"] = batch.ctx_valid
        return ModalityBundle(streams, masks)

    # -- stage 1 --------------------------------------------------------------------

    def stage1_losses(
        self,
        batch: Batch,
        rng: np.random.Generator,
        losses=STAGE1_LOSSES,
    ) -> StepOutput:
        """Sum of the enabled Stage-1 objectives on one batch.

        The positive pass supplies contrastive features and positive matching
        states; negatives and the masked-caption copy share one extra pass.
        """
        unknown = set(losses) - set(STAGE1_LOSSES)
        if unknown:
            raise ConfigError(f"unknown Stage-1 losses {sorted(unknown)}")
        k = len(batch)
        clean = self.bundle(batch, 1)
        has_tmp = "tmp" in clean.streams
        active = [n for n in STAGE1_LOSSES if n in losses and (has_tmp or n not in ("stc", "stm"))]
        if not active:
            raise ConfigError("no Stage-1 loss is active for this batch")
        out = self.stack(clean)
        parts: dict[str, Tensor] = {}
        vis_names = ["spa", "tmp"] if has_tmp else ["spa"]
        cap_valid = batch.cap_valid
        if "stc" in active:
            parts["stc"] = stc_loss(
                out.streams["spa"], out.streams["tmp"], self.proj["spa"], self.proj["tmp"], self.temperature
            )
        if "vtc" in active:
            vis = concat([out.streams[n] for n in vis_names], axis=1)
            parts["vtc"] = vtc_loss(
                vis, out.streams["cap"], self.proj["vis"], self.proj["txt"], self.temperature,
                cap_valid=cap_valid,
            )

        # second pass: [STM negatives | VTM negatives | masked captions]
        partner = sample_negatives(k, rng)
        own = np.arange(k)
        rows: dict[str, list[np.ndarray]] = {n: [] for n in ("spa", "tmp", "cap")}
        blocks = []
        if "stm" in active:
            flip = own % 2 == 1
            rows["spa"].append(np.where(flip, partner, own))
            rows["tmp"].append(np.where(flip, own, partner))
            rows["cap"].append(own)
            blocks.append("stm")
        if "vtm" in active:
            rows["spa"].append(own)
            rows["tmp"].append(own)
            rows["cap"].append(partner)
            blocks.append("vtm")
        cap_ids = [batch.cap_ids[r] for r in rows["cap"]]
        if "mlm" in active:
            corrupted, positions, _ = mask_tokens(
                batch.cap_ids, batch.cap_valid, rng, MASK, self.cfg.vocab_size, len(RESERVED)
            )
            rows["spa"].append(own)
            rows["tmp"].append(own)
            cap_ids.append(corrupted)
            blocks.append("mlm")
        if blocks:
            spa_idx = np.concatenate(rows["spa"])
            streams = {"spa": clean.streams["spa"][spa_idx]}
            if has_tmp:
                streams["tmp"] = clean.streams["tmp"][np.concatenate(rows["tmp"])]
            ids = np.concatenate(cap_ids)
            streams["cap"] = self.text_stream(ids)
            mixed = self.stack(ModalityBundle(streams, {"cap": ids != PAD}))
            pos_cls = out.cls[:, 0]
            for i, name in enumerate(blocks):
                lo, hi = i * k, (i + 1) * k
                if name == "mlm":
                    targets = batch.cap_ids
                    parts["mlm"] = mlm_loss(mixed.streams["cap"][lo:hi], targets, positions, self.mlm_head)
                else:
                    head = self.stm_head if name == "stm" else self.vtm_head
                    parts[name] = matching_loss(pos_cls, mixed.cls[lo:hi, 0], head)
        total = None
        for name in active:
            total = parts[name] if total is None else total + parts[name]
        return StepOutput(total, {n: float(v.data) for n, v in parts.items()})

    # -- stages 2 and 3 -------------------------------------------------------------

    def encode(self, batch: Batch, stage: int, routing_map: dict[str, str] | None = None):
        """Expert stack → coupling → LM encoder. Returns (memory, memory_valid)."""
        out = self.stack(self.bundle(batch, stage), routing_map=routing_map)
        order = out.order()
        x = concat([out.cls] + [out.streams[n] for n in order], axis=1)
        valid = np.concatenate([np.ones((len(batch), 1), bool)] + [out.masks[n] for n in order], axis=1)
        return self.lm.encode(self.coupling(x), valid), valid

    def generation_loss(self, batch: Batch, stage: int, return_logits: bool = False):
        if batch.ans_ids is None:
            raise ConfigError("generation needs dialog samples with answers")
        memory, valid = self.encode(batch, stage)
        return gen_loss(memory, valid, batch.ans_ids, self.lm, return_logits=return_logits)

    def teacher_forced_accuracy(self, batch: Batch, stage: int) -> tuple[int, int]:
        with no_grad():
            _, logits, answers = self.generation_loss(batch, stage, return_logits=True)
        return token_accuracy(logits.data, answers)

    def generate(
        self, batch: Batch, stage: int, max_len: int | None = None, routing_map: dict[str, str] | None = None
    ) -> list[list[int]]:
        with no_grad():
            memory, valid = self.encode(batch, stage, routing_map=routing_map)
            return greedy_decode(memory, valid, self.lm, max_len or self.cfg.max_answer_len)

