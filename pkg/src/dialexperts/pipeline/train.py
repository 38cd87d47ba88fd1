"""Stage training loop with warm-up schedule, early stopping, checkpoints and resume."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..data import Batch, Vocabulary, default_vocab, load_jsonl, make_batches
from ..errors import ConfigError, DataError
from ..generator import set_stage
from ..model import DialModel
from ..numerics import AdamW, no_grad
from ..plotting import plot_history
from .checkpoint import Checkpoint, load_checkpoint, read_checkpoint, save_checkpoint
from .config import RunConfig
from .schedule import lr_at, warmup_steps_for

log = logging.getLogger(__name__)

SCHEMA_FOR_STAGE = {1: "caption", 2: "dialog", 3: "dialog"}


@dataclass
class StageResult:
    stage: int
    out_dir: Path
    best: Path | None
    last: Path
    history: list[dict] = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False
    finished: bool = True

    @property
    def checkpoint(self) -> Path:
        return self.best or self.last


def load_vocab(cfg: RunConfig, data_path: Path | None = None) -> Vocabulary:
    """The configured vocabulary, else one stored next to the data, else the synthetic lexicon."""
    path = cfg.path("vocab")
    if path is None and data_path is not None and (data_path.parent / "vocab.json").exists():
        path = data_path.parent / "vocab.json"
    if path is None:
        return default_vocab()
    try:
        return Vocabulary.load(path)
    except FileNotFoundError:
        raise ConfigError(f"{path}: vocabulary file not found") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None


def build_model(cfg: RunConfig, vocab: Vocabulary) -> DialModel:
    return DialModel(cfg.model_config(len(vocab)), np.random.default_rng([cfg["seed"], 0]))


def stage_dir(cfg: RunConfig, stage: int) -> Path:
    return cfg.path("out_dir") / f"stage{stage}"


def prerequisite(cfg: RunConfig, stage: int) -> Path | None:
    """Checkpoint a stage starts from, or None when it legitimately starts from scratch."""
    if stage == 1:
        return None
    prev = stage - 1
    if stage == 3 and cfg["train.skip_stage2"]:
        prev = 1
    if prev == 1 and cfg["train.skip_stage1"]:
        return None
    for name in ("best", "last"):
        p = stage_dir(cfg, prev) / name
        if (p / "manifest.json").exists():
            return p
    raise ConfigError(
        f"stage {stage} needs a stage-{prev} checkpoint under {stage_dir(cfg, prev)}; "
        "train that stage first or pass --from-scratch"
    )


def batch_loss(model: DialModel, batch: Batch, stage: int, cfg: RunConfig, rng: np.random.Generator):
    if stage == 1:
        out = model.stage1_losses(batch, rng, cfg.stage1_losses())
        return out.loss, out.parts
    loss = model.generation_loss(batch, stage)
    parts = {"gen": float(loss.data)}
    if cfg["losses.aux_in_generation"]:
        aux = model.stage1_losses(batch, rng, cfg.stage1_losses())
        loss = loss + aux.loss
        parts.update(aux.parts)
    return loss, parts


def validate(model: DialModel, batches: list[Batch], stage: int, cfg: RunConfig) -> dict:
    """Mean validation loss (and teacher-forced accuracy for generative stages)."""
    rng = np.random.default_rng([cfg["seed"], stage, 10**9])
    total = count = correct = tokens = 0
    with no_grad():
        for b in batches:
            loss, _ = batch_loss(model, b, stage, cfg, rng)
            total += float(loss.data) * len(b)
            count += len(b)
            if stage > 1:
                c, n = model.teacher_forced_accuracy(b, stage)
                correct += c
                tokens += n
    out = {"val_loss": total / count}
    if stage > 1:
        out["val_acc"] = correct / tokens
    return out


def load_samples(path: Path | None, stage: int, what: str):
    if path is None:
        return None
    samples = load_jsonl(path, SCHEMA_FOR_STAGE[stage])
    if not samples:
        raise DataError(f"{path}: no samples for {what}")
    return samples


def sample_batches(samples, cfg: RunConfig, vocab: Vocabulary, stage: int) -> Callable[[int], list[Batch]]:
    mc = cfg.model_config(len(vocab))
    limits = dict(max_text_len=mc.max_text_len, max_ctx_len=mc.max_ctx_len, max_answer_len=mc.max_answer_len)

    def batches(epoch: int, seed: int | None = cfg["seed"]) -> list[Batch]:
        return make_batches(
            samples, cfg["optim.batch_size"], mc.num_frames, mc.image_size, vocab,
            seed=seed, epoch=epoch, contrastive=stage == 1, **limits,
        )

    return batches


def run_stage(
    stage: int,
    cfg: RunConfig,
    resume: str | Path | None = None,
    from_scratch: bool = False,
    stop_at_step: int | None = None,
) -> StageResult:
    """Train one stage from its configured data, starting from the previous stage's checkpoint."""
    if stage not in (1, 2, 3):
        raise ConfigError(f"invalid stage {stage!r}; expected 1, 2 or 3")
    train_path = cfg.path(f"data.stage{stage}.train")
    if train_path is None:
        raise ConfigError(f"data.stage{stage}.train is not set")
    vocab = load_vocab(cfg, train_path)
    train = load_samples(train_path, stage, "training")
    val = load_samples(cfg.path(f"data.stage{stage}.val"), stage, "validation")
    model = build_model(cfg, vocab)
    init = None if (from_scratch or resume) else prerequisite(cfg, stage)
    val_fn = sample_batches(val, cfg, vocab, stage) if val else None
    return train_loop(
        model, stage, cfg, vocab,
        train_batches=sample_batches(train, cfg, vocab, stage),
        val_batches=val_fn(0, None) if val_fn else None,
        out_dir=stage_dir(cfg, stage),
        init=init, resume=resume, stop_at_step=stop_at_step,
    )


def train_loop(
    model: DialModel,
    stage: int,
    cfg: RunConfig,
    vocab: Vocabulary,
    train_batches: Callable[[int], list[Batch]],
    val_batches: list[Batch] | None,
    out_dir: Path,
    init: str | Path | None = None,
    resume: str | Path | None = None,
    stop_at_step: int | None = None,
    max_epochs: int | None = None,
) -> StageResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.json")
    params = set_stage(model, stage)
    opt = AdamW(params, lr=cfg["optim.base_lr"], weight_decay=cfg["optim.weight_decay"], clip_norm=cfg["optim.clip"])
    max_epochs = max_epochs or cfg[f"stage{stage}.max_epochs"]
    early_stop = cfg[f"stage{stage}.early_stop"] and val_batches is not None
    per_epoch = len(train_batches(0))
    if per_epoch == 0:
        raise DataError(f"stage {stage}: no training batches (need at least 2 samples of one modality)")
    total = max_epochs * per_epoch
    warmup = warmup_steps_for(total, cfg["optim.warmup_frac"])

    state = {"epoch": 0, "batch": 0, "step": 0, "history": [], "best_val": None, "bad_epochs": 0,
             "stopped_early": False, "sums": {}, "seen": 0}
    if resume is not None:
        ckpt = read_checkpoint(resume)
        if ckpt.stage != stage:
            raise ConfigError(f"{resume}: checkpoint is from stage {ckpt.stage}, not {stage}")
        load_checkpoint(ckpt, model, opt)
        state.update(ckpt.manifest["train_state"])
    elif init is not None:
        load_checkpoint(init, model)
        log.info("stage %d starts from %s", stage, init)

    def save(name: str) -> Checkpoint:
        extra = {"train_state": dict(state), "vocab_size": len(vocab)}
        ckpt = save_checkpoint(out_dir / name, model, opt, cfg.values, cfg.hash(), stage, state["step"], extra)
        vocab.save(out_dir / name / "vocab.json")
        return ckpt

    best_path = out_dir / "best" if (out_dir / "best" / "manifest.json").exists() and resume else None
    t0 = time.perf_counter()
    while state["epoch"] < max_epochs and not state["stopped_early"]:
        epoch = state["epoch"]
        batches = train_batches(epoch)
        sums: dict[str, float] = state["sums"]
        for bi in range(state["batch"], len(batches)):
            if stop_at_step is not None and state["step"] >= stop_at_step:
                state["batch"] = bi
                save("last")
                return StageResult(stage, out_dir, best_path, out_dir / "last", state["history"], state["step"],
                                   finished=False)
            batch = batches[bi]
            rng = np.random.default_rng([cfg["seed"], stage, state["step"]])
            loss, parts = batch_loss(model, batch, stage, cfg, rng)
            opt.zero_grad()
            loss.backward()
            lr = lr_at(state["step"] + 1, warmup, total, cfg["optim.base_lr"], cfg["optim.min_lr"])
            opt.step(lr)
            state["step"] += 1
            state["seen"] += 1
            sums["train_loss"] = sums.get("train_loss", 0.0) + float(loss.data)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
        record = {"stage": stage, "epoch": epoch + 1, "step": state["step"], "lr": lr}
        record.update({k: v / max(state["seen"], 1) for k, v in sums.items()})
        if val_batches:
            record.update(validate(model, val_batches, stage, cfg))
        record["elapsed_s"] = round(time.perf_counter() - t0, 3)
        state["history"].append(record)
        state["epoch"] = epoch + 1
        state["batch"] = 0
        state["sums"], state["seen"] = {}, 0
        log.info("stage %d epoch %d: %s", stage, epoch + 1,
                 ", ".join(f"{k}={v:.4f}" for k, v in record.items() if isinstance(v, float)))
        if val_batches:
            v = record["val_loss"]
            if state["best_val"] is None or v < state["best_val"]:
                state["best_val"] = v
                state["bad_epochs"] = 0
                save("best")
                best_path = out_dir / "best"
            else:
                state["bad_epochs"] += 1
                if early_stop and state["bad_epochs"] >= cfg["early_stop.patience"]:
                    state["stopped_early"] = True
                    log.info("stage %d: early stop after epoch %d", stage, epoch + 1)
        save("last")
    write_history(out_dir, state["history"])
    return StageResult(stage, out_dir, best_path, out_dir / "last", state["history"], state["step"],
                       stopped_early=state["stopped_early"])


def write_history(out_dir: Path, history: list[dict]) -> None:
    with (out_dir / "history.jsonl").open("w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if history:
        plot_history(history, out_dir / "history.png")
