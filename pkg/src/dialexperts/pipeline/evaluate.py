"""Checkpoint evaluation: greedy answers, NLG and retrieval metrics, optional expert swaps."""
from __future__ import annotations

import json
import logging
from pathlib import Path

from ..data import Vocabulary, load_jsonl, make_batches
from ..errors import ConfigError, DataError, RoutingError
from ..evaluation import BuiltinEmbedder, RemoteEmbedder, format_table, nlg_scores, rank_candidates, retrieval_metrics
from ..experts import parse_swap, swap_experts
from ..model import DialModel
from ..plotting import plot_metrics, plot_swaps
from .checkpoint import load_checkpoint, read_checkpoint
from .config import RunConfig
from .train import build_model

log = logging.getLogger(__name__)

MODES = ("nlg", "retrieval", "both")

# the rows of the swap study: same-modality swaps, then cross-modality swaps
SWAP_ROWS = ("spa:tmp", "cap:ctx", "spa:cap,tmp:ctx", "spa:ctx,tmp:cap")


def load_model(ckpt_dir) -> tuple[DialModel, Vocabulary, RunConfig]:
    ckpt = read_checkpoint(ckpt_dir)
    cfg = RunConfig(ckpt.config)
    vocab_path = Path(ckpt_dir) / "vocab.json"
    if not vocab_path.exists():
        raise ConfigError(f"{ckpt_dir}: checkpoint has no vocab.json")
    vocab = Vocabulary.load(vocab_path)
    model = build_model(cfg, vocab)
    load_checkpoint(ckpt, model)
    return model, vocab, cfg


def make_provider(spec: str, model: DialModel, vocab: Vocabulary):
    if spec == "builtin":
        return BuiltinEmbedder(model.lm, vocab)
    if spec.startswith(("http://", "https://")):
        return RemoteEmbedder(spec)
    raise ConfigError(f"unknown embedder {spec!r}; use 'builtin' or an http(s) URL")


def generate_answers(model: DialModel, samples, vocab: Vocabulary, batch_size: int = 16, routing_map=None,
                     stage: int = 3) -> dict[str, str]:
    """Greedy answers keyed by sample id, in input order."""
    cfg = model.cfg
    out = {}
    for batch in make_batches(samples, batch_size, cfg.num_frames, cfg.image_size, vocab,
                              max_text_len=cfg.max_text_len, max_ctx_len=cfg.max_ctx_len,
                              max_answer_len=cfg.max_answer_len):
        for sid, ids in zip(batch.ids, model.generate(batch, stage, routing_map=routing_map)):
            out[sid] = vocab.decode(ids)
    return {s.id: out[s.id] for s in samples}


def evaluate_samples(
    model: DialModel,
    vocab: Vocabulary,
    samples,
    mode: str = "both",
    embedder: str = "builtin",
    swap: str | None = None,
) -> tuple[dict, dict[str, str]]:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    if not samples:
        raise DataError("no samples to evaluate")
    routing = swap_experts(model.stack.cfg, parse_swap(swap)).routing_map
    preds = generate_answers(model, samples, vocab, routing_map=routing)
    report: dict = {"num_samples": len(samples), "swap": swap or "none"}
    if mode in ("nlg", "both"):
        report["nlg"] = nlg_scores([preds[s.id] for s in samples], [[s.answer] for s in samples])
    if mode in ("retrieval", "both"):
        missing = [s.id for s in samples if s.candidates is None]
        if missing:
            if mode == "retrieval":
                raise DataError(f"retrieval mode needs candidates; missing for {missing[:5]}")
            log.warning("skipping retrieval metrics: %d sample(s) lack candidates", len(missing))
        else:
            provider = make_provider(embedder, model, vocab)
            ranked = [rank_candidates(preds[s.id], s.candidates, provider, s.gt_index, s.relevance) for s in samples]
            report["retrieval"] = retrieval_metrics(ranked)
    return report, preds


def write_report(report: dict, preds: dict[str, str], out_dir, name: str = "report") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with (out / f"{name}.predictions.jsonl").open("w", encoding="utf-8") as fh:
        for sid, text in preds.items():
            fh.write(json.dumps({"id": sid, "generated": text}) + "\n")
    flat = {**report.get("nlg", {}), **report.get("retrieval", {})}
    flat.pop("mean_rank", None)
    if flat:
        (out / f"{name}.txt").write_text(format_table(flat, f"swap: {report['swap']}"), encoding="utf-8")
        plot_metrics(flat, out / f"{name}.png", title=f"swap: {report['swap']}")
    return out / f"{name}.json"


def run_eval(
    ckpt,
    data,
    mode: str = "both",
    embedder: str = "builtin",
    swap: str | None = None,
    out_dir=None,
) -> dict:
    """Evaluate a checkpoint on a dialog JSONL file; writes report JSON, table, figure and predictions."""
    model, vocab, _ = load_model(ckpt)
    samples = load_jsonl(data, "dialog")
    report, preds = evaluate_samples(model, vocab, samples, mode, embedder, swap)
    report["data"] = Path(data).name
    if out_dir is not None:
        tag = "report" if not swap else "report.swap-" + swap.replace(":", "-").replace(",", "_")
        write_report(report, preds, out_dir, tag)
    return report


def run_swap_study(ckpt, data, out_dir, rows=SWAP_ROWS) -> dict[str, dict]:
    """NLG scores for the identity routing and each swap row; rows the data cannot route are skipped."""
    model, vocab, _ = load_model(ckpt)
    samples = load_jsonl(data, "dialog")
    scores = {}
    for swap in (None, *rows):
        try:
            report, _ = evaluate_samples(model, vocab, samples, "nlg", swap=swap)
        except RoutingError as exc:
            log.warning("swap %s skipped: %s", swap, exc)
            continue
        scores[swap or "none"] = report["nlg"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "swaps.json").write_text(json.dumps(scores, indent=2) + "\n", encoding="utf-8")
    plot_swaps(scores, out / "swaps.png")
    return scores
