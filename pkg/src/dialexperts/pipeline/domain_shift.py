"""Stage-3 fine-tuning across two dialog datasets: sequentially in either order, or jointly."""
from __future__ import annotations

import json
import logging
from pathlib import Path

from ..errors import ConfigError
from .config import RunConfig
from .evaluate import evaluate_samples, write_report
from .train import build_model, load_samples, load_vocab, prerequisite, sample_batches, train_loop

log = logging.getLogger(__name__)

PLANS = ("a-to-b", "b-to-a", "joint")


def alternate(fn_a, fn_b):
    """Batch stream taking one batch from each dataset in turn; leftovers go at the end."""

    def batches(epoch: int):
        a, b = fn_a(epoch), fn_b(epoch)
        out = []
        for i in range(max(len(a), len(b))):
            out += [x[i] for x in (a, b) if i < len(x)]
        return out

    return batches


def run_domain_shift(plan: str, cfg: RunConfig, from_scratch: bool = False) -> dict:
    if plan not in PLANS:
        raise ConfigError(f"unknown plan {plan!r}; choose from {PLANS}")
    paths = {d: cfg.path(f"data.domain_{d}.train") for d in ("a", "b")}
    if not all(paths.values()):
        raise ConfigError("domain shift needs data.domain_a.train and data.domain_b.train")
    vocab = load_vocab(cfg, paths["a"])
    train = {d: load_samples(p, 3, f"domain {d}") for d, p in paths.items()}
    val = {}
    for d in ("a", "b"):
        vp = cfg.path(f"data.domain_{d}.val")
        val[d] = load_samples(vp, 3, f"domain {d} validation") if vp else train[d]
    fns = {d: sample_batches(train[d], cfg, vocab, 3) for d in ("a", "b")}
    model = build_model(cfg, vocab)
    init = None if from_scratch else prerequisite(cfg, 3)
    out = cfg.path("out_dir") / "domain-shift" / plan
    if plan == "joint":
        phases = [("a+b", alternate(fns["a"], fns["b"]))]
    else:
        order = ("a", "b") if plan == "a-to-b" else ("b", "a")
        phases = [(d, fns[d]) for d in order]
    results = []
    for i, (name, fn) in enumerate(phases):
        val_fn = sample_batches(val[name], cfg, vocab, 3) if name in val else None
        res = train_loop(
            model, 3, cfg, vocab, fn, val_fn(0, None) if val_fn else None,
            out / f"phase{i + 1}-{name}", init=init if i == 0 else None,
        )
        results.append({"phase": i + 1, "data": name, "steps": res.steps, "history": res.history})
    report = {"plan": plan, "phases": results, "eval": {}}
    for d in ("a", "b"):
        rep, preds = evaluate_samples(model, vocab, val[d], "both")
        report["eval"][d] = rep
        write_report(rep, preds, out, f"eval-{d}")
    (out / "domain_shift.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
