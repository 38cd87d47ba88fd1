import json
import time
from pathlib import Path

import numpy as np
import pytest

from dialexperts.data import KINDS, default_vocab, load_jsonl, make_batches, synth_corpus
from dialexperts.model import DialModel, ModelConfig
from dialexperts.pipeline import RunConfig, run_stage
from dialexperts.pipeline.evaluate import generate_answers

ROOT = Path(__file__).resolve().parents[1]
SMOKE_CONFIG = ROOT / "configs" / "smoke.json"


ACCEPTANCE_LINES: list[str] = []


def report(name: str, ok: bool, detail: str = "") -> None:
    """One pass/fail line per acceptance criterion; repeated in the terminal summary."""
    line = f"[ACCEPTANCE] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    for kind in KINDS:
        synth_corpus(0, 32, kind, root / kind)
    return root


@pytest.fixture(scope="session")
def vocab():
    return default_vocab()


def tiny_config(vocab_size: int, **kw) -> ModelConfig:
    base = dict(N=2, L=1, D=16, heads=2, num_frames=2, patch_dim=8, proj_dim=8, lm_dim=16, lm_heads=2,
                lm_enc_layers=1, lm_dec_layers=1, max_text_len=16, max_ctx_len=32, max_answer_len=12)
    base.update(kw)
    return ModelConfig(vocab_size=vocab_size, **base)


@pytest.fixture
def tiny_model(vocab):
    return DialModel(tiny_config(len(vocab)), np.random.default_rng(0))


def batches_for(samples, vocab, cfg: ModelConfig, batch_size=4, **kw):
    return make_batches(samples, batch_size, cfg.num_frames, cfg.image_size, vocab,
                        max_text_len=cfg.max_text_len, max_ctx_len=cfg.max_ctx_len,
                        max_answer_len=cfg.max_answer_len, **kw)


def smoke_config(corpus: Path, out_dir: Path) -> RunConfig:
    values = json.loads(SMOKE_CONFIG.read_text())
    for key, value in list(values.items()):
        if key.startswith("data."):
            kind = Path(value).parent.name
            values[key] = str(corpus / kind / "samples.jsonl")
    values["out_dir"] = str(out_dir)
    return RunConfig(values)


@pytest.fixture(scope="session")
def overfit_run(corpus_dir, tmp_path_factory):
    """The three-stage pipeline on the 32-sample synthetic corpus, run once per session."""
    from dialexperts.pipeline.evaluate import load_model

    cfg = smoke_config(corpus_dir, tmp_path_factory.mktemp("smoke"))
    t0 = time.perf_counter()
    results = [run_stage(s, cfg) for s in (1, 2, 3)]
    elapsed = time.perf_counter() - t0
    model, vocab, _ = load_model(results[-1].checkpoint)
    samples = load_jsonl(cfg.path("data.stage3.train"), "dialog")
    correct = total = 0
    for b in batches_for(samples, vocab, model.cfg, batch_size=16):
        c, n = model.teacher_forced_accuracy(b, 3)
        correct += c
        total += n
    preds = generate_answers(model, samples, vocab)
    exact = sum(preds[s.id] == vocab.decode(vocab.encode(s.answer)) for s in samples)
    return {
        "cfg": cfg, "results": results, "elapsed": elapsed, "model": model, "vocab": vocab,
        "samples": samples, "tf_acc": correct / total, "exact": exact, "preds": preds,
    }
