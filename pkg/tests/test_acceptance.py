"""One test per primary acceptance criterion; each prints a single PASS/FAIL line."""
import math
import time

import numpy as np

from dialexperts.data import load_jsonl
from dialexperts.evaluation import BuiltinEmbedder, bleu, rank_candidates
from dialexperts.pipeline import SWAP_ROWS, evaluate_samples
from dialexperts.pipeline.schedule import lr_at, warmup_steps_for

from conftest import batches_for, report
from gradcases import ALL_CASES, TOL, run_case
from test_evaluation import HashProvider, duplicate_rank_hits, oracle_mismatches, self_match_scores
from test_experts import PATTERNS, check_routing
from test_generator import freeze_contract
from test_objectives import calibration_losses
from test_pipeline import checkpoint_round_trip
from test_vision import check_locality, check_mask_structure

SEEDS = range(5)


def test_gradient_suite():
    t0 = time.perf_counter()
    worst = {np.float32: 0.0, np.float64: 0.0}
    failures = []
    for name in ALL_CASES:
        for seed in SEEDS:
            for dtype in (np.float32, np.float64):
                err = run_case(name, seed, dtype).max_rel_err
                worst[dtype] = max(worst[dtype], err)
                if not err <= TOL[dtype]:
                    failures.append((name, seed, dtype.__name__, err))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    report("gradient suite", ok, f"{len(ALL_CASES)} cases x {len(SEEDS)} seeds; worst f32 {worst[np.float32]:.2e}, "
           f"f64 {worst[np.float64]:.2e}; {elapsed:.1f}s; failures {failures[:3]}")
    assert ok


def test_mask_structure():
    failures = []
    for F in range(1, 9):
        for P in range(1, 9):
            try:
                check_mask_structure(F, P)
                check_locality(F, P, seed=F * 8 + P)
            except AssertionError as exc:
                failures.append((F, P, str(exc)[:80]))
    report("mask structure", not failures, f"64 (F, P) pairs; failures {failures[:3]}")
    assert not failures


def test_routing_audit():
    failures = []
    for stage, is_video in PATTERNS:
        try:
            check_routing(stage, is_video)
        except AssertionError as exc:
            failures.append((stage, is_video, str(exc)[:80]))
    report("routing", not failures, f"{len(PATTERNS)} availability patterns; failures {failures}")
    assert not failures


def test_contrastive_calibration():
    rows = []
    ok = True
    for K in (2, 4, 8):
        res = calibration_losses(K)
        for name in ("STC", "VTC"):
            dev = abs(res["uniform"][name] - math.log(K))
            ortho = res["orthogonal"][name]
            ok &= dev <= 1e-6 and ortho <= 1e-3
            rows.append(f"{name}/K={K} |L-lnK|={dev:.1e} ortho={abs(ortho):.1e}")
    report("contrastive calibration", ok, "; ".join(rows))
    assert ok


def test_freeze_contract(corpus_dir, tiny_model, vocab):
    samples = load_jsonl(corpus_dir / "stage2" / "samples.jsonl", "dialog")
    batch = batches_for(samples, vocab, tiny_model.cfg)[0]
    frozen_ok, coupling_moved, moved, total = freeze_contract(tiny_model, batch, steps=100)
    ok = frozen_ok and coupling_moved and moved > 0
    report("freeze contract", ok, f"stage-2 LM bit-identical after 100 steps: {frozen_ok}; "
           f"coupling trained: {coupling_moved}; stage-3 moved {moved}/{total} LM tensors")
    assert ok


def test_overfit_smoke(overfit_run):
    r = overfit_run
    n = len(r["samples"])
    ok = r["tf_acc"] >= 0.95 and r["exact"] >= 30 and n == 32 and r["elapsed"] < 600
    report("overfit smoke", ok, f"teacher-forced acc {r['tf_acc']:.4f}; exact {r['exact']}/{n}; "
           f"3 stages in {r['elapsed']:.0f}s")
    assert ok


def test_metric_oracles(corpus_dir):
    checked, bad = oracle_mismatches()
    b1 = bleu("the cat".split(), ["the cat sat".split()], 1)
    scores = self_match_scores(load_jsonl(corpus_dir / "stage3-video" / "samples.jsonl", "dialog"))
    self_ok = all(abs(scores[k] - 1.0) <= 1e-12 for k in ("B-1", "B-2", "B-3", "B-4", "R"))
    cider_ok = abs(scores["C"] - 10.0) <= 1e-6
    ok = bad == 0 and abs(b1 - 0.6065) <= 1e-4 and self_ok and cider_ok
    report("metric oracles", ok, f"retrieval {checked - bad}/{checked} exact; BLEU-1 {b1:.5f}; "
           f"self-match B/R ok {self_ok}, CIDEr {scores['C']:.8f}")
    assert ok


def test_ranking_scheme(corpus_dir, tiny_model, vocab):
    samples = load_jsonl(corpus_dir / "stage3-video" / "samples.jsonl", "dialog")
    provider = BuiltinEmbedder(tiny_model.lm, vocab)
    hits = duplicate_rank_hits(provider, [samples[i % len(samples)].candidates for i in range(100)], seed=7)
    rng = np.random.default_rng(0)
    invariant = 0
    for s in samples:
        base = rank_candidates(s.answer, s.candidates, HashProvider())
        scaled = rank_candidates(s.answer, s.candidates, HashProvider(lambda n: rng.uniform(1e-3, 1e3, n)))
        invariant += np.array_equal(base.order, scaled.order)
    ok = hits == 100 and invariant == len(samples)
    report("ranking scheme", ok, f"duplicate at rank 1: {hits}/100; scale-invariant orders {invariant}/{len(samples)}")
    assert ok


def test_swap_direction(overfit_run):
    model, vocab, samples = overfit_run["model"], overfit_run["vocab"], overfit_run["samples"]
    base, _ = evaluate_samples(model, vocab, samples, "nlg")
    rows, ok = [], True
    for swap in SWAP_ROWS:
        rep, _ = evaluate_samples(model, vocab, samples, "nlg", swap=swap)
        worse = all(rep["nlg"][k] <= base["nlg"][k] + 1e-12 for k in base["nlg"])
        ok &= worse
        rows.append(f"{swap}: B-1 {rep['nlg']['B-1']:.3f} C {rep['nlg']['C']:.2f} ({'<=' if worse else '>'})")
    report("swap direction", ok, f"unswapped B-1 {base['nlg']['B-1']:.3f} C {base['nlg']['C']:.2f}; " + "; ".join(rows))
    assert ok


def test_schedule_and_checkpoint(tiny_model, tmp_path):
    rows, ok = [], True
    for total in (100, 1000, 7320):
        warmup = warmup_steps_for(total, 0.1)
        peak = lr_at(warmup, warmup, total, 1e-4, 5e-5)
        floor = lr_at(total, warmup, total, 1e-4, 5e-5)
        ok &= abs(peak - 1e-4) <= 1e-12 and abs(floor - 5e-5) <= 1e-12
        rows.append(f"total {total}: {peak:.3e} at warmup end, {floor:.3e} at run end")
    round_trip = checkpoint_round_trip(tiny_model, tmp_path / "ck")
    ok &= round_trip
    report("schedule fidelity", ok, "; ".join(rows) + f"; checkpoint bit-identical {round_trip}")
    assert ok
