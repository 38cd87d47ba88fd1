import numpy as np
import pytest

from dialexperts.data import BOS, EOS, PAD, load_jsonl
from dialexperts.errors import ConfigError, ShapeError
from dialexperts.generator import (
    ToyLM,
    gen_loss,
    greedy_decode,
    prepare_answers,
    set_stage,
    shift_right,
    token_accuracy,
    truncations,
)
from dialexperts.numerics import AdamW, Tensor, no_grad

from conftest import batches_for


def small_lm(seed=0, vocab=12):
    lm = ToyLM(vocab, np.random.default_rng(seed), dim=8, heads=2, enc_layers=1, dec_layers=1,
               max_enc_len=8, max_dec_len=6)
    lm.assign_names()
    return lm


def memory_for(lm, seed=0):
    rng = np.random.default_rng(seed)
    valid = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], bool)
    with no_grad():
        return lm.encode(Tensor(rng.normal(size=(2, 4, 8)).astype(np.float32)), valid), valid


def test_shift_right():
    answers = np.array([[7, 8, EOS], [9, EOS, PAD]])
    assert shift_right(answers).tolist() == [[BOS, 7, 8], [BOS, 9, EOS]]


def test_prepare_answers_validation_and_truncation():
    with pytest.raises(ValueError):
        prepare_answers(np.array([[7, 8, PAD]]), 6)
    with pytest.raises(ValueError):
        prepare_answers(np.array([[7, PAD, 8, EOS]]), 6)
    with pytest.raises(ShapeError):
        prepare_answers(np.array([7, EOS]), 6)
    trimmed = prepare_answers(np.array([[7, EOS, PAD, PAD], [8, 9, EOS, PAD]]), 6)
    assert trimmed.shape == (2, 3)
    before = truncations.count
    cut = prepare_answers(np.array([[7, 8, 9, 10, EOS], [7, EOS, PAD, PAD, PAD]]), 3)
    assert cut.tolist() == [[7, 8, EOS], [7, EOS, PAD]]
    assert truncations.count == before + 1


def test_extra_padding_leaves_loss_identical():
    lm = small_lm()
    memory, valid = memory_for(lm)
    a = np.array([[7, 8, EOS], [9, EOS, PAD]])
    b = np.concatenate([a, np.full((2, 3), PAD)], axis=1)
    assert gen_loss(memory, valid, a, lm).item() == gen_loss(memory, valid, b, lm).item()


def test_greedy_matches_stepwise_argmax():
    lm = small_lm(3)
    memory, valid = memory_for(lm, 3)
    out = greedy_decode(memory, valid, lm, 5)
    for row in range(2):
        ids = [BOS]
        for _ in range(5):
            with no_grad():
                logits = lm.decode(memory[row:row + 1], valid[row:row + 1], np.array([ids])).data[0, -1]
            nxt = int(logits.argmax())
            if nxt == EOS:
                break
            ids.append(nxt)
        assert out[row] == ids[1:]
    with pytest.raises(ValueError):
        greedy_decode(memory, valid, lm, 0)


def test_overfit_single_answer():
    lm = small_lm(1)
    memory, valid = memory_for(lm, 1)
    answers = np.array([[7, 8, 9, EOS], [10, 11, EOS, PAD]])
    opt = AdamW(lm.parameters(), lr=1e-2, weight_decay=0.0)
    for _ in range(80):
        loss = gen_loss(memory, valid, answers, lm)
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert greedy_decode(memory, valid, lm, 6) == [[7, 8, 9], [10, 11]]
    _, logits, ans = gen_loss(memory, valid, answers, lm, return_logits=True)
    assert token_accuracy(logits.data, ans) == (7, 7)


def test_length_limits():
    lm = small_lm()
    with pytest.raises(ShapeError):
        lm.encode(Tensor(np.zeros((1, 9, 8), np.float32)), np.ones((1, 9), bool))
    with pytest.raises(ShapeError):
        lm.decode(Tensor(np.zeros((1, 2, 8), np.float32)), np.ones((1, 2), bool), np.zeros((1, 7), int))


def freeze_contract(model, batch, steps=100, lr=1e-3):
    """Run ``steps`` updates in stage 2 then one in stage 3; report whether LM weights moved."""
    lm_before = {n: p.data.copy() for n, p in model.lm.named_parameters()}
    coupling_before = model.coupling.linear.weight.data.copy()
    opt = AdamW(set_stage(model, 2), lr=lr)
    for _ in range(steps):
        loss = model.generation_loss(batch, 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
    frozen_ok = all(np.array_equal(p.data, lm_before[n]) for n, p in model.lm.named_parameters())
    coupling_moved = not np.array_equal(model.coupling.linear.weight.data, coupling_before)
    opt = AdamW(set_stage(model, 3), lr=lr)
    loss = model.generation_loss(batch, 3)
    opt.zero_grad()
    loss.backward()
    opt.step()
    moved = sum(not np.array_equal(p.data, lm_before[n]) for n, p in model.lm.named_parameters())
    return frozen_ok, coupling_moved, moved, len(lm_before)


def test_freeze_policy(corpus_dir, tiny_model, vocab):
    samples = load_jsonl(corpus_dir / "stage2" / "samples.jsonl", "dialog")
    batch = batches_for(samples, vocab, tiny_model.cfg)[0]
    frozen_ok, coupling_moved, moved, total = freeze_contract(tiny_model, batch, steps=3)
    assert frozen_ok and coupling_moved and moved > total // 2
    stage1 = set_stage(tiny_model, 1)
    assert not ({id(p) for p in stage1} & {id(p) for p in tiny_model.coupling.parameters()})
    with pytest.raises(ConfigError):
        set_stage(tiny_model, 4)
