"""Finite-difference cases: each builder returns (scalar closure, tensors to probe).

Builders create everything under the active default dtype so the same case
runs at 32 and 64 bits.
"""
import numpy as np

from dialexperts.attention import MultiHeadAttention, causal_mask
from dialexperts.experts import ExpertStack, ExpertStackConfig, ModalityBundle
from dialexperts.generator import CouplingLayer, ToyLM, gen_loss
from dialexperts.numerics import (
    Embedding,
    LayerNorm,
    Linear,
    Tensor,
    concat,
    cross_entropy,
    gelu,
    get_default_dtype,
    l2_normalize,
    layer_norm,
    log_softmax,
    masked_max,
    masked_softmax,
    stack,
)
from dialexperts.objectives import (
    MLMHead,
    ProjectionHead,
    Temperature,
    matching_loss,
    mlm_loss,
    stc_loss,
    vtc_loss,
)
from dialexperts.vision import PatchEmbedder, SpatialTemporalAttention

TOL = {np.float32: 1e-4, np.float64: 1e-6}
# finite-difference settings per precision: (eps, stencil order)
FD = {np.float32: (1e-6, 2), np.float64: (1e-4, 4)}
MAX_ELEMS = 12
# deep cases probe fewer coordinates per tensor to keep the suite fast
HEAVY = {"ExpertStack": 3, "GEN": 4, "SpatialTemporalAttention": 6}


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape).astype(get_default_dtype()), requires_grad=True)


def probe(out: Tensor, rng) -> Tensor:
    """Random linear functional of a tensor, so every output coordinate matters."""
    r = Tensor(rng.normal(size=out.shape).astype(get_default_dtype()))
    return (out * r).sum()


def named(module) -> list:
    """Parameters to probe. Key biases are left out: softmax is shift invariant, so their
    gradient is exactly zero and a relative error is meaningless (checked separately)."""
    module.assign_names()
    return [p for p in module.parameters() if not p.name.endswith("k.bias")]


def random_mask(rng, shape):
    m = rng.random(shape) < 0.6
    m[..., 0] |= ~m.any(axis=-1)
    return m


def case_tensor_ops(rng):
    a, b, c = leaf(rng, 3, 4), leaf(rng, 4, 5), leaf(rng, 5)
    pos = Tensor((np.abs(rng.normal(size=(3, 5))) + 0.5).astype(get_default_dtype()), requires_grad=True)

    def fn():
        x = (a @ b) * c + c / (pos + 1.0) - pos ** 1.5
        y = concat([x.exp().tanh(), pos.log(), pos.sqrt()], axis=1).reshape(5, 9).transpose(1, 0)
        z = stack([y[1:4].sum(axis=0), y.mean(axis=0), y.max(axis=0)], axis=0)
        return (z * z).sum() + (1.0 - x).mean()

    return fn, [a, b, c, pos]


def _with_probe(rng, make):
    seed = int(rng.integers(2**31))
    return lambda: probe(make(), np.random.default_rng(seed))


def case_masked_softmax(rng):
    x = leaf(rng, 2, 5, 6)
    mask = random_mask(rng, (2, 5, 6))
    return _with_probe(rng, lambda: masked_softmax(x, mask)), [x]


def case_log_softmax(rng):
    x = leaf(rng, 4, 7)
    return _with_probe(rng, lambda: log_softmax(x)), [x]


def case_layer_norm(rng):
    x, g, b = leaf(rng, 3, 4, 8), leaf(rng, 8), leaf(rng, 8)
    return _with_probe(rng, lambda: layer_norm(x, g, b)), [x, g, b]


def case_gelu(rng):
    x = leaf(rng, 5, 6, scale=2.0)
    return _with_probe(rng, lambda: gelu(x)), [x]


def case_cross_entropy(rng):
    x = leaf(rng, 6, 5)
    hard = rng.integers(0, 5, size=6)
    soft = rng.dirichlet(np.ones(5), size=6)
    w = rng.random(6)
    return (lambda: cross_entropy(x, hard) + cross_entropy(x, soft, weights=w)), [x]


def case_cross_entropy_probs(rng):
    logits = leaf(rng, 4, 3)
    soft = rng.dirichlet(np.ones(3), size=4)
    return (lambda: cross_entropy(log_softmax(logits).exp(), soft, from_probs=True)), [logits]


def case_masked_max(rng):
    # distinct values 0.1 apart keep the stencil away from the argmax kink
    grid = np.stack([rng.permutation(9) for _ in range(12)]).reshape(3, 4, 9) * 0.1
    x = Tensor((grid + rng.uniform(-0.01, 0.01, grid.shape)).astype(get_default_dtype()), requires_grad=True)
    mask = random_mask(rng, (3, 4, 9))
    return _with_probe(rng, lambda: masked_max(x, mask, axis=-1)), [x]


def case_l2_normalize(rng):
    x = leaf(rng, 4, 6)
    return _with_probe(rng, lambda: l2_normalize(x)), [x]


def case_linear(rng):
    lin = Linear(6, 4, rng)
    x = leaf(rng, 3, 6)
    return _with_probe(rng, lambda: lin(x)), [x] + named(lin)


def case_layernorm_module(rng):
    ln = LayerNorm(6)
    ln.gain.data = ln.gain.data + rng.normal(0, 0.1, 6).astype(ln.gain.dtype)
    x = leaf(rng, 2, 3, 6)
    return _with_probe(rng, lambda: ln(x)), [x] + named(ln)


def case_embedding(rng):
    emb = Embedding(9, 5, rng)
    ids = rng.integers(0, 9, size=(3, 4))
    return _with_probe(rng, lambda: emb(ids)), named(emb)


def case_self_attention(rng):
    attn = MultiHeadAttention(8, 2, rng)
    x = leaf(rng, 2, 5, 8)
    mask = random_mask(rng, (2, 1, 5, 5))
    return _with_probe(rng, lambda: attn(x, mask)), [x] + named(attn)


def case_cross_attention(rng):
    attn = MultiHeadAttention(8, 2, rng)
    x, ctx = leaf(rng, 2, 3, 8), leaf(rng, 2, 6, 8)
    return _with_probe(rng, lambda: attn(x, causal_mask(6)[None, None, :3], context=ctx)), [x, ctx] + named(attn)


def case_patch_embedder(rng):
    emb = PatchEmbedder(2, 8, rng, patch_dim=4)
    frames = rng.random((2, 3, 3, 4, 8)).astype(get_default_dtype())
    return _with_probe(rng, lambda: emb(frames).tokens), named(emb)


def case_spatial_temporal(rng):
    st = SpatialTemporalAttention(8, 2, rng)
    emb = PatchEmbedder(2, 8, rng, patch_dim=4)
    tokens = emb(rng.random((2, 3, 3, 4, 8)).astype(get_default_dtype()))
    tokens.tokens = leaf(rng, *tokens.tokens.shape)

    def fn():
        spa, tmp = st(tokens)
        r = np.random.default_rng(7)
        return probe(spa, r) + probe(tmp, r) + probe(st.sequential(tokens), r)

    return fn, [tokens.tokens] + named(st)


def _bundle(rng, video=True, with_ctx=True, dim=8):
    streams = {"spa": leaf(rng, 2, 4, dim), "cap": leaf(rng, 2, 3, dim)}
    if video:
        streams["tmp"] = leaf(rng, 2, 4, dim)
    if with_ctx:
        streams["ctx"] = leaf(rng, 2, 5, dim)
    masks = {"cap": np.array([[1, 1, 0], [1, 1, 1]], bool)}
    return ModalityBundle(streams, masks)


def case_expert_stack(rng):
    stack_ = ExpertStack(ExpertStackConfig(N=2, L=1, D=8, heads=2, ffn_multiplier=2), rng)
    bundle = _bundle(rng)

    def fn():
        out = stack_(bundle)
        r = np.random.default_rng(3)
        return probe(out.cls, r) + sum((probe(out.streams[n], r) for n in out.order()), Tensor(0.0))

    return fn, list(bundle.streams.values()) + named(stack_)


def case_coupling(rng):
    c = CouplingLayer(8, 6, rng)
    x = leaf(rng, 2, 3, 8)
    return _with_probe(rng, lambda: c(x)), [x] + named(c)


def case_projection(rng):
    p = ProjectionHead(8, 4, rng)
    x = leaf(rng, 3, 5, 8)
    return _with_probe(rng, lambda: p(x)), [x] + named(p)


# -- losses -------------------------------------------------------------------------


def case_stc(rng):
    hs, ht, tau = ProjectionHead(8, 4, rng), ProjectionHead(8, 4, rng), Temperature()
    spa, tmp = leaf(rng, 3, 4, 8), leaf(rng, 3, 4, 8)
    params = named(hs) + named(ht) + named(tau)
    return (lambda: stc_loss(spa, tmp, hs, ht, tau)), [spa, tmp] + params


def case_vtc(rng):
    hv, hc, tau = ProjectionHead(8, 4, rng), ProjectionHead(8, 4, rng), Temperature()
    vis, cap = leaf(rng, 3, 6, 8), leaf(rng, 3, 4, 8)
    cap_valid = random_mask(rng, (3, 4))
    params = named(hv) + named(hc) + named(tau)
    return (lambda: vtc_loss(vis, cap, hv, hc, tau, cap_valid=cap_valid)), [vis, cap] + params


def _matching(rng):
    head = Linear(8, 2, rng)
    pos, neg = leaf(rng, 4, 8), leaf(rng, 4, 8)
    return (lambda: matching_loss(pos, neg, head)), [pos, neg] + named(head)


def case_stm(rng):
    return _matching(rng)


def case_vtm(rng):
    return _matching(rng)


def case_mlm(rng):
    head = MLMHead(8, 11, rng)
    states = leaf(rng, 3, 5, 8)
    targets = rng.integers(6, 11, size=(3, 5))
    positions = random_mask(rng, (3, 5))
    return (lambda: mlm_loss(states, targets, positions, head)), [states] + named(head)


def case_gen(rng):
    lm = ToyLM(12, rng, dim=8, heads=2, enc_layers=1, dec_layers=1, max_enc_len=8, max_dec_len=6)
    coupling = CouplingLayer(8, 8, rng)
    states = leaf(rng, 2, 5, 8)
    valid = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]], bool)
    answers = np.array([[7, 8, 9, 3], [10, 3, 0, 0]])

    def fn():
        memory = lm.encode(coupling(states), valid)
        return gen_loss(memory, valid, answers, lm)

    return fn, [states] + named(coupling) + named(lm)


LAYER_CASES = {
    "tensor_ops": case_tensor_ops,
    "masked_softmax": case_masked_softmax,
    "log_softmax": case_log_softmax,
    "layer_norm": case_layer_norm,
    "gelu": case_gelu,
    "cross_entropy": case_cross_entropy,
    "cross_entropy_probs": case_cross_entropy_probs,
    "masked_max": case_masked_max,
    "l2_normalize": case_l2_normalize,
    "Linear": case_linear,
    "LayerNorm": case_layernorm_module,
    "Embedding": case_embedding,
    "self_attention": case_self_attention,
    "cross_attention": case_cross_attention,
    "PatchEmbedder": case_patch_embedder,
    "SpatialTemporalAttention": case_spatial_temporal,
    "ExpertStack": case_expert_stack,
    "CouplingLayer": case_coupling,
    "ProjectionHead": case_projection,
}

LOSS_CASES = {
    "STC": case_stc,
    "STM": case_stm,
    "VTC": case_vtc,
    "VTM": case_vtm,
    "MLM": case_mlm,
    "GEN": case_gen,
}

ALL_CASES = {**LAYER_CASES, **LOSS_CASES}


def run_case(name: str, seed: int, dtype):
    """Build case ``name`` for one random instance at ``dtype`` and check it."""
    from dialexperts.numerics import check_gradients, default_dtype

    eps, order = FD[dtype]
    with default_dtype(dtype):
        fn, tensors = ALL_CASES[name](np.random.default_rng([seed, 1]))
        return check_gradients(fn, tensors, eps=eps, order=order, max_elems=HEAVY.get(name, MAX_ELEMS), seed=seed)
