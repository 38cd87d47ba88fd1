import numpy as np
import pytest

from dialexperts.errors import ConfigError, RoutingError, ShapeError
from dialexperts.experts import (
    FUSION,
    STREAMS,
    ExpertStack,
    ExpertStackConfig,
    ModalityBundle,
    available_streams,
    parse_swap,
    route_token_audit,
    swap_experts,
)
from dialexperts.numerics import Tensor, no_grad

PATTERNS = [(1, True), (1, False), (3, True), (3, False)]
LENGTHS = {"spa": 4, "tmp": 4, "cap": 3, "ctx": 5}


def make_bundle(stage, is_video, dim=8, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    streams = {s: Tensor(rng.normal(size=(batch, LENGTHS[s], dim)).astype(np.float32))
               for s in available_streams(stage, is_video)}
    return ModalityBundle(streams)


def check_routing(stage, is_video, N=4, L=3):
    """Exclusive per-stream expert assignment in layers <= L, fusion only above."""
    cfg = ExpertStackConfig(N=N, L=L, D=8, heads=2, ffn_multiplier=2)
    stack = ExpertStack(cfg, np.random.default_rng(1))
    bundle = make_bundle(stage, is_video)
    with no_grad():
        audit = route_token_audit(bundle, cfg, stack)
    present = bundle.order()
    assert [r.layer for r in audit] == list(range(1, N + 1))
    for route in audit[:L]:
        assert route.assignments == {s: s for s in present}
        calls = route.invocations
        assert sorted(c for c in calls if c != "vis") == sorted(present)
        assert calls.count("vis") == 1
        assert calls.count("tmp") == (1 if is_video else 0)
    for route in audit[L:]:
        assert set(route.assignments.values()) == {FUSION}
        assert route.invocations == [FUSION]
    return audit


@pytest.mark.parametrize("stage,is_video", PATTERNS)
def test_routing_patterns(stage, is_video):
    check_routing(stage, is_video)


def test_availability_table():
    assert available_streams(1, True) == ("spa", "tmp", "cap")
    assert available_streams(2, True) == STREAMS
    assert available_streams(3, False) == ("spa", "cap", "ctx")
    with pytest.raises(ConfigError):
        available_streams(2, False)


def test_output_shapes_and_cls():
    cfg = ExpertStackConfig(N=2, L=1, D=8, heads=2, ffn_multiplier=2)
    stack = ExpertStack(cfg, np.random.default_rng(0))
    out = stack(make_bundle(3, True))
    assert out.cls.shape == (2, 1, 8)
    assert {n: x.shape[1] for n, x in out.streams.items()} == LENGTHS


def test_swap_changes_output_and_is_involution():
    cfg = ExpertStackConfig(N=2, L=1, D=8, heads=2, ffn_multiplier=2)
    stack = ExpertStack(cfg, np.random.default_rng(0))
    bundle = make_bundle(3, True)
    swapped = swap_experts(cfg, parse_swap("spa:tmp,cap:ctx"))
    assert swapped.routing_map == {"spa": "tmp", "tmp": "spa", "cap": "ctx", "ctx": "cap"}
    assert swap_experts(swapped, [("spa", "tmp"), ("cap", "ctx")]).is_identity
    with no_grad():
        base = stack(bundle).cls.data
        alt = stack(bundle, routing_map=swapped.routing_map).cls.data
        audit = route_token_audit(bundle, swapped, stack)
    assert not np.allclose(base, alt)
    assert audit[0].assignments == swapped.routing_map


def test_swap_with_unavailable_stream_raises():
    cfg = ExpertStackConfig(N=2, L=1, D=8, heads=2, ffn_multiplier=2)
    stack = ExpertStack(cfg, np.random.default_rng(0))
    routing = swap_experts(cfg, [("spa", "tmp")]).routing_map
    with pytest.raises(RoutingError):
        stack(make_bundle(3, False), routing_map=routing)
    # a swap that only touches available streams is fine on images
    stack(make_bundle(3, False), routing_map=swap_experts(cfg, [("cap", "ctx")]).routing_map)


@pytest.mark.parametrize("spec", ["spa:spa", "spa:tmp,tmp:cap", "spa:foo", "spa-tmp"])
def test_bad_swaps(spec):
    with pytest.raises(ConfigError):
        swap_experts(ExpertStackConfig(), parse_swap(spec))


def test_config_validation():
    with pytest.raises(ConfigError):
        ExpertStackConfig(N=2, L=3)
    with pytest.raises(ConfigError):
        ExpertStackConfig(routing_map={"spa": "spa", "tmp": "spa", "cap": "cap", "ctx": "ctx"})


def test_no_experts_ablation_is_fusion_everywhere():
    cfg = ExpertStackConfig(N=3, L=2, D=8, heads=2, ffn_multiplier=2, use_experts=False)
    stack = ExpertStack(cfg, np.random.default_rng(0))
    audit = route_token_audit(make_bundle(1, True), cfg, stack)
    assert all(r.invocations == [FUSION] for r in audit)


def test_padding_does_not_leak():
    cfg = ExpertStackConfig(N=2, L=1, D=8, heads=2, ffn_multiplier=2)
    stack = ExpertStack(cfg, np.random.default_rng(0))
    bundle = make_bundle(1, True, batch=1)
    bundle.masks["cap"] = np.array([[True, True, False]])
    with no_grad():
        a = stack(bundle).cls.data
        bundle.streams["cap"].data[:, 2] += 5.0
        b = stack(bundle).cls.data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_bundle_validation():
    with pytest.raises(ShapeError):
        ModalityBundle({"audio": Tensor(np.zeros((1, 2, 8)))})
    stack = ExpertStack(ExpertStackConfig(N=1, L=1, D=8, heads=2), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        stack(ModalityBundle({"spa": Tensor(np.zeros((1, 2, 4)))}))
