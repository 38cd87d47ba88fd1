"""Multimodal expert layers with hard, per-stream routing.

Every layer starts with self-attention over the concatenation of all
available streams. In the first ``L`` layers each stream then goes through
its own feed-forward expert; the spatial and temporal outputs are joined
along the token axis and passed through the visual expert. The remaining
``N - L`` layers apply a single fusion expert to the whole sequence.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .attention import MultiHeadAttention, key_padding_mask
from .errors import ConfigError, RoutingError, ShapeError
from .numerics import LayerNorm, Linear, Module, Parameter, Tensor, concat, gelu

STREAMS = ("spa", "tmp", "cap", "ctx")
MODALITY_EXPERTS = ("spa", "tmp", "vis", "cap", "ctx")
FUSION = "fus"

# Which streams exist for (stage, is_video).
_AVAILABILITY = {
    (1, True): ("spa", "tmp", "cap"),
    (2, True): ("spa", "tmp", "cap", "ctx"),
    (3, True): ("spa", "tmp", "cap", "ctx"),
    (1, False): ("spa", "cap"),
    (3, False): ("spa", "cap", "ctx"),
}


def available_streams(stage: int, is_video: bool) -> tuple[str, ...]:
    try:
        return _AVAILABILITY[(stage, bool(is_video))]
    except KeyError:
        kind = "video" if is_video else "image"
        raise ConfigError(f"{kind} inputs are not used in stage {stage}") from None


@dataclass
class ModalityBundle:
    """Per-stream token features of shape (B, n, D) plus (B, n) validity masks."""

    streams: dict[str, Tensor]
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    cls: Tensor | None = None

    def __post_init__(self):
        unknown = set(self.streams) - set(STREAMS)
        if unknown:
            raise ShapeError(f"unknown streams {sorted(unknown)}")
        for name, x in self.streams.items():
            if name not in self.masks:
                self.masks[name] = np.ones(x.shape[:2], dtype=bool)

    @property
    def availability(self) -> dict[str, bool]:
        return {s: s in self.streams for s in STREAMS}

    def order(self) -> list[str]:
        return [s for s in STREAMS if s in self.streams]


@dataclass
class ExpertStackConfig:
    N: int = 4  # full scale: 12
    L: int = 3  # full scale: 9
    D: int = 64  # full scale: 1024
    heads: int = 4
    ffn_multiplier: int = 4
    routing_map: dict[str, str] = field(default_factory=lambda: {s: s for s in STREAMS})
    use_experts: bool = True

    def __post_init__(self):
        if not 1 <= self.L <= self.N:
            raise ConfigError(f"need 1 <= L <= N, got L={self.L}, N={self.N}")
        if set(self.routing_map) != set(STREAMS) or sorted(self.routing_map.values()) != sorted(STREAMS):
            raise ConfigError(f"routing map must be a bijection over {STREAMS}: {self.routing_map}")

    @property
    def is_identity(self) -> bool:
        return all(k == v for k, v in self.routing_map.items())


def swap_experts(cfg: ExpertStackConfig, pairs) -> ExpertStackConfig:
    """Return a config whose routing sends each pair's streams through each other's experts."""
    seen: set[str] = set()
    routing = dict(cfg.routing_map)
    for a, b in pairs:
        for s in (a, b):
            if s not in STREAMS:
                raise ConfigError(f"cannot swap unknown stream {s!r}")
            if s in seen:
                raise ConfigError(f"stream {s!r} appears in more than one swap pair")
            seen.add(s)
        if a == b:
            raise ConfigError(f"swap pair ({a}, {b}) is degenerate")
        routing[a], routing[b] = routing[b], routing[a]
    return dataclasses.replace(cfg, routing_map=routing)


def parse_swap(spec: str | None) -> list[tuple[str, str]]:
    """"spa:tmp,cap:ctx" → [("spa", "tmp"), ("cap", "ctx")]."""
    if not spec:
        return []
    pairs = []
    for chunk in spec.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 2:
            raise ConfigError(f"bad swap pair {chunk!r}; expected a:b")
        pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


class Expert(Module):
    """Two-layer GELU feed-forward block, applied with a residual by the caller."""

    def __init__(self, ident: str, dim: int, multiplier: int, rng: np.random.Generator):
        self.ident = ident
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, multiplier * dim, rng)
        self.fc2 = Linear(multiplier * dim, dim, rng, std=(multiplier * dim) ** -0.5 * 0.5)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(self.norm(x))))


class ExpertLayer(Module):
    def __init__(self, cfg: ExpertStackConfig, fusion: bool, rng: np.random.Generator):
        self.attn = MultiHeadAttention(cfg.D, cfg.heads, rng)
        names = (FUSION,) if fusion else MODALITY_EXPERTS
        self.experts = {n: Expert(n, cfg.D, cfg.ffn_multiplier, rng) for n in names}
        self.fusion = fusion


@dataclass
class LayerRoute:
    layer: int
    assignments: dict[str, str]
    invocations: list[str]


class ExpertStack(Module):
    def __init__(self, cfg: ExpertStackConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.cls_token = Parameter(rng.normal(0.0, 0.02, size=(1, 1, cfg.D)))
        self.type_embed = {s: Parameter(rng.normal(0.0, 0.02, size=(cfg.D,))) for s in ("cls",) + STREAMS}
        self.layers = [
            ExpertLayer(cfg, fusion=(i >= cfg.L or not cfg.use_experts), rng=rng) for i in range(cfg.N)
        ]

    def _check_routing(self, routing: dict[str, str], present: list[str]) -> None:
        for stream, expert in routing.items():
            if stream == expert:
                continue
            if stream not in present or expert not in present:
                raise RoutingError(
                    f"routing {stream}->E_{expert} needs both streams available; present: {present}"
                )

    def forward(
        self,
        bundle: ModalityBundle,
        routing_map: dict[str, str] | None = None,
        audit: list | None = None,
    ) -> ModalityBundle:
        routing = dict(self.cfg.routing_map if routing_map is None else routing_map)
        order = bundle.order()
        if not order:
            raise ShapeError("empty modality bundle")
        self._check_routing(routing, order)
        batch = bundle.streams[order[0]].shape[0]
        for name in order:
            x = bundle.streams[name]
            if x.ndim != 3 or x.shape[0] != batch or x.shape[2] != self.cfg.D:
                raise ShapeError(f"stream {name} has shape {x.shape}, expected ({batch}, n, {self.cfg.D})")

        cls = self.cls_token + self.type_embed["cls"]
        cls = concat([cls] * batch, axis=0) if batch > 1 else cls
        parts = {name: bundle.streams[name] + self.type_embed[name] for name in order}
        lengths = [1] + [parts[n].shape[1] for n in order]
        valid = np.concatenate(
            [np.ones((batch, 1), dtype=bool)] + [bundle.masks[n] for n in order], axis=1
        )
        mask = key_padding_mask(valid)
        cuts = np.cumsum(lengths)[:-1]

        x = concat([cls] + [parts[n] for n in order], axis=1)
        for depth, layer in enumerate(self.layers, start=1):
            x = x + layer.attn(x, mask)
            if layer.fusion:
                x = x + layer.experts[FUSION](x)
                if audit is not None:
                    audit.append(LayerRoute(depth, {n: FUSION for n in order}, [FUSION]))
                continue
            pieces = _split(x, cuts)
            cls_part, streams = pieces[0], dict(zip(order, pieces[1:]))
            assignments, calls = {}, []
            for name in order:
                expert = routing[name]
                streams[name] = streams[name] + layer.experts[expert](streams[name])
                assignments[name] = expert
                calls.append(expert)
            visual = [n for n in ("spa", "tmp") if n in streams]
            if visual:
                vis = concat([streams[n] for n in visual], axis=1)
                vis = vis + layer.experts["vis"](vis)
                calls.append("vis")
                vis_parts = _split(vis, np.cumsum([streams[n].shape[1] for n in visual])[:-1])
                streams.update(zip(visual, vis_parts))
            x = concat([cls_part] + [streams[n] for n in order], axis=1)
            if audit is not None:
                audit.append(LayerRoute(depth, assignments, calls))

        pieces = _split(x, cuts)
        return ModalityBundle(
            streams=dict(zip(order, pieces[1:])),
            masks={n: bundle.masks[n] for n in order},
            cls=pieces[0],
        )


def _split(x: Tensor, cuts) -> list[Tensor]:
    bounds = [0] + [int(c) for c in cuts] + [x.shape[1]]
    return [x[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]


def forward_stack(bundle: ModalityBundle, cfg: ExpertStackConfig, params: ExpertStack) -> ModalityBundle:
    return params(bundle, routing_map=cfg.routing_map)


def route_token_audit(bundle: ModalityBundle, cfg: ExpertStackConfig, params: ExpertStack) -> list[LayerRoute]:
    """Run the stack and report which expert processed each stream in each layer."""
    audit: list[LayerRoute] = []
    params(bundle, routing_map=cfg.routing_map, audit=audit)
    return audit
