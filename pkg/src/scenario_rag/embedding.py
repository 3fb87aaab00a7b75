"""Scenario-aligned embedding model: relational graph convolution per frame,
multi-head temporal attention over frames, an edge-restoration decoder and
the stage-one losses.

The model is written functionally: parameters live in a ``dict[str, Tensor]``
(see :func:`init_params`) and every operation takes that dict explicitly, so
the same code serves training, evaluation of checkpoints and gradient checks.
All tensors are float64 on the CPU.  Weight matrices use the row-vector
convention ``f @ W`` with ``W`` stored as ``[in, out]``.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, fields
from typing import NamedTuple

import torch

from .errors import (
    BatchTooSmall,
    ConfigError,
    EmptySequence,
    ShapeMismatch,
    TooManyNodes,
)
from .scenario_model import (
    ENTITY_KINDS,
    RELATION_KINDS,
    EgoState,
    LaneState,
    ScenarioPrimitive,
    SemanticGraph,
    SignalPhase,
    SignalState,
    SignClass,
    SignState,
    VehicleState,
    canonicalize,
    is_canonical,
)

logger = logging.getLogger(__name__)

DTYPE = torch.float64
FEATURE_DIM = 16
TIME_CODE_DIM = 16
MIN_STRENGTH_M = 0.5
MASKED_SCORE = -1e9
DECODER_BIAS_INIT = -4.0

Params = dict[str, torch.Tensor]


@dataclass(frozen=True)
class ModelConfig:
    node_feature_dim: int = FEATURE_DIM
    hidden_dim: int = 64
    latent_dim: int = 64
    rgcn_layers: int = 2
    heads: int = 8
    max_nodes: int = 16
    max_frames: int = 32
    relation_count: int = len(RELATION_KINDS)
    attention_layers: int = 1
    decoder_hidden: int = 128
    distance_weighting: bool = False

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    def check(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name != "distance_weighting" and value < 1:
                raise ConfigError("Model dimensions must be >= 1", details=f"{f.name}={value}")
        if self.hidden_dim % self.heads:
            raise ConfigError(
                "hidden_dim must be divisible by heads",
                details=f"hidden_dim={self.hidden_dim}, heads={self.heads}",
            )
        if self.node_feature_dim != FEATURE_DIM:
            raise ConfigError("node_feature_dim is fixed by tensorization", details=f"expected {FEATURE_DIM}")
        if self.relation_count != len(RELATION_KINDS):
            raise ConfigError("relation_count must equal the number of relation kinds")


# ======================================================================
# Tensorization
# ======================================================================


class FrameTensors(NamedTuple):
    """Padded tensors of one frame, or of a batch with extra leading dims."""

    features: torch.Tensor   # [..., N, F]
    adjacency: torch.Tensor  # [..., R, N, N]; [r, i, j] = 1 iff edge j -> i of kind r
    node_mask: torch.Tensor  # [..., N] bool
    strength: torch.Tensor   # [..., N, N] d_ij
    kinds: torch.Tensor      # [..., N] long, index into ENTITY_KINDS


_KIND_INDEX = {k: i for i, k in enumerate(ENTITY_KINDS)}
_REL_INDEX = {r: i for i, r in enumerate(RELATION_KINDS)}
_SIGN_SLOT = {SignClass.STOP: 12, SignClass.YIELD: 13, SignClass.SPEED_LIMIT: 14}
_PHASE_SLOT = {SignalPhase.RED: 12, SignalPhase.YELLOW: 13, SignalPhase.GREEN: 14}


def _lane_direction(state: LaneState) -> float:
    (ax, ay), (bx, by) = state.centerline[0], state.centerline[-1]
    return math.atan2(by - ay, bx - ax)


def node_features(kind_index: int, state: object) -> list[float]:
    row = [0.0] * FEATURE_DIM
    row[kind_index] = 1.0
    x, y = state.position  # type: ignore[attr-defined]
    row[5], row[6] = x / 50.0, y / 50.0
    if isinstance(state, EgoState):
        row[7] = state.speed / 20.0
        row[8], row[9] = math.cos(state.heading), math.sin(state.heading)
    elif isinstance(state, VehicleState):
        row[7] = state.speed / 20.0
        row[8], row[9] = math.cos(state.heading), math.sin(state.heading)
        row[10], row[11] = state.length / 5.0, state.width / 2.5
    elif isinstance(state, LaneState):
        heading = _lane_direction(state)
        row[8], row[9] = math.cos(heading), math.sin(heading)
        row[11] = state.width / 4.0
    elif isinstance(state, SignState):
        row[_SIGN_SLOT[state.sign_class]] = 1.0
        if state.limit is not None:
            row[15] = state.limit / 100.0
    elif isinstance(state, SignalState):
        row[_PHASE_SLOT[state.phase]] = 1.0
    return row


def tensorize(g: SemanticGraph, cfg: ModelConfig) -> FrameTensors:
    """Pad one graph to ``cfg.max_nodes`` slots in canonical node order."""
    if not is_canonical(g):
        g = canonicalize(g)
    n_max = cfg.max_nodes
    if len(g.nodes) > n_max:
        raise TooManyNodes(len(g.nodes), n_max)

    features = torch.zeros(n_max, FEATURE_DIM, dtype=DTYPE)
    adjacency = torch.zeros(cfg.relation_count, n_max, n_max, dtype=DTYPE)
    mask = torch.zeros(n_max, dtype=torch.bool)
    strength = torch.ones(n_max, n_max, dtype=DTYPE)
    kinds = torch.zeros(n_max, dtype=torch.long)

    index = {}
    positions = []
    for i, n in enumerate(g.nodes):
        index[n.entity_id] = i
        k = _KIND_INDEX[n.kind]
        features[i] = torch.tensor(node_features(k, n.state), dtype=DTYPE)
        mask[i] = True
        kinds[i] = k
        positions.append(n.position)
    for e in g.edges:
        adjacency[_REL_INDEX[e.kind], index[e.dst], index[e.src]] = 1.0

    if cfg.distance_weighting and positions:
        pos = torch.tensor(positions, dtype=DTYPE)
        n = len(positions)
        strength[:n, :n] = torch.cdist(pos, pos).clamp(min=MIN_STRENGTH_M)
    return FrameTensors(features, adjacency, mask, strength, kinds)


class GraphBatch(NamedTuple):
    """Frames of several scenarios padded to a common frame count."""

    ids: tuple[str, ...]
    frames: FrameTensors            # leading dims [B, T]
    frame_mask: torch.Tensor        # [B, T] bool
    frame_positions: torch.Tensor   # [B, T] in [0, 1]

    def select(self, rows: Sequence[int]) -> "GraphBatch":
        idx = torch.as_tensor(list(rows), dtype=torch.long)
        return GraphBatch(
            ids=tuple(self.ids[i] for i in rows),
            frames=FrameTensors(*(t.index_select(0, idx) for t in self.frames)),
            frame_mask=self.frame_mask.index_select(0, idx),
            frame_positions=self.frame_positions.index_select(0, idx),
        )


def batch_scenarios(scenarios: Sequence[ScenarioPrimitive], cfg: ModelConfig) -> GraphBatch:
    if not scenarios:
        raise EmptySequence("batch")
    t_max = 0
    for s in scenarios:
        if len(s.frames) == 0:
            raise EmptySequence(s.scenario_id)
        if len(s.frames) > cfg.max_frames:
            raise ShapeMismatch(f"{s.scenario_id}: {len(s.frames)} frames > max_frames={cfg.max_frames}")
        t_max = max(t_max, len(s.frames))

    empty = tensorize(SemanticGraph(nodes=(), edges=(), timestamp=0), cfg)
    per_scenario = []
    frame_mask = torch.zeros(len(scenarios), t_max, dtype=torch.bool)
    frame_positions = torch.zeros(len(scenarios), t_max, dtype=DTYPE)
    for b, s in enumerate(scenarios):
        t = len(s.frames)
        frames = [tensorize(g, cfg) for g in s.frames] + [empty] * (t_max - t)
        per_scenario.append(FrameTensors(*(torch.stack(parts) for parts in zip(*frames))))
        frame_mask[b, :t] = True
        frame_positions[b, :t] = torch.linspace(0.0, 1.0, t, dtype=DTYPE) if t > 1 else 0.0
    stacked = FrameTensors(*(torch.stack(parts) for parts in zip(*per_scenario)))
    return GraphBatch(tuple(s.scenario_id for s in scenarios), stacked, frame_mask, frame_positions)


def edge_targets(batch: GraphBatch) -> torch.Tensor:
    """Ground-truth edge indicators ``[B, T, R, N, N]`` in decoder (src, dst) layout."""
    return batch.frames.adjacency.transpose(-1, -2)


def node_pair_mask(batch: GraphBatch) -> torch.Tensor:
    m = batch.frames.node_mask.to(DTYPE)
    return (m.unsqueeze(-1) * m.unsqueeze(-2)).unsqueeze(-3)


# ======================================================================
# Parameters
# ======================================================================


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, d_k = cfg.heads, cfg.head_dim
    r, n = cfg.relation_count, cfg.max_nodes
    shapes: dict[str, tuple[int, ...]] = {"kind_embed": (len(ENTITY_KINDS), cfg.node_feature_dim)}
    width = cfg.node_feature_dim
    for layer in range(cfg.rgcn_layers):
        shapes[f"rgcn.{layer}.rel"] = (r, width, cfg.hidden_dim)
        shapes[f"rgcn.{layer}.self"] = (width, cfg.hidden_dim)
        width = cfg.hidden_dim
    for layer in range(cfg.attention_layers):
        for name in ("q", "k", "v"):
            shapes[f"attn.{layer}.{name}"] = (h, cfg.hidden_dim, d_k)
        shapes[f"attn.{layer}.out"] = (cfg.hidden_dim, cfg.hidden_dim)
    shapes["proj"] = (cfg.hidden_dim, cfg.latent_dim)
    shapes["dec.w1"] = (cfg.latent_dim, cfg.decoder_hidden)
    shapes["dec.wt"] = (TIME_CODE_DIM, cfg.decoder_hidden)
    shapes["dec.b1"] = (cfg.decoder_hidden,)
    shapes["dec.w2"] = (cfg.decoder_hidden, r * n * n)
    shapes["dec.b2"] = (r * n * n,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.startswith("attn.") and len(shape) == 3:
        return shape[1]
    if name.startswith("rgcn.") and name.endswith(".rel"):
        return shape[1]
    return shape[0]


def init_params(cfg: ModelConfig, seed: int) -> Params:
    """Scaled-uniform initialisation U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a seeded generator."""
    cfg.check()
    gen = torch.Generator().manual_seed(seed & ((1 << 63) - 1))
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "dec.b1":
            params[name] = torch.zeros(shape, dtype=DTYPE)
        elif name == "dec.b2":
            params[name] = torch.full(shape, DECODER_BIAS_INIT, dtype=DTYPE)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shape))
            params[name] = (torch.rand(shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound
    return params


def check_params(params: Params, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ShapeMismatch(f"parameter names differ (missing={missing}, unexpected={extra})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ShapeMismatch(f"{name}: expected {shape}, found {tuple(params[name].shape)}")
        if not torch.isfinite(params[name]).all():
            raise ShapeMismatch(f"{name}: non-finite entries")


def round_params_f32(params: Params) -> Params:
    """Round parameters through float32, the precision checkpoints store."""
    return {k: v.detach().to(torch.float32).to(DTYPE) for k, v in params.items()}


# ======================================================================
# Encoder
# ======================================================================


def rgcn_forward(t: FrameTensors, params: Params, cfg: ModelConfig) -> torch.Tensor:
    """Relational graph convolution, ``cfg.rgcn_layers`` layers with ReLU.

    f_i' = relu( sum_r sum_{j in N_i^r} W_r f_j / (c_i^r d_ij) + W_0 f_i ),
    with c_i^r the number of r-neighbours of i.  Padded nodes stay zero.
    """
    n = t.features.shape[-2]
    if t.features.shape[-1] != cfg.node_feature_dim:
        raise ShapeMismatch(f"features last dim {t.features.shape[-1]} != {cfg.node_feature_dim}")
    if t.adjacency.shape[-3:] != (cfg.relation_count, n, n) or t.strength.shape[-2:] != (n, n):
        raise ShapeMismatch(
            f"adjacency {tuple(t.adjacency.shape)} / strength {tuple(t.strength.shape)} do not match {n} nodes"
        )

    mask = t.node_mask.to(DTYPE).unsqueeze(-1)
    f = (t.features + params["kind_embed"][t.kinds]) * mask
    counts = t.adjacency.sum(dim=-1, keepdim=True).clamp(min=1.0)
    norm = t.adjacency / (counts * t.strength.unsqueeze(-3))
    for layer in range(cfg.rgcn_layers):
        agg = norm @ f.unsqueeze(-3)
        messages = torch.einsum("...rni,rio->...no", agg, params[f"rgcn.{layer}.rel"])
        f = torch.relu(messages + f @ params[f"rgcn.{layer}.self"]) * mask
    return f


def frame_embeddings(t: FrameTensors, params: Params, cfg: ModelConfig) -> torch.Tensor:
    """Masked mean of node outputs: ``[..., N, F] -> [..., H]``."""
    out = rgcn_forward(t, params, cfg)
    mask = t.node_mask.to(DTYPE).unsqueeze(-1)
    return (out * mask).sum(dim=-2) / mask.sum(dim=-2).clamp(min=1.0)


def positional_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=DTYPE).unsqueeze(1)
    rates = torch.pow(10000.0, -torch.arange(0, dim, 2, dtype=DTYPE) / dim)
    pe = torch.zeros(length, dim, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(pos * rates)
    pe[:, 1::2] = torch.cos(pos * rates)[:, : dim // 2]
    return pe


def temporal_encode(
    frames: torch.Tensor,
    params: Params,
    cfg: ModelConfig,
    frame_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Multi-head self-attention over frame embeddings ``[..., T, H]`` -> latent ``[..., D]``.

    head_m = softmax(Q_m K_m^T / sqrt(d_k)) V_m; the heads are concatenated
    and projected by the output matrix, then averaged over valid frames and
    projected to the latent width.
    """
    t_len, width = frames.shape[-2], frames.shape[-1]
    if t_len == 0:
        raise EmptySequence("frame sequence")
    if t_len > cfg.max_frames:
        raise ShapeMismatch(f"{t_len} frames > max_frames={cfg.max_frames}")
    if width != cfg.hidden_dim:
        raise ShapeMismatch(f"frame embedding width {width} != hidden_dim {cfg.hidden_dim}")
    if frame_mask is None:
        frame_mask = torch.ones(frames.shape[:-1], dtype=torch.bool)

    lead = frames.shape[:-2]
    key_bias = torch.where(frame_mask, 0.0, MASKED_SCORE).to(DTYPE).unsqueeze(-2).unsqueeze(-2)
    x = frames + positional_encoding(t_len, width)
    scale = math.sqrt(cfg.head_dim)
    for layer in range(cfg.attention_layers):
        q = torch.einsum("...th,mhk->...mtk", x, params[f"attn.{layer}.q"])
        k = torch.einsum("...th,mhk->...mtk", x, params[f"attn.{layer}.k"])
        v = torch.einsum("...th,mhk->...mtk", x, params[f"attn.{layer}.v"])
        weights = torch.softmax(q @ k.transpose(-1, -2) / scale + key_bias, dim=-1)
        heads = (weights @ v).movedim(-3, -2).reshape(*lead, t_len, width)
        x = heads @ params[f"attn.{layer}.out"]

    valid = frame_mask.to(DTYPE).unsqueeze(-1)
    pooled = (x * valid).sum(dim=-2) / valid.sum(dim=-2).clamp(min=1.0)
    return pooled @ params["proj"]


def encode(batch: GraphBatch, params: Params, cfg: ModelConfig) -> torch.Tensor:
    """Latent vectors ``[B, D]`` for a batch of scenarios."""
    return temporal_encode(frame_embeddings(batch.frames, params, cfg), params, cfg, batch.frame_mask)


# ======================================================================
# Decoder
# ======================================================================


def time_code(position: torch.Tensor) -> torch.Tensor:
    """Sinusoidal code of a frame's relative position in [0, 1]."""
    k = torch.arange(1, TIME_CODE_DIM // 2 + 1, dtype=DTYPE)
    angles = math.pi * position.to(DTYPE).unsqueeze(-1) * k
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def decode_edges(
    latent: torch.Tensor,
    params: Params,
    cfg: ModelConfig,
    frame_position: torch.Tensor | float | None = None,
) -> torch.Tensor:
    """Edge probabilities ``[..., R, N, N]`` indexed (relation, src, dst); diagonal is 0.

    When ``frame_position`` is given, its time code conditions the hidden
    layer so one latent can restore every frame of its scenario.
    """
    pre = latent @ params["dec.w1"] + params["dec.b1"]
    if frame_position is not None:
        pos = torch.as_tensor(frame_position, dtype=DTYPE)
        pre = pre + time_code(pos) @ params["dec.wt"]
    hidden = torch.relu(pre)
    logits = hidden @ params["dec.w2"] + params["dec.b2"]
    n = cfg.max_nodes
    probs = torch.sigmoid(logits).reshape(*logits.shape[:-1], cfg.relation_count, n, n)
    return probs * (1.0 - torch.eye(n, dtype=DTYPE))


def decode_frames(latents: torch.Tensor, batch: GraphBatch, params: Params, cfg: ModelConfig) -> torch.Tensor:
    """Per-frame edge probabilities ``[B, T, R, N, N]`` restricted to real node pairs."""
    probs = decode_edges(latents.unsqueeze(1), params, cfg, batch.frame_positions)
    return probs * node_pair_mask(batch)


# ======================================================================
# Stage-one losses
# ======================================================================


def soft_iou(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-frame soft IoU over the trailing ``[R, N, N]`` slots; 1 where both are empty."""
    inter = (pred * gt).sum(dim=(-3, -2, -1))
    union = (pred + gt - pred * gt).sum(dim=(-3, -2, -1))
    empty = union <= 0
    return torch.where(empty, torch.ones_like(union), inter / torch.where(empty, torch.ones_like(union), union))


def restoration_loss(pred: torch.Tensor, gt: torch.Tensor, frame_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over scenarios of ``1 - mean_j IoU_kj`` for ``[B, T, R, N, N]`` inputs."""
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} != gt {tuple(gt.shape)}")
    if pred.dim() < 5:
        raise ShapeMismatch(f"expected [B, T, R, N, N], found {tuple(pred.shape)}")
    if frame_mask is None:
        frame_mask = torch.ones(pred.shape[:2], dtype=torch.bool)
    if tuple(frame_mask.shape) != tuple(pred.shape[:2]):
        raise ShapeMismatch(f"frame mask {tuple(frame_mask.shape)} != {tuple(pred.shape[:2])}")
    valid = frame_mask.to(DTYPE)
    iou = soft_iou(pred, gt) * valid
    per_scenario = iou.sum(dim=1) / valid.sum(dim=1).clamp(min=1.0)
    return (1.0 - per_scenario).mean()


def pairwise_distances(latents: torch.Tensor) -> torch.Tensor:
    """Euclidean distances ``[B, B]`` with a zero-safe square root."""
    diff = latents.unsqueeze(1) - latents.unsqueeze(0)
    sq = (diff * diff).sum(dim=-1)
    positive = sq > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def alignment_loss(latents: torch.Tensor, d_dtw: torch.Tensor) -> torch.Tensor:
    """(2 / (B (B - 1))) * sum_{k<l} (||S_k - S_l|| - d_kl)^2."""
    b = latents.shape[0]
    if b < 2:
        raise BatchTooSmall(b)
    if tuple(d_dtw.shape) != (b, b):
        raise ShapeMismatch(f"distance slice {tuple(d_dtw.shape)} != ({b}, {b})")
    rows, cols = torch.triu_indices(b, b, offset=1)
    residual = pairwise_distances(latents)[rows, cols] - d_dtw.to(DTYPE)[rows, cols]
    return (residual * residual).sum() * (2.0 / (b * (b - 1)))


def total_stage1_loss(
    l_restore: torch.Tensor | float,
    l_align: torch.Tensor | float,
    lambda_r: float = 1.0,
    lambda_a: float = 1.0,
) -> torch.Tensor | float:
    return lambda_r * l_restore + lambda_a * l_align
