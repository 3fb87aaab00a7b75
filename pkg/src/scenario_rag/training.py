"""Stage-one trainer, checkpoint format and batch embedding helpers."""

import logging
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .embedding import (
    DTYPE,
    GraphBatch,
    ModelConfig,
    Params,
    alignment_loss,
    batch_scenarios,
    check_params,
    decode_frames,
    edge_targets,
    encode,
    init_params,
    restoration_loss,
    round_params_f32,
    soft_iou,
    total_stage1_loss,
)
from .errors import (
    BatchTooSmall,
    ConfigError,
    CorruptFile,
    IoError,
    NumericalDivergence,
    ParseError,
    ShapeMismatch,
    VersionMismatch,
)
from .graph_distance import DistanceMatrix
from .scenario_model import ScenarioPrimitive
from .synth_data import LabeledDataset
from .utils import ByteReader, ensure_parent, read_csv, write_csv

logger = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "l_restore", "l_align", "l_total")


@dataclass(frozen=True)
class TrainConfig:
    lambda_r: float = 1.0
    lambda_a: float = 1.0
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 1
    target_percentile: float = 95.0

    def check(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", details=str(self.epochs))
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2", details=str(self.batch_size))
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive", details=str(self.learning_rate))
        if self.lambda_r < 0 or self.lambda_a < 0 or self.weight_decay < 0:
            raise ConfigError("loss weights and weight_decay must be >= 0")
        if not 0 < self.target_percentile <= 100:
            raise ConfigError("target_percentile must be in (0, 100]")


class StageLosses(NamedTuple):
    restore: torch.Tensor
    align: torch.Tensor
    total: torch.Tensor


class EpochLosses(NamedTuple):
    epoch: int
    l_restore: float
    l_align: float
    l_total: float


@dataclass
class TrainResult:
    params: Params
    history: list[EpochLosses]
    target_scale: float


# ======================================================================
# Objective
# ======================================================================


def stage1_objective(
    params: Params,
    batch: GraphBatch,
    targets: torch.Tensor,
    cfg: TrainConfig,
    mcfg: ModelConfig,
) -> StageLosses:
    """Restoration, alignment and weighted total loss for one batch.

    With ``lambda_a == 0`` the alignment term is reported but kept out of the
    graph, so training matches restoration-only optimisation exactly.
    """
    latents = encode(batch, params, mcfg)
    pred = decode_frames(latents, batch, params, mcfg)
    l_restore = restoration_loss(pred, edge_targets(batch), batch.frame_mask)
    if cfg.lambda_a == 0:
        with torch.no_grad():
            l_align = alignment_loss(latents, targets)
        total = cfg.lambda_r * l_restore
    else:
        l_align = alignment_loss(latents, targets)
        total = total_stage1_loss(l_restore, l_align, cfg.lambda_r, cfg.lambda_a)
    return StageLosses(l_restore, l_align, total)


def target_scale(dm: DistanceMatrix, percentile: float = 95.0) -> float:
    """Percentile of the off-diagonal DTW values; 1.0 when there are none or all are zero."""
    n = len(dm)
    if n < 2:
        return 1.0
    off = dm.values[~np.eye(n, dtype=bool)]
    scale = float(np.percentile(off, percentile))
    return scale if scale > 0 else 1.0


def make_batches(order: Sequence[int], batch_size: int) -> list[list[int]]:
    """Split an index order into batches; a trailing batch of one joins the previous batch."""
    batches = [list(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


# ======================================================================
# Training
# ======================================================================


def _scenarios_of(ds: LabeledDataset | Sequence[ScenarioPrimitive]) -> list[ScenarioPrimitive]:
    return list(ds.scenarios) if isinstance(ds, LabeledDataset) else list(ds)


def train_embedding(
    ds: LabeledDataset | Sequence[ScenarioPrimitive],
    dm: DistanceMatrix,
    cfg: TrainConfig,
    mcfg: ModelConfig,
) -> TrainResult:
    """Mini-batch AdamW on the stage-one objective.

    Batch order comes from a PCG64 stream seeded with ``cfg.seed`` and the
    initialisation from a torch generator with the same seed, so a run is
    reproducible bit for bit.
    """
    cfg.check()
    mcfg.check()
    scenarios = _scenarios_of(ds)
    if len(scenarios) < 2:
        raise BatchTooSmall(len(scenarios))

    ids = [s.scenario_id for s in scenarios]
    sub = dm.subset(ids)
    scale = target_scale(sub, cfg.target_percentile)
    targets = torch.as_tensor(sub.values / scale, dtype=DTYPE)
    data = batch_scenarios(scenarios, mcfg)

    params = init_params(mcfg, cfg.seed)
    history: list[EpochLosses] = []
    if cfg.epochs == 0:
        return TrainResult(params, history, scale)

    for p in params.values():
        p.requires_grad_(True)
    optimizer = torch.optim.AdamW(
        list(params.values()), lr=cfg.learning_rate, betas=(0.9, 0.999), weight_decay=cfg.weight_decay
    )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    logger.info(
        "Training on %d scenarios: epochs=%d batch=%d lr=%g lambda_r=%g lambda_a=%g target_scale=%.6g",
        len(scenarios), cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.lambda_r, cfg.lambda_a, scale,
    )

    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        for rows in make_batches(rng.permutation(len(scenarios)).tolist(), cfg.batch_size):
            idx = torch.as_tensor(rows, dtype=torch.long)
            optimizer.zero_grad()
            losses = stage1_objective(params, data.select(rows), targets[idx][:, idx], cfg, mcfg)
            value = float(losses.total.detach())
            if not math.isfinite(value):
                raise NumericalDivergence(epoch, value)
            losses.total.backward()
            if logger.isEnabledFor(logging.DEBUG):
                grad_norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values() if p.grad is not None))
                logger.debug("epoch %d batch of %d: loss=%.6g grad_norm=%.4g", epoch, len(rows), value, grad_norm)
            optimizer.step()
            sums += len(rows) * np.array([float(losses.restore.detach()), float(losses.align.detach()), value])
        mean = sums / len(scenarios)
        history.append(EpochLosses(epoch, float(mean[0]), float(mean[1]), float(mean[2])))
        logger.info("epoch %d: l_restore=%.6f l_align=%.6f l_total=%.6f", epoch, *mean)

    trained = {name: p.detach().clone() for name, p in params.items()}
    return TrainResult(trained, history, scale)


# ======================================================================
# Evaluation helpers
# ======================================================================


def embed_scenarios(
    scenarios: Sequence[ScenarioPrimitive],
    params: Params,
    mcfg: ModelConfig,
    batch_size: int = 64,
) -> np.ndarray:
    """Latent vectors ``[n, D]`` computed with float32-rounded parameters."""
    check_params(params, mcfg)
    rounded = round_params_f32(params)
    out = []
    with torch.no_grad():
        for start in range(0, len(scenarios), batch_size):
            chunk = scenarios[start:start + batch_size]
            out.append(encode(batch_scenarios(chunk, mcfg), rounded, mcfg).numpy())
    if not out:
        return np.zeros((0, mcfg.latent_dim))
    return np.concatenate(out, axis=0)


def mean_soft_iou(scenarios: Sequence[ScenarioPrimitive], params: Params, mcfg: ModelConfig) -> float:
    """Mean per-frame soft IoU of the decoder's restorations."""
    rounded = round_params_f32(params)
    total, frames = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(scenarios), 64):
            batch = batch_scenarios(scenarios[start:start + 64], mcfg)
            pred = decode_frames(encode(batch, rounded, mcfg), batch, rounded, mcfg)
            iou = soft_iou(pred, edge_targets(batch))
            total += float((iou * batch.frame_mask.to(DTYPE)).sum())
            frames += int(batch.frame_mask.sum())
    return total / frames if frames else math.nan


def write_history(history: Sequence[EpochLosses], path: str | Path) -> Path:
    return write_csv(path, HISTORY_HEADER, [(h.epoch, h.l_restore, h.l_align, h.l_total) for h in history])


def read_history(path: str | Path) -> list[EpochLosses]:
    _, rows = read_csv(path, HISTORY_HEADER)
    try:
        return [EpochLosses(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows]
    except (ValueError, IndexError) as exc:
        raise ParseError(0, f"{path}: {exc}") from exc


# ======================================================================
# Checkpoint format
# ======================================================================

CHECKPOINT_MAGIC = b"SAEM"
CHECKPOINT_VERSION = 1
_CONFIG_FIELDS = tuple(f.name for f in fields(ModelConfig))


def encode_checkpoint(params: Params, mcfg: ModelConfig) -> bytes:
    check_params(params, mcfg)
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(_CONFIG_FIELDS))]
    parts += [struct.pack("<I", int(getattr(mcfg, name))) for name in _CONFIG_FIELDS]
    for name in sorted(params):
        data = params[name].detach().numpy().astype("<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(data: bytes, path: str = "<bytes>") -> tuple[Params, ModelConfig]:
    cur = ByteReader(data, path)
    magic = cur.take(4, "magic") if len(data) >= 4 else data
    if magic != CHECKPOINT_MAGIC:
        raise VersionMismatch(f"magic {CHECKPOINT_MAGIC!r}", repr(magic))
    version = cur.u32("version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"version {CHECKPOINT_VERSION}", str(version))
    count = cur.u32("config field count")
    if count != len(_CONFIG_FIELDS):
        raise CorruptFile(cur.offset - 4, f"expected {len(_CONFIG_FIELDS)} config fields, found {count}", path)
    values = {name: cur.u32(f"config field {name}") for name in _CONFIG_FIELDS}
    values["distance_weighting"] = bool(values["distance_weighting"])
    mcfg = ModelConfig(**values)

    params: Params = {}
    while not cur.done:
        start = cur.offset
        name = cur.take(cur.u32("name length"), "name").decode("utf-8", errors="replace")
        rank = cur.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", cur.take(4 * rank, f"dims of {name}"))
        n = int(np.prod(dims)) if rank else 1
        array = np.frombuffer(cur.take(4 * n, f"data of {name}"), dtype="<f4").reshape(dims)
        if name in params:
            raise CorruptFile(start, f"duplicate tensor {name!r}", path)
        params[name] = torch.from_numpy(array.astype(np.float64))
    try:
        check_params(params, mcfg)
    except ShapeMismatch as exc:
        raise CorruptFile(cur.offset, f"tensors do not match the stored config: {exc}", path) from exc
    return params, mcfg


def save_checkpoint(params: Params, mcfg: ModelConfig, path: str | Path) -> Path:
    p = ensure_parent(path)
    try:
        p.write_bytes(encode_checkpoint(params, mcfg))
    except OSError as exc:
        raise IoError(str(p), str(exc)) from exc
    logger.info("Checkpoint written: %s", p)
    return p


def load_checkpoint(path: str | Path) -> tuple[Params, ModelConfig]:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise IoError(str(p), str(exc)) from exc
    return decode_checkpoint(data, str(p))
