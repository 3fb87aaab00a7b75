"""Perception and trajectory losses of the later training stages.

Only the objective functions are provided; the networks that would feed
them are outside this package.  Every loss is differentiable with torch
autograd and takes float64 tensors (sequences are converted).
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import torch

from .embedding import DTYPE
from .errors import ConfigError, LengthMismatch, ShapeMismatch

logger = logging.getLogger(__name__)

N_PATH = 20
N_SPEED = 10

TensorLike = torch.Tensor | Sequence[float]


def _as_tensor(value: TensorLike) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.to(DTYPE)
    return torch.as_tensor(value, dtype=DTYPE)


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    eps: float = 1e-7

    def check(self) -> None:
        if not 0 < self.alpha < 1:
            raise ConfigError("focal alpha must be in (0, 1)", details=str(self.alpha))
        if self.gamma < 0:
            raise ConfigError("focal gamma must be >= 0", details=str(self.gamma))
        if not 0 < self.eps < 0.5:
            raise ConfigError("focal eps must be in (0, 0.5)", details=str(self.eps))


class FocalResult(NamedTuple):
    loss: torch.Tensor
    no_positives: bool


def focal_loss(probs: TensorLike, labels: TensorLike, cfg: FocalConfig = FocalConfig()) -> FocalResult:
    """Label-gated focal loss normalised by the number of positives.

    Positives contribute alpha (1 - p)^gamma log p, negatives
    (1 - alpha) p^gamma log(1 - p).  Without positives the loss is 0 and
    ``no_positives`` is set.
    """
    cfg.check()
    p = _as_tensor(probs)
    y = _as_tensor(labels)
    if p.shape != y.shape:
        raise LengthMismatch(p.numel(), y.numel())
    n_pos = float(y.sum())
    if n_pos == 0:
        logger.warning("focal_loss called without positive labels; returning 0")
        return FocalResult((p * 0.0).sum(), True)
    p = p.clamp(cfg.eps, 1.0 - cfg.eps)
    pos = y * cfg.alpha * (1.0 - p).pow(cfg.gamma) * torch.log(p)
    neg = (1.0 - y) * (1.0 - cfg.alpha) * p.pow(cfg.gamma) * torch.log(1.0 - p)
    return FocalResult(-(pos + neg).sum() / n_pos, False)


def _smooth(x: torch.Tensor) -> torch.Tensor:
    a = x.abs()
    return torch.where(a < 1.0, 0.5 * x * x, a - 0.5)


def smooth_l1(pred: TensorLike, gt: TensorLike) -> torch.Tensor:
    """Mean SmoothL1 (beta = 1) over the components of one state vector."""
    p, g = _as_tensor(pred), _as_tensor(gt)
    if p.shape != g.shape:
        raise LengthMismatch(p.numel(), g.numel())
    if p.numel() == 0:
        return p.sum()
    return _smooth(p - g).mean()


def smooth_l1_positives(pred: torch.Tensor, gt: torch.Tensor, positive: torch.Tensor) -> torch.Tensor:
    """Average of per-sample :func:`smooth_l1` over positive samples ``[M, S]``."""
    p, g = _as_tensor(pred), _as_tensor(gt)
    if p.shape != g.shape or p.dim() != 2:
        raise ShapeMismatch(f"pred {tuple(p.shape)} / gt {tuple(g.shape)}; expected equal [M, S]")
    mask = torch.as_tensor(positive, dtype=DTYPE)
    if tuple(mask.shape) != (p.shape[0],):
        raise ShapeMismatch(f"positive mask {tuple(mask.shape)} != ({p.shape[0]},)")
    n_pos = float(mask.sum())
    if n_pos == 0:
        return (p * 0.0).sum()
    return (_smooth(p - g).mean(dim=1) * mask).sum() / n_pos


def perception_loss(
    cls_part: torch.Tensor | float,
    reg_part: torch.Tensor | float,
    lambda_c: float = 1.0,
    lambda_e: float = 5.0,
) -> torch.Tensor | float:
    return lambda_c * cls_part + lambda_e * reg_part


@dataclass
class TrajectoryBatch:
    """Path waypoints ``[n_path, 2]`` and speed waypoints ``[n_speed, 2]`` (predicted and target)."""

    path_pred: torch.Tensor
    path_gt: torch.Tensor
    speed_pred: torch.Tensor
    speed_gt: torch.Tensor
    lambda_p: float = 1.0
    lambda_s: float = 1.0
    n_path: int = N_PATH
    n_speed: int = N_SPEED

    def check(self) -> None:
        expected = {
            "path_pred": (self.n_path, 2),
            "path_gt": (self.n_path, 2),
            "speed_pred": (self.n_speed, 2),
            "speed_gt": (self.n_speed, 2),
        }
        for name, shape in expected.items():
            t = getattr(self, name)
            if tuple(t.shape) != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, found {tuple(t.shape)}")
            if not torch.isfinite(t).all():
                raise ShapeMismatch(f"{name}: non-finite entries")


def trajectory_loss(batch: TrajectoryBatch) -> torch.Tensor:
    """lambda_p * sum ||p - p_hat||^2 + lambda_s * sum ||v - v_hat||^2."""
    batch.check()
    dp = _as_tensor(batch.path_pred) - _as_tensor(batch.path_gt)
    dv = _as_tensor(batch.speed_pred) - _as_tensor(batch.speed_gt)
    return batch.lambda_p * (dp * dp).sum() + batch.lambda_s * (dv * dv).sum()
