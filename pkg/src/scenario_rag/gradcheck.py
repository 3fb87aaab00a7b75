"""Finite-difference verification of autograd gradients."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch.overrides import TorchFunctionMode

from .embedding import DTYPE, GraphBatch, ModelConfig, alignment_loss, batch_scenarios, init_params, restoration_loss
from .errors import ConfigError
from .objectives import (
    N_PATH,
    N_SPEED,
    TrajectoryBatch,
    focal_loss,
    perception_loss,
    smooth_l1,
    smooth_l1_positives,
    trajectory_loss,
)
from .synth_data import ClusterSpec, Template, generate_scenario
from .training import TrainConfig, stage1_objective

logger = logging.getLogger(__name__)

LossFn = Callable[[dict[str, torch.Tensor]], torch.Tensor]


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    coordinates: int
    worst: tuple[str, int] | None
    skipped: int = 0


# Piecewise ops and how to read which piece each element took.
_KINKS: dict[Callable, str] = {
    torch.relu: "clamp",
    torch.nn.functional.relu: "clamp",
    torch.Tensor.relu: "clamp",
    torch.clamp: "clamp",
    torch.Tensor.clamp: "clamp",
    torch.clamp_min: "clamp",
    torch.Tensor.clamp_min: "clamp",
    torch.clamp_max: "clamp",
    torch.Tensor.clamp_max: "clamp",
    torch.abs: "abs",
    torch.Tensor.abs: "abs",
    torch.where: "where",
    torch.maximum: "order",
    torch.minimum: "order",
}


def _branch_pattern(kind: str, args: tuple, out: object) -> torch.Tensor | None:
    first = args[0] if args else None
    if not isinstance(first, torch.Tensor):
        return None
    if kind == "clamp" and isinstance(out, torch.Tensor):
        return out != first
    if kind == "abs":
        return first < 0
    if kind == "where" and len(args) >= 3:
        return first.clone()
    if kind == "order" and len(args) >= 2 and isinstance(args[1], torch.Tensor):
        return first >= args[1]
    return None


class _BranchRecorder(TorchFunctionMode):
    """Records the piece taken by every element of every piecewise op in a forward pass."""

    def __init__(self) -> None:
        super().__init__()
        self.branches: list[torch.Tensor] = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        kind = _KINKS.get(func)
        if kind is not None:
            pattern = _branch_pattern(kind, args, out)
            if pattern is not None:
                self.branches.append(pattern)
        return out


def _evaluate(loss_fn: LossFn, point: dict[str, torch.Tensor]) -> tuple[float, list[torch.Tensor]]:
    with _BranchRecorder() as recorder:
        loss = loss_fn(point)
    return float(loss), recorder.branches


def _same_branches(a: list[torch.Tensor], b: list[torch.Tensor]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and torch.equal(x, y) for x, y in zip(a, b))


def _analytic(loss_fn: LossFn, point: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    leaves = {k: v.detach().clone().to(DTYPE).requires_grad_(True) for k, v in point.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, torch.Tensor) or not loss.requires_grad:
        return {k: torch.zeros_like(v) for k, v in leaves.items()}
    grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    return {k: (g if g is not None else torch.zeros_like(v)) for (k, v), g in zip(leaves.items(), grads)}


def grad_check(
    loss_fn: LossFn,
    point: dict[str, torch.Tensor] | torch.Tensor,
    step: float = 1e-3,
    samples: int = 200,
    seed: int = 0,
) -> GradCheckResult:
    """Compare autograd against central differences on sampled coordinates.

    Relative error per coordinate is |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
    All coordinates are checked when there are at most ``samples`` of them.
    A bare tensor ``point`` is passed to ``loss_fn`` as ``{"x": point}``.

    A coordinate whose +/- ``step`` perturbation moves any element of a
    piecewise op (ReLU, clamp, abs, where, maximum/minimum) onto another
    piece straddles a kink; it is skipped and counted in ``skipped``.
    """
    if isinstance(point, torch.Tensor):
        point = {"x": point}
    base = {k: v.detach().clone().to(DTYPE) for k, v in point.items()}
    analytic = _analytic(loss_fn, base)

    coords = [(name, i) for name, t in base.items() for i in range(t.numel())]
    if len(coords) > samples:
        rng = np.random.Generator(np.random.PCG64(seed))
        picked = sorted(rng.choice(len(coords), size=samples, replace=False).tolist())
        coords = [coords[i] for i in picked]

    worst_err, worst, skipped = 0.0, None, 0
    with torch.no_grad():
        _, at_base = _evaluate(loss_fn, base)
        for name, i in coords:
            flat = base[name].view(-1)
            original = float(flat[i])
            flat[i] = original + step
            up, at_up = _evaluate(loss_fn, base)
            flat[i] = original - step
            down, at_down = _evaluate(loss_fn, base)
            flat[i] = original
            if not (_same_branches(at_up, at_base) and _same_branches(at_down, at_base)):
                skipped += 1
                continue
            g_fd = (up - down) / (2.0 * step)
            g_a = float(analytic[name].reshape(-1)[i])
            err = abs(g_a - g_fd) / max(1e-8, abs(g_a) + abs(g_fd))
            if worst is None or err > worst_err:
                worst_err, worst = err, (name, i)
    checked = len(coords) - skipped
    if skipped:
        logger.debug("grad_check: skipped %d of %d coordinates straddling a kink", skipped, len(coords))
    logger.debug("grad_check: %d coordinates, max relative error %.3g at %s", checked, worst_err, worst)
    return GradCheckResult(worst_err, checked, worst, skipped)


# ======================================================================
# Objective suite
# ======================================================================

GRADCHECK_MODEL = ModelConfig(
    hidden_dim=16, latent_dim=8, heads=4, max_nodes=8, max_frames=12, decoder_hidden=16
)


class GradCheckRow(NamedTuple):
    objective: str
    point: int
    max_rel_error: float
    coordinates: int
    skipped: int = 0


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _tensor(array: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(array), dtype=DTYPE)


def _away_from_kink(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Differences with |x| in [0.05, 0.8] or [1.2, 3], clear of the SmoothL1 transition."""
    mag = np.where(rng.random(shape) < 0.5, rng.uniform(0.05, 0.8, shape), rng.uniform(1.2, 3.0, shape))
    return mag * rng.choice([-1.0, 1.0], size=shape)


def _focal_inputs(rng: np.random.Generator, n: int = 12) -> tuple[np.ndarray, np.ndarray]:
    labels = (rng.random(n) < 0.3).astype(np.float64)
    labels[0] = 1.0
    return rng.uniform(-2.5, 2.5, n), labels


def _suite_batch(seed: int) -> GraphBatch:
    spec_a = ClusterSpec(0, Template.CAR_FOLLOWING, frame_count_range=(3, 4))
    spec_b = ClusterSpec(1, Template.LANE_CHANGE, frame_count_range=(3, 4))
    pair = [generate_scenario(spec_a, 0, seed), generate_scenario(spec_b, 1, seed + 1)]
    return batch_scenarios(pair, GRADCHECK_MODEL)


def objective_points(name: str, point: int, seed: int) -> tuple[LossFn, dict[str, torch.Tensor]]:
    """Loss function and evaluation point for one objective of the suite."""
    rng = _rng(seed * 1000 + point)
    if name == "restoration":
        gt = _tensor((rng.random((2, 3, 4, 5, 5)) < 0.2).astype(np.float64))
        mask = torch.tensor([[True, True, True], [True, True, False]])
        return (lambda p: restoration_loss(torch.sigmoid(p["logits"]), gt, mask)), {
            "logits": _tensor(rng.normal(0.0, 1.5, (2, 3, 4, 5, 5)))
        }
    if name == "alignment":
        d = rng.uniform(0.5, 1.5, (5, 5))
        d = np.triu(d, 1) + np.triu(d, 1).T
        target = _tensor(d)
        return (lambda p: alignment_loss(p["latents"], target)), {"latents": _tensor(rng.normal(size=(5, 8)))}
    if name == "stage1":
        batch = _suite_batch(seed + point)
        target = _tensor(np.array([[0.0, 0.7], [0.7, 0.0]]))
        tcfg = TrainConfig()
        params = init_params(GRADCHECK_MODEL, seed * 1000 + point)
        return (lambda p: stage1_objective(p, batch, target, tcfg, GRADCHECK_MODEL).total), params
    if name == "focal":
        logits, labels = _focal_inputs(rng)
        y = _tensor(labels)
        return (lambda p: focal_loss(torch.sigmoid(p["logits"]), y).loss), {"logits": _tensor(logits)}
    if name == "smooth_l1":
        gt = _tensor(rng.normal(size=6))
        diff = _tensor(_away_from_kink(rng, (6,)))
        return (lambda p: smooth_l1(p["pred"], gt)), {"pred": gt + diff}
    if name == "perception":
        logits, labels = _focal_inputs(rng)
        y = _tensor(labels)
        reg_gt = _tensor(rng.normal(size=(12, 4)))
        reg_pred = reg_gt + _tensor(_away_from_kink(rng, (12, 4)))

        def perception(p: dict[str, torch.Tensor]) -> torch.Tensor:
            cls = focal_loss(torch.sigmoid(p["logits"]), y).loss
            return perception_loss(cls, smooth_l1_positives(p["reg"], reg_gt, y))

        return perception, {"logits": _tensor(logits), "reg": reg_pred}
    if name == "trajectory":
        path_gt = _tensor(rng.normal(size=(N_PATH, 2)))
        speed_gt = _tensor(rng.normal(size=(N_SPEED, 2)))

        def trajectory(p: dict[str, torch.Tensor]) -> torch.Tensor:
            return trajectory_loss(TrajectoryBatch(p["path"], path_gt, p["speed"], speed_gt))

        return trajectory, {
            "path": _tensor(rng.normal(size=(N_PATH, 2))),
            "speed": _tensor(rng.normal(size=(N_SPEED, 2))),
        }
    raise ConfigError("Unknown grad-check objective", details=f"{name!r}; allowed: {', '.join(OBJECTIVES)}")


OBJECTIVES = ("restoration", "alignment", "stage1", "focal", "smooth_l1", "perception", "trajectory")
DEFAULT_STEP = 1e-3
# The ReLU encoder has kinks everywhere; a shorter step straddles fewer of them.
OBJECTIVE_STEPS = {"stage1": 1e-4}


def run_suite(
    objectives: Sequence[str] = OBJECTIVES,
    points: int = 10,
    seed: int = 1,
    step: float | None = None,
    samples: int = 200,
) -> list[GradCheckRow]:
    """Grad-check every objective at ``points`` random evaluation points.

    Without an explicit ``step`` each objective uses its entry in
    ``OBJECTIVE_STEPS``, falling back to ``DEFAULT_STEP``.
    """
    rows = []
    for name in objectives:
        for point in range(points):
            loss_fn, at = objective_points(name, point, seed)
            h = step if step is not None else OBJECTIVE_STEPS.get(name, DEFAULT_STEP)
            result = grad_check(loss_fn, at, step=h, samples=samples, seed=seed + point)
            rows.append(GradCheckRow(name, point, result.max_rel_error, result.coordinates, result.skipped))
        worst = max(r.max_rel_error for r in rows if r.objective == name)
        logger.info("grad-check %s: max relative error %.3g over %d points", name, worst, points)
    return rows
