"""Seeded generator of topology-clustered, style-confounded scenario datasets.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence``; scenario ``i`` of a dataset uses the stream seeded by
``cfg.seed XOR i``, so datasets reproduce across platforms and every
scenario can be generated independently.

Each cluster follows one template whose edge topology per frame is fixed;
continuous attributes are jittered with truncated Gaussian noise.  The
visual style only changes surface attributes (vehicle extents, the class of
a roadside non-governing sign, lane widths), so styles and clusters are
independent by construction.
"""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .scenario_model import (
    EGO_ID,
    EgoState,
    EntityKind,
    EntityNode,
    FrameRecord,
    LaneState,
    ScenarioPrimitive,
    SignalPhase,
    SignalState,
    SignClass,
    SignState,
    VehicleState,
    build_graph,
)
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

D_VIS = 64
LABELS_HEADER = ("scenario_id", "cluster_id", "style_id")
_U64 = (1 << 64) - 1


class Template(str, Enum):
    CAR_FOLLOWING = "car_following"
    SIGNALLED_INTERSECTION = "signalled_intersection"
    LANE_CHANGE = "lane_change"
    STOP_SIGN = "stop_sign"
    MERGE = "merge"


@dataclass(frozen=True)
class Jitter:
    """Noise scales (standard deviations) of the continuous attributes."""

    position_m: float = 0.3
    speed_mps: float = 0.5
    heading_rad: float = 0.02
    extent_m: float = 0.02


@dataclass(frozen=True)
class ClusterSpec:
    cluster_id: int
    template: Template
    frame_count_range: tuple[int, int] = (8, 12)
    jitter: Jitter = field(default_factory=Jitter)

    def check(self) -> None:
        lo, hi = self.frame_count_range
        if lo < 1 or lo > hi:
            raise ConfigError("Invalid frame_count_range", details=f"cluster {self.cluster_id}: {lo}..{hi}")
        j = self.jitter
        if min(j.position_m, j.speed_mps, j.heading_rad, j.extent_m) < 0:
            raise ConfigError("Noise scales must be >= 0", details=f"cluster {self.cluster_id}: {j}")


DEFAULT_CLUSTERS: tuple[ClusterSpec, ...] = (
    ClusterSpec(0, Template.CAR_FOLLOWING),
    ClusterSpec(1, Template.SIGNALLED_INTERSECTION),
    ClusterSpec(2, Template.LANE_CHANGE),
)


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 1
    clusters: tuple[ClusterSpec, ...] = DEFAULT_CLUSTERS
    scenarios_per_cluster: int = 100
    visual_styles: int = 4
    id_prefix: str = "scn"

    def check(self) -> None:
        if not 0 <= self.seed <= _U64:
            raise ConfigError("Seed must be an unsigned 64-bit integer", details=str(self.seed))
        if self.scenarios_per_cluster < 1:
            raise ConfigError("scenarios_per_cluster must be >= 1")
        if self.visual_styles < 2:
            raise ConfigError("visual_styles must be >= 2")
        if not self.clusters:
            raise ConfigError("At least one cluster is required")
        ids = [c.cluster_id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise ConfigError("cluster_ids must be unique", details=str(ids))
        for c in self.clusters:
            c.check()


@dataclass
class LabeledDataset:
    scenarios: list[ScenarioPrimitive]
    labels: dict[str, int]
    styles: dict[str, int]


# ======================================================================
# Style surface
# ======================================================================

_DECOR_SIGNS: tuple[tuple[SignClass, float | None], ...] = (
    (SignClass.YIELD, None),
    (SignClass.SPEED_LIMIT, 30.0),
    (SignClass.SPEED_LIMIT, 50.0),
    (SignClass.SPEED_LIMIT, 70.0),
)


@dataclass(frozen=True)
class StyleSurface:
    lane_width: float
    vehicle_length: float
    vehicle_width: float
    decor_sign: tuple[SignClass, float | None]


def style_surface(style_id: int) -> StyleSurface:
    return StyleSurface(
        lane_width=3.0 + 0.25 * (style_id % 4),
        vehicle_length=3.8 + 0.5 * (style_id % 5),
        vehicle_width=1.7 + 0.1 * (style_id % 3),
        decor_sign=_DECOR_SIGNS[style_id % len(_DECOR_SIGNS)],
    )


# ======================================================================
# Template geometry
# ======================================================================

# Persistent ids per role.
_LANE_EGO, _LANE_LEFT, _LANE_SIDE = 10, 11, 12
_DECOR = 40


class _Frame:
    """Noise source and entity builders for one scenario."""

    def __init__(self, rng: np.random.Generator, jitter: Jitter, surface: StyleSurface) -> None:
        self.rng = rng
        self.jitter = jitter
        self.surface = surface
        self.lane_width = surface.lane_width + self.noise(jitter.extent_m)

    def noise(self, scale: float, bound: float | None = None) -> float:
        if scale == 0:
            return 0.0
        limit = 2.5 * scale if bound is None else min(2.5 * scale, bound)
        return float(np.clip(self.rng.normal(0.0, scale), -limit, limit))

    def lateral(self) -> float:
        # Keeps every lateral offset inside a tenth of a lane.
        return self.noise(self.jitter.position_m, 0.1 * self.lane_width)

    def longitudinal(self) -> float:
        return self.noise(self.jitter.position_m)

    def ego(self, speed: float) -> EntityNode:
        heading = self.noise(self.jitter.heading_rad, 1.0)
        return EntityNode(EGO_ID, EntityKind.EGO, EgoState(speed=max(0.0, speed), heading=heading))

    def lane(self, entity_id: int, lane_id: int, center_y: float) -> EntityNode:
        pts = ((-30.0, center_y), (30.0, center_y), (90.0, center_y))
        return EntityNode(entity_id, EntityKind.LANE, LaneState(pts, lane_id, self.lane_width))

    def cross_lane(self, entity_id: int, lane_id: int, center_x: float) -> EntityNode:
        pts = ((center_x, -40.0), (center_x, 0.0), (center_x, 40.0))
        return EntityNode(entity_id, EntityKind.LANE, LaneState(pts, lane_id, self.lane_width))

    def vehicle(self, entity_id: int, x: float, y: float, speed: float, heading: float = 0.0) -> EntityNode:
        j = self.jitter
        return EntityNode(entity_id, EntityKind.VEHICLE, VehicleState(
            x=x,
            y=y,
            speed=max(0.0, speed + self.noise(j.speed_mps)),
            heading=heading + self.noise(j.heading_rad, 1.0),
            length=self.surface.vehicle_length + self.noise(j.extent_m),
            width=self.surface.vehicle_width + self.noise(j.extent_m),
        ))

    def decor(self) -> EntityNode:
        sign_class, limit = self.surface.decor_sign
        x = -45.0 + self.longitudinal()
        y = -(0.5 * self.lane_width + 2.0) + self.lateral()
        return EntityNode(_DECOR, EntityKind.SIGN, SignState(x, y, sign_class, limit))


@dataclass(frozen=True)
class _Draws:
    """Per-scenario base values shared by all frames."""

    ego_speed: float
    gap: float
    other_speed: float


def _frame_entities(template: Template, f: _Frame, draws: _Draws, u: float) -> list[EntityNode]:
    w = f.lane_width
    j = f.jitter
    e = f.lateral()
    ego_speed = draws.ego_speed + f.noise(j.speed_mps)

    if template is Template.CAR_FOLLOWING:
        gap = draws.gap + 3.0 * math.sin(2.0 * math.pi * u) + f.longitudinal()
        return [
            f.ego(ego_speed),
            f.lane(_LANE_EGO, 1, -e),
            f.lane(_LANE_LEFT, 2, w - e),
            f.vehicle(1, gap, -e + f.lateral(), ego_speed),
            f.vehicle(2, -8.0 + 6.0 * u + f.longitudinal(), w - e + f.lateral(), draws.other_speed),
            f.decor(),
        ]

    if template is Template.SIGNALLED_INTERSECTION:
        stop_x = 40.0 - 30.0 * u + f.longitudinal()
        main_phase = SignalPhase.RED if u < 0.6 else SignalPhase.GREEN
        cross_phase = SignalPhase.GREEN if u < 0.6 else SignalPhase.RED
        return [
            f.ego(ego_speed * (1.0 - 0.5 * u)),
            f.lane(_LANE_EGO, 1, -e),
            EntityNode(20, EntityKind.SIGNAL, SignalState(stop_x, 0.5 * w + 1.5 - e + f.lateral(), main_phase)),
            EntityNode(21, EntityKind.SIGNAL, SignalState(
                45.0 - 5.0 * u + f.longitudinal(), 14.0 + f.lateral(), cross_phase)),
            f.decor(),
        ]

    if template is Template.LANE_CHANGE:
        shift = (0.15 if u < 0.5 else 0.85) * w + e
        return [
            f.ego(ego_speed),
            f.lane(_LANE_EGO, 1, -shift),
            f.lane(_LANE_LEFT, 2, w - shift),
            f.vehicle(2, draws.gap + f.longitudinal(), w - shift + f.lateral(), draws.other_speed),
            f.vehicle(3, -12.0 + f.longitudinal(), -shift + f.lateral(), ego_speed),
            f.decor(),
        ]

    if template is Template.STOP_SIGN:
        stop_x = 40.0 - 35.0 * u + f.longitudinal()
        return [
            f.ego(ego_speed * (1.0 - u)),
            f.lane(_LANE_EGO, 1, -e),
            f.cross_lane(_LANE_SIDE, 3, stop_x + 4.0),
            f.vehicle(5, stop_x + 4.0 + f.lateral(), 12.0 + f.longitudinal(), 0.0, heading=-0.5 * math.pi),
            EntityNode(30, EntityKind.SIGN, SignState(stop_x, 0.5 * w + 1.0 - e + f.lateral(), SignClass.STOP)),
            f.decor(),
        ]

    # Merge: vehicle 3 moves from the side lane into the ego lane half way.
    side = -w - e if u < 0.5 else -e
    return [
        f.ego(ego_speed),
        f.lane(_LANE_EGO, 1, -e),
        f.lane(_LANE_SIDE, 3, -w - e),
        f.vehicle(3, draws.gap + f.longitudinal(), side + f.lateral(), draws.other_speed, heading=0.1),
        f.vehicle(4, -10.0 + f.longitudinal(), -e + f.lateral(), ego_speed),
        f.decor(),
    ]


# ======================================================================
# Generation
# ======================================================================


def generate_scenario(
    spec: ClusterSpec,
    style_id: int,
    seed: int,
    scenario_id: str | None = None,
) -> ScenarioPrimitive:
    """Generate one scenario of ``spec.template`` in visual style ``style_id``."""
    spec.check()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & _U64)))
    lo, hi = spec.frame_count_range
    frame_count = int(rng.integers(lo, hi + 1))
    draws = _Draws(
        ego_speed=float(rng.uniform(8.0, 14.0)),
        gap=float(rng.uniform(15.0, 30.0)),
        other_speed=float(rng.uniform(6.0, 16.0)),
    )
    frame = _Frame(rng, spec.jitter, style_surface(style_id))

    frames = []
    for t in range(frame_count):
        u = t / (frame_count - 1) if frame_count > 1 else 0.0
        entities = _frame_entities(spec.template, frame, draws, u)
        frames.append(build_graph(FrameRecord(timestamp=t, entities=tuple(entities))))

    return ScenarioPrimitive(
        scenario_id=scenario_id or f"{spec.template.value}-{seed & _U64:016x}",
        frames=tuple(frames),
        metadata={
            "cluster_id": str(spec.cluster_id),
            "template": spec.template.value,
            "style_id": str(style_id),
            "seed": str(seed & _U64),
        },
    )


def _plan(cfg: GeneratorConfig) -> list[tuple[ClusterSpec, int, int, str]]:
    plan = []
    n = cfg.scenarios_per_cluster
    for ci, spec in enumerate(cfg.clusters):
        for i in range(n):
            index = ci * n + i
            plan.append((spec, i % cfg.visual_styles, cfg.seed ^ index, f"{cfg.id_prefix}-{spec.cluster_id:02d}-{i:05d}"))
    return plan


def _generate_one(item: tuple[ClusterSpec, int, int, str]) -> ScenarioPrimitive:
    spec, style, seed, scenario_id = item
    return generate_scenario(spec, style, seed, scenario_id=scenario_id)


def generate_dataset(cfg: GeneratorConfig, threads: int = 1) -> LabeledDataset:
    """Generate |clusters| x scenarios_per_cluster scenarios with round-robin styles."""
    cfg.check()
    plan = _plan(cfg)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            scenarios = list(pool.map(_generate_one, plan, chunksize=16))
    else:
        scenarios = [_generate_one(item) for item in plan]

    labels = {s.scenario_id: spec.cluster_id for s, (spec, _, _, _) in zip(scenarios, plan)}
    styles = {s.scenario_id: style for s, (_, style, _, _) in zip(scenarios, plan)}
    logger.info(
        "Generated %d scenarios (%d clusters x %d, %d styles, seed=%d)",
        len(scenarios), len(cfg.clusters), cfg.scenarios_per_cluster, cfg.visual_styles, cfg.seed,
    )
    return LabeledDataset(scenarios=scenarios, labels=labels, styles=styles)


# ======================================================================
# Visual surrogate features
# ======================================================================


def _histogram(values: Sequence[float], lo: float, hi: float, bins: int = 8) -> np.ndarray:
    if not values:
        return np.zeros(bins)
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    return counts / counts.sum()


def visual_feature(s: ScenarioPrimitive) -> np.ndarray:
    """Appearance surrogate for visual-similarity retrieval (unit norm, D_VIS wide).

    Dominated by the style one-hot and surface attribute histograms, with a
    small node-kind histogram leaking topology.
    """
    style = int(s.metadata.get("style_id", "0"))
    lane_widths, lengths, widths = [], [], []
    signs = np.zeros(4)
    kinds = np.zeros(len(EntityKind))
    kind_index = {k: i for i, k in enumerate(EntityKind)}
    for frame in s.frames:
        for n in frame.nodes:
            kinds[kind_index[n.kind]] += 1
            st = n.state
            if isinstance(st, LaneState):
                lane_widths.append(st.width)
            elif isinstance(st, VehicleState):
                lengths.append(st.length)
                widths.append(st.width)
            elif isinstance(st, SignState):
                if st.sign_class is SignClass.STOP:
                    signs[0] += 1
                elif st.sign_class is SignClass.YIELD:
                    signs[1] += 1
                else:
                    signs[2 if (st.limit or 0.0) <= 40.0 else 3] += 1

    feature = np.zeros(D_VIS)
    feature[style % 16] = 4.0
    feature[16:24] = _histogram(lane_widths, 2.8, 4.2)
    feature[24:32] = _histogram(lengths, 3.0, 7.0)
    feature[32:40] = _histogram(widths, 1.5, 2.3)
    if signs.sum() > 0:
        feature[40:44] = signs / signs.sum()
    feature[44:49] = 0.2 * kinds / max(kinds.sum(), 1.0)
    return feature / np.linalg.norm(feature)


# ======================================================================
# Labels sidecar
# ======================================================================


def write_labels(ds: LabeledDataset, path: str | Path) -> Path:
    rows = [(s.scenario_id, ds.labels[s.scenario_id], ds.styles[s.scenario_id]) for s in ds.scenarios]
    return write_csv(path, LABELS_HEADER, rows)


def read_labels(path: str | Path) -> tuple[dict[str, int], dict[str, int]]:
    """Return ``(labels, styles)`` maps from a labels CSV."""
    _, rows = read_csv(path, LABELS_HEADER)
    labels: dict[str, int] = {}
    styles: dict[str, int] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise ParseError(lineno, f"{path}: expected 3 columns, found {len(row)}")
        try:
            labels[row[0]] = int(row[1])
            styles[row[0]] = int(row[2])
        except ValueError as exc:
            raise ParseError(lineno, f"{path}: {exc}") from exc
    return labels, styles
