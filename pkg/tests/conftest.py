"""Shared fixtures: hand-built frames and a small generated dataset."""

import pytest

from scenario_rag.scenario_model import (
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
from scenario_rag.synth_data import GeneratorConfig, generate_dataset


def ego(speed: float = 10.0) -> EntityNode:
    return EntityNode(0, EntityKind.EGO, EgoState(speed=speed, heading=0.0))


def lane(entity_id: int, lane_id: int, y: float, width: float = 3.5) -> EntityNode:
    points = ((-30.0, y), (30.0, y), (90.0, y))
    return EntityNode(entity_id, EntityKind.LANE, LaneState(points, lane_id, width))


def vehicle(entity_id: int, x: float, y: float, speed: float = 10.0) -> EntityNode:
    return EntityNode(entity_id, EntityKind.VEHICLE, VehicleState(x, y, speed, 0.0, 4.5, 1.8))


def sign(entity_id: int, x: float, y: float, cls: SignClass = SignClass.STOP, limit: float | None = None) -> EntityNode:
    return EntityNode(entity_id, EntityKind.SIGN, SignState(x, y, cls, limit))


def signal(entity_id: int, x: float, y: float, phase: SignalPhase = SignalPhase.RED) -> EntityNode:
    return EntityNode(entity_id, EntityKind.SIGNAL, SignalState(x, y, phase))


def following_frame(t: int, gap: float = 20.0) -> FrameRecord:
    """Ego in lane 10 following vehicle 1, with vehicle 2 in the left lane."""
    return FrameRecord(
        timestamp=t,
        entities=(
            ego(),
            lane(10, 1, 0.0),
            lane(11, 2, 3.5),
            vehicle(1, gap, 0.2),
            vehicle(2, 10.0, 3.5),
        ),
    )


def scenario_from(scenario_id: str, records: list[FrameRecord]) -> ScenarioPrimitive:
    return ScenarioPrimitive(scenario_id, tuple(build_graph(r) for r in records), {"cluster_id": "0"})


@pytest.fixture
def following_scenario() -> ScenarioPrimitive:
    return scenario_from("follow-a", [following_frame(t, 20.0 - t) for t in range(4)])


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(GeneratorConfig(seed=7, scenarios_per_cluster=4))
