"""Scenario primitives and ego-centric semantic graphs.

A :class:`ScenarioPrimitive` is an ordered sequence of :class:`SemanticGraph`
frames sharing persistent entity ids.  Graphs are built from plain frame
records by deterministic geometric rules (:func:`build_graph`), put into a
canonical node/edge order (:func:`canonicalize`), checked by
:func:`validate`, and stored one scenario per line in JSONL.

Coordinates are ego-frame metres: x forward, y left, ego at the origin.
"""

import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import (
    DuplicateEgo,
    InvalidState,
    IoError,
    MissingEgo,
    ParseError,
    ValidationError,
)
from .utils import ensure_parent, read_text

logger = logging.getLogger(__name__)


# ======================================================================
# Kinds
# ======================================================================


class EntityKind(str, Enum):
    EGO = "ego"
    VEHICLE = "vehicle"
    SIGN = "sign"
    SIGNAL = "signal"
    LANE = "lane"


class RelationKind(str, Enum):
    LEAD = "lead"
    ACTIVE = "active"
    INERT = "inert"
    ON = "on"


class SignClass(str, Enum):
    STOP = "stop"
    YIELD = "yield"
    SPEED_LIMIT = "speed_limit"


class SignalPhase(str, Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"


# Canonical orders.  Signals rank before signs.
KIND_RANK: dict[EntityKind, int] = {
    EntityKind.EGO: 0,
    EntityKind.VEHICLE: 1,
    EntityKind.SIGNAL: 2,
    EntityKind.SIGN: 3,
    EntityKind.LANE: 4,
}
RELATION_RANK: dict[RelationKind, int] = {
    RelationKind.LEAD: 0,
    RelationKind.ACTIVE: 1,
    RelationKind.INERT: 2,
    RelationKind.ON: 3,
}
ENTITY_KINDS: tuple[EntityKind, ...] = tuple(sorted(EntityKind, key=KIND_RANK.__getitem__))
RELATION_KINDS: tuple[RelationKind, ...] = tuple(sorted(RelationKind, key=RELATION_RANK.__getitem__))

EGO_ID = 0


# ======================================================================
# Physical states
# ======================================================================


@dataclass(frozen=True)
class EgoState:
    speed: float
    heading: float

    @property
    def position(self) -> tuple[float, float]:
        return (0.0, 0.0)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    speed: float
    heading: float
    length: float
    width: float

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class SignState:
    x: float
    y: float
    sign_class: SignClass
    limit: float | None = None

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class SignalState:
    x: float
    y: float
    phase: SignalPhase

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class LaneState:
    centerline: tuple[tuple[float, float], ...]
    lane_id: int
    width: float

    @property
    def position(self) -> tuple[float, float]:
        """Nearest centerline point to the ego (origin)."""
        return point_to_polyline(0.0, 0.0, self.centerline)[1]


PhysicalState = EgoState | VehicleState | SignState | SignalState | LaneState

STATE_TYPES: dict[EntityKind, type] = {
    EntityKind.EGO: EgoState,
    EntityKind.VEHICLE: VehicleState,
    EntityKind.SIGN: SignState,
    EntityKind.SIGNAL: SignalState,
    EntityKind.LANE: LaneState,
}


def point_to_polyline(
    px: float, py: float, points: Sequence[tuple[float, float]]
) -> tuple[float, tuple[float, float]]:
    """Return (distance, nearest point) from (px, py) to a polyline."""
    best = math.inf
    nearest = (float(points[0][0]), float(points[0][1]))
    for (ax, ay), (bx, by) in zip(points[:-1], points[1:]):
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        t = 0.0 if seg2 == 0.0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / seg2))
        cx, cy = ax + t * dx, ay + t * dy
        d = math.hypot(px - cx, py - cy)
        if d < best:
            best = d
            nearest = (cx, cy)
    return best, nearest


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def state_problems(kind: EntityKind, state: Any) -> list[tuple[str, Any]]:
    """List (field, value) pairs that break the PhysicalState invariants."""
    expected = STATE_TYPES[kind]
    if not isinstance(state, expected):
        return [("state", type(state).__name__)]

    problems: list[tuple[str, Any]] = []
    if isinstance(state, EgoState):
        if not _finite(state.speed) or state.speed < 0:
            problems.append(("speed", state.speed))
        if not _finite(state.heading) or not (-math.pi <= state.heading < math.pi):
            problems.append(("heading", state.heading))
    elif isinstance(state, VehicleState):
        if not _finite(state.x, state.y):
            problems.append(("position", (state.x, state.y)))
        if not _finite(state.speed) or state.speed < 0:
            problems.append(("speed", state.speed))
        if not _finite(state.heading):
            problems.append(("heading", state.heading))
        if not _finite(state.length) or state.length <= 0:
            problems.append(("length", state.length))
        if not _finite(state.width) or state.width <= 0:
            problems.append(("width", state.width))
    elif isinstance(state, SignState):
        if not _finite(state.x, state.y):
            problems.append(("position", (state.x, state.y)))
        if state.sign_class is SignClass.SPEED_LIMIT:
            if state.limit is None or not _finite(state.limit) or state.limit <= 0:
                problems.append(("limit", state.limit))
        elif state.limit is not None:
            problems.append(("limit", state.limit))
    elif isinstance(state, SignalState):
        if not _finite(state.x, state.y):
            problems.append(("position", (state.x, state.y)))
    elif isinstance(state, LaneState):
        pts = state.centerline
        if len(pts) < 2:
            problems.append(("centerline", len(pts)))
        elif not all(_finite(x, y) for x, y in pts):
            problems.append(("centerline", "non-finite point"))
        elif any(a == b for a, b in zip(pts[:-1], pts[1:])):
            problems.append(("centerline", "repeated consecutive point"))
        if state.lane_id < 0:
            problems.append(("lane_id", state.lane_id))
        if not _finite(state.width) or state.width <= 0:
            problems.append(("width", state.width))
    return problems


# ======================================================================
# Graph types
# ======================================================================


@dataclass(frozen=True)
class EntityNode:
    entity_id: int
    kind: EntityKind
    state: PhysicalState

    @property
    def position(self) -> tuple[float, float]:
        return self.state.position


@dataclass(frozen=True)
class RelationEdge:
    src: int
    dst: int
    kind: RelationKind


@dataclass(frozen=True)
class SemanticGraph:
    nodes: tuple[EntityNode, ...]
    edges: tuple[RelationEdge, ...]
    timestamp: int

    def node(self, entity_id: int) -> EntityNode:
        for n in self.nodes:
            if n.entity_id == entity_id:
                return n
        raise KeyError(entity_id)


@dataclass(frozen=True)
class ScenarioPrimitive:
    scenario_id: str
    frames: tuple[SemanticGraph, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class FrameRecord:
    """Plain list of entities with states for one frame (perception stand-in)."""

    timestamp: int
    entities: tuple[EntityNode, ...]


@dataclass(frozen=True)
class EdgeRules:
    """Fixed thresholds of the edge-synthesis rules."""

    governance_radius_m: float = 50.0
    governance_lateral_m: float = 6.0
    default_lane_width_m: float = 3.5


DEFAULT_RULES = EdgeRules()


@dataclass(frozen=True)
class Violation:
    """One broken invariant; ``subject`` names the offending element."""

    code: str
    subject: Any = None
    message: str = field(default="", compare=False)

    def __str__(self) -> str:
        return f"{self.code}({self.subject})" if self.subject is not None else self.code


# ======================================================================
# Construction
# ======================================================================


def _distance_to_ego(node: EntityNode) -> float:
    if node.kind is EntityKind.LANE:
        return point_to_polyline(0.0, 0.0, node.state.centerline)[0]
    x, y = node.position
    return math.hypot(x, y)


def _nearest_lane(px: float, py: float, lanes: Sequence[EntityNode]) -> EntityNode | None:
    best: tuple[float, int] | None = None
    chosen = None
    for lane in lanes:
        d = point_to_polyline(px, py, lane.state.centerline)[0]
        key = (d, lane.entity_id)
        if best is None or key < best:
            best, chosen = key, lane
    return chosen


def build_graph(record: FrameRecord, rules: EdgeRules = DEFAULT_RULES) -> SemanticGraph:
    """Synthesize the typed edges of one frame and return the canonical graph.

    Rules:
      * On: ego -> laterally nearest lane; each vehicle -> its nearest lane.
      * Lead: ego -> nearest vehicle ahead (x > 0) with |y| below half the
        ego lane width.
      * Active: sign/signal -> ego when within the governance radius, ahead,
        and laterally within ``governance_lateral_m`` of the ego lane.
      * Inert: any other sign/signal within the governance radius.
    """
    egos = [e for e in record.entities if e.kind is EntityKind.EGO]
    if not egos:
        raise MissingEgo(record.timestamp)
    if len(egos) > 1:
        raise DuplicateEgo(record.timestamp)
    if egos[0].entity_id != EGO_ID:
        raise InvalidState("entity_id", egos[0].entity_id)

    seen: set[int] = set()
    for entity in record.entities:
        if entity.entity_id < 0 or entity.entity_id in seen:
            raise InvalidState("entity_id", entity.entity_id)
        seen.add(entity.entity_id)
        problems = state_problems(entity.kind, entity.state)
        if problems:
            name, value = problems[0]
            raise InvalidState(name, value, entity_id=entity.entity_id)

    lanes = [e for e in record.entities if e.kind is EntityKind.LANE]
    vehicles = [e for e in record.entities if e.kind is EntityKind.VEHICLE]
    markers = [e for e in record.entities if e.kind in (EntityKind.SIGN, EntityKind.SIGNAL)]

    edges: list[RelationEdge] = []

    ego_lane = _nearest_lane(0.0, 0.0, lanes)
    if ego_lane is not None:
        edges.append(RelationEdge(EGO_ID, ego_lane.entity_id, RelationKind.ON))
    for v in vehicles:
        lane = _nearest_lane(v.state.x, v.state.y, lanes)
        if lane is not None:
            edges.append(RelationEdge(v.entity_id, lane.entity_id, RelationKind.ON))

    half_width = 0.5 * (ego_lane.state.width if ego_lane is not None else rules.default_lane_width_m)
    ahead = [v for v in vehicles if v.state.x > 0 and abs(v.state.y) < half_width]
    if ahead:
        lead = min(ahead, key=lambda v: (math.hypot(v.state.x, v.state.y), v.entity_id))
        edges.append(RelationEdge(EGO_ID, lead.entity_id, RelationKind.LEAD))

    for m in markers:
        x, y = m.position
        if math.hypot(x, y) > rules.governance_radius_m:
            continue
        if ego_lane is not None:
            lateral = point_to_polyline(x, y, ego_lane.state.centerline)[0]
        else:
            lateral = abs(y)
        governing = x > 0 and lateral <= rules.governance_lateral_m
        kind = RelationKind.ACTIVE if governing else RelationKind.INERT
        edges.append(RelationEdge(m.entity_id, EGO_ID, kind))

    graph = SemanticGraph(nodes=tuple(record.entities), edges=tuple(edges), timestamp=record.timestamp)
    return canonicalize(graph)


# ======================================================================
# Canonical form
# ======================================================================


def _node_key(node: EntityNode) -> tuple[int, float, int]:
    return (KIND_RANK[node.kind], _distance_to_ego(node), node.entity_id)


def _edge_key(edge: RelationEdge, index: Mapping[int, int]) -> tuple[int, int, int]:
    return (index[edge.src], index[edge.dst], RELATION_RANK[edge.kind])


def canonicalize(g: SemanticGraph) -> SemanticGraph:
    """Order nodes ego-first by (kind rank, distance to ego, id) and sort edges.

    Idempotent and independent of the input node/edge order.
    """
    violations = validate(g)
    if violations:
        raise ValidationError(violations, subject=f"frame t={g.timestamp}")
    nodes = tuple(sorted(g.nodes, key=_node_key))
    index = {n.entity_id: i for i, n in enumerate(nodes)}
    edges = tuple(sorted(g.edges, key=lambda e: _edge_key(e, index)))
    return SemanticGraph(nodes=nodes, edges=edges, timestamp=g.timestamp)


def is_canonical(g: SemanticGraph) -> bool:
    """Cheap check that ``g`` is already in canonical order (no validation)."""
    keys = [_node_key(n) for n in g.nodes]
    if keys != sorted(keys):
        return False
    index = {n.entity_id: i for i, n in enumerate(g.nodes)}
    try:
        ekeys = [_edge_key(e, index) for e in g.edges]
    except KeyError:
        return False
    return ekeys == sorted(ekeys)


def canonical_rank(g: SemanticGraph) -> dict[int, tuple[EntityKind, int]]:
    """Map entity_id -> (kind, position among nodes of that kind)."""
    counts: Counter[EntityKind] = Counter()
    ranks: dict[int, tuple[EntityKind, int]] = {}
    for n in g.nodes:
        ranks[n.entity_id] = (n.kind, counts[n.kind])
        counts[n.kind] += 1
    return ranks


def canonicalize_scenario(s: ScenarioPrimitive) -> ScenarioPrimitive:
    return ScenarioPrimitive(
        scenario_id=s.scenario_id,
        frames=tuple(canonicalize(f) for f in s.frames),
        metadata=dict(s.metadata),
    )


# ======================================================================
# Validation
# ======================================================================


def validate(g: SemanticGraph) -> list[Violation]:
    """Return every SemanticGraph invariant violation; empty iff valid."""
    out: list[Violation] = []
    if g.timestamp < 0:
        out.append(Violation("NegativeTimestamp", g.timestamp, "frame index must be >= 0"))

    egos = [n for n in g.nodes if n.kind is EntityKind.EGO]
    if not egos:
        out.append(Violation("MissingEgo", None, "graph has no ego node"))
    elif len(egos) > 1:
        out.append(Violation("DuplicateEgo", None, f"{len(egos)} ego nodes"))
    elif egos[0].entity_id != EGO_ID:
        out.append(Violation("EgoIdNotZero", egos[0].entity_id, "ego must have entity_id 0"))

    ids: set[int] = set()
    for n in g.nodes:
        if n.entity_id < 0:
            out.append(Violation("NegativeEntityId", n.entity_id, "entity ids are non-negative"))
        if n.entity_id in ids and not (n.kind is EntityKind.EGO and len(egos) > 1):
            out.append(Violation("DuplicateNodeId", n.entity_id, "entity ids must be unique"))
        ids.add(n.entity_id)
        for name, value in state_problems(n.kind, n.state):
            code = "StateKindMismatch" if name == "state" else "InvalidState"
            out.append(Violation(code, f"{n.entity_id}:{name}", f"value={value!r}"))

    seen: set[tuple[int, int, RelationKind]] = set()
    for e in g.edges:
        if e.src == e.dst:
            out.append(Violation("SelfLoop", e.src, "edges must join distinct nodes"))
        for endpoint in (e.src, e.dst):
            if endpoint not in ids:
                out.append(Violation("DanglingEdge", endpoint, "edge endpoint not in node set"))
        triple = (e.src, e.dst, e.kind)
        if triple in seen:
            out.append(Violation("DuplicateEdge", f"{e.src}->{e.dst}:{e.kind.value}", "repeated edge"))
        seen.add(triple)
    return out


def validate_scenario(s: ScenarioPrimitive) -> list[Violation]:
    """Frame violations plus the sequence invariants of a ScenarioPrimitive."""
    out: list[Violation] = []
    if not s.scenario_id:
        out.append(Violation("EmptyScenarioId", None, "scenario_id must be non-empty"))
    if not s.frames:
        out.append(Violation("EmptyScenario", s.scenario_id, "a scenario needs at least one frame"))
        return out

    kinds: dict[int, EntityKind] = {}
    previous: int | None = None
    for frame in s.frames:
        for v in validate(frame):
            out.append(Violation(v.code, f"t={frame.timestamp}:{v.subject}", v.message))
        if previous is not None and frame.timestamp <= previous:
            out.append(Violation("NonIncreasingTimestamp", frame.timestamp, "timestamps must increase"))
        previous = frame.timestamp
        for n in frame.nodes:
            known = kinds.setdefault(n.entity_id, n.kind)
            if known is not n.kind:
                out.append(Violation("EntityKindChanged", n.entity_id, f"{known.value} -> {n.kind.value}"))
    return out


# ======================================================================
# JSONL format
# ======================================================================

_STATE_KEYS: dict[EntityKind, tuple[frozenset[str], frozenset[str]]] = {
    EntityKind.EGO: (frozenset({"speed", "heading"}), frozenset()),
    EntityKind.VEHICLE: (frozenset({"x", "y", "speed", "heading", "length", "width"}), frozenset()),
    EntityKind.SIGN: (frozenset({"x", "y", "sign_class"}), frozenset({"value"})),
    EntityKind.SIGNAL: (frozenset({"x", "y", "phase"}), frozenset()),
    EntityKind.LANE: (frozenset({"centerline", "lane_id", "width"}), frozenset()),
}


def state_to_json(state: PhysicalState) -> dict[str, Any]:
    if isinstance(state, EgoState):
        return {"speed": state.speed, "heading": state.heading}
    if isinstance(state, VehicleState):
        return {
            "x": state.x,
            "y": state.y,
            "speed": state.speed,
            "heading": state.heading,
            "length": state.length,
            "width": state.width,
        }
    if isinstance(state, SignState):
        out: dict[str, Any] = {"x": state.x, "y": state.y, "sign_class": state.sign_class.value}
        if state.limit is not None:
            out["value"] = state.limit
        return out
    if isinstance(state, SignalState):
        return {"x": state.x, "y": state.y, "phase": state.phase.value}
    return {
        "centerline": [[x, y] for x, y in state.centerline],
        "lane_id": state.lane_id,
        "width": state.width,
    }


def scenario_to_json(s: ScenarioPrimitive) -> dict[str, Any]:
    return {
        "scenario_id": s.scenario_id,
        "metadata": {k: s.metadata[k] for k in sorted(s.metadata)},
        "frames": [
            {
                "t": f.timestamp,
                "nodes": [
                    {"id": n.entity_id, "kind": n.kind.value, "state": state_to_json(n.state)}
                    for n in f.nodes
                ],
                "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in f.edges],
            }
            for f in s.frames
        ],
    }


def dumps_scenario(s: ScenarioPrimitive) -> str:
    """Serialize one scenario as a single JSON line (no trailing newline)."""
    return json.dumps(scenario_to_json(s), separators=(",", ":"), allow_nan=False)


class _Reader:
    """Strict decoder for one JSONL line; every failure names the field path."""

    def __init__(self, line: int) -> None:
        self.line = line

    def fail(self, where: str, reason: str) -> ParseError:
        return ParseError(self.line, f"{where}: {reason}")

    def obj(self, value: Any, where: str, required: Iterable[str], optional: Iterable[str] = ()) -> dict:
        if not isinstance(value, dict):
            raise self.fail(where, "expected an object")
        required = set(required)
        allowed = required | set(optional)
        unknown = sorted(set(value) - allowed)
        if unknown:
            raise self.fail(where, f"unknown key(s) {unknown}")
        missing = sorted(required - set(value))
        if missing:
            raise self.fail(where, f"missing key(s) {missing}")
        return value

    def integer(self, value: Any, where: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(where, f"expected an integer, got {value!r}")
        return value

    def number(self, value: Any, where: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(where, f"expected a number, got {value!r}")
        return float(value)

    def string(self, value: Any, where: str) -> str:
        if not isinstance(value, str):
            raise self.fail(where, f"expected a string, got {value!r}")
        return value

    def array(self, value: Any, where: str) -> list:
        if not isinstance(value, list):
            raise self.fail(where, "expected an array")
        return value

    def enum(self, enum_type: type[Enum], value: Any, where: str) -> Any:
        text = self.string(value, where)
        try:
            return enum_type(text)
        except ValueError:
            choices = ", ".join(m.value for m in enum_type)
            raise self.fail(where, f"unknown value {text!r} (expected one of {choices})") from None

    def state(self, kind: EntityKind, value: Any, where: str) -> PhysicalState:
        required, optional = _STATE_KEYS[kind]
        obj = self.obj(value, where, required, optional)
        if kind is EntityKind.EGO:
            return EgoState(speed=self.number(obj["speed"], f"{where}.speed"),
                            heading=self.number(obj["heading"], f"{where}.heading"))
        if kind is EntityKind.VEHICLE:
            return VehicleState(**{k: self.number(obj[k], f"{where}.{k}") for k in
                                   ("x", "y", "speed", "heading", "length", "width")})
        if kind is EntityKind.SIGN:
            limit = obj.get("value")
            return SignState(
                x=self.number(obj["x"], f"{where}.x"),
                y=self.number(obj["y"], f"{where}.y"),
                sign_class=self.enum(SignClass, obj["sign_class"], f"{where}.sign_class"),
                limit=None if limit is None else self.number(limit, f"{where}.value"),
            )
        if kind is EntityKind.SIGNAL:
            return SignalState(
                x=self.number(obj["x"], f"{where}.x"),
                y=self.number(obj["y"], f"{where}.y"),
                phase=self.enum(SignalPhase, obj["phase"], f"{where}.phase"),
            )
        points = []
        for i, p in enumerate(self.array(obj["centerline"], f"{where}.centerline")):
            p = self.array(p, f"{where}.centerline[{i}]")
            if len(p) != 2:
                raise self.fail(f"{where}.centerline[{i}]", "expected [x, y]")
            points.append((self.number(p[0], f"{where}.centerline[{i}]"),
                           self.number(p[1], f"{where}.centerline[{i}]")))
        return LaneState(
            centerline=tuple(points),
            lane_id=self.integer(obj["lane_id"], f"{where}.lane_id"),
            width=self.number(obj["width"], f"{where}.width"),
        )

    def scenario(self, value: Any) -> ScenarioPrimitive:
        obj = self.obj(value, "scenario", ("scenario_id", "metadata", "frames"))
        scenario_id = self.string(obj["scenario_id"], "scenario_id")
        if not isinstance(obj["metadata"], dict):
            raise self.fail("metadata", "expected an object")
        metadata = {k: self.string(v, f"metadata.{k}") for k, v in obj["metadata"].items()}

        frames = []
        for fi, fv in enumerate(self.array(obj["frames"], "frames")):
            fw = f"frames[{fi}]"
            fobj = self.obj(fv, fw, ("t", "nodes", "edges"))
            nodes = []
            for ni, nv in enumerate(self.array(fobj["nodes"], f"{fw}.nodes")):
                nw = f"{fw}.nodes[{ni}]"
                nobj = self.obj(nv, nw, ("id", "kind", "state"))
                kind = self.enum(EntityKind, nobj["kind"], f"{nw}.kind")
                nodes.append(EntityNode(
                    entity_id=self.integer(nobj["id"], f"{nw}.id"),
                    kind=kind,
                    state=self.state(kind, nobj["state"], f"{nw}.state"),
                ))
            edges = []
            for ei, ev in enumerate(self.array(fobj["edges"], f"{fw}.edges")):
                ew = f"{fw}.edges[{ei}]"
                eobj = self.obj(ev, ew, ("src", "dst", "kind"))
                edges.append(RelationEdge(
                    src=self.integer(eobj["src"], f"{ew}.src"),
                    dst=self.integer(eobj["dst"], f"{ew}.dst"),
                    kind=self.enum(RelationKind, eobj["kind"], f"{ew}.kind"),
                ))
            frames.append(SemanticGraph(tuple(nodes), tuple(edges), self.integer(fobj["t"], f"{fw}.t")))
        return ScenarioPrimitive(scenario_id=scenario_id, frames=tuple(frames), metadata=metadata)


def loads_scenario(text: str, line: int = 1) -> ScenarioPrimitive:
    """Parse, validate and canonicalize one JSONL line."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(line, f"invalid JSON: {exc.msg} (column {exc.colno})") from exc
    scenario = _Reader(line).scenario(raw)
    violations = validate_scenario(scenario)
    if violations:
        raise ValidationError(violations, subject=f"line {line} ({scenario.scenario_id})")
    return canonicalize_scenario(scenario)


def write_jsonl(dataset: Sequence[ScenarioPrimitive], path: str | Path) -> Path:
    """Write scenarios one per line in canonical form."""
    lines = []
    for s in dataset:
        violations = validate_scenario(s)
        if violations:
            raise ValidationError(violations, subject=s.scenario_id)
        lines.append(dumps_scenario(canonicalize_scenario(s)) + "\n")

    p = ensure_parent(path)
    try:
        with p.open("w", encoding="utf-8") as fh:
            fh.writelines(lines)
    except OSError as exc:
        raise IoError(str(p), str(exc)) from exc
    logger.info("Wrote %d scenarios to %s", len(lines), p)
    return p


def read_jsonl(path: str | Path) -> list[ScenarioPrimitive]:
    """Read a scenario JSONL file; blank lines are skipped."""
    p = Path(path)
    text = read_text(p)
    scenarios = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            scenarios.append(loads_scenario(line, lineno))
    logger.debug("Read %d scenarios from %s", len(scenarios), p)
    return scenarios
