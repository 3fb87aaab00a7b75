"""Per-frame graph dissimilarity and Graph-DTW over scenario sequences.

Frames are compared through precomputed signatures (node-kind histogram,
typed edge triples and matched attributes keyed by (kind, canonical rank)),
so a T1 x T2 cost lattice costs one signature per frame plus cheap set and
dict operations per cell.
"""

import json
import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import ConfigError, EmptySequence, NonCanonicalInput, ParseError, TooLarge, UnknownId
from .scenario_model import (
    ENTITY_KINDS,
    KIND_RANK,
    RELATION_RANK,
    EgoState,
    ScenarioPrimitive,
    SemanticGraph,
    VehicleState,
    canonical_rank,
    is_canonical,
    scenario_to_json,
)
from .utils import fingerprint, format_float, read_csv, write_csv

logger = logging.getLogger(__name__)

POSITION_SCALE_M = 50.0
SPEED_SCALE_MPS = 20.0
BRUTE_FORCE_LIMIT = 36


@dataclass(frozen=True)
class FrameDistanceWeights:
    w_node: float = 1.0
    w_edge: float = 1.0
    w_attr: float = 0.5

    def check(self) -> None:
        values = (self.w_node, self.w_edge, self.w_attr)
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ConfigError("Frame distance weights must be finite and >= 0", details=str(values))
        if all(v == 0 for v in values):
            raise ConfigError("Frame distance weights must not all be zero")

    def cache_token(self) -> str:
        return ",".join(format_float(v) for v in (self.w_node, self.w_edge, self.w_attr))


DEFAULT_WEIGHTS = FrameDistanceWeights()


# ======================================================================
# Frame signatures
# ======================================================================

NodeKey = tuple[int, int]                 # (kind rank, rank within kind)
EdgeTriple = tuple[NodeKey, NodeKey, int]  # (src key, dst key, relation rank)


@dataclass(frozen=True)
class FrameSignature:
    kind_counts: tuple[int, ...]
    node_count: int
    edges: frozenset[EdgeTriple]
    attrs: dict[NodeKey, tuple[float, float, float]]


def _speed(state: object) -> float:
    if isinstance(state, (EgoState, VehicleState)):
        return state.speed
    return 0.0


def frame_signature(g: SemanticGraph) -> FrameSignature:
    """Summarise a canonical graph for :func:`signature_distance`."""
    if not is_canonical(g):
        raise NonCanonicalInput("graph")
    ranks = canonical_rank(g)
    keys = {eid: (KIND_RANK[kind], r) for eid, (kind, r) in ranks.items()}
    counts = [0] * len(ENTITY_KINDS)
    attrs: dict[NodeKey, tuple[float, float, float]] = {}
    for n in g.nodes:
        counts[KIND_RANK[n.kind]] += 1
        x, y = n.position
        attrs[keys[n.entity_id]] = (x, y, _speed(n.state))
    edges = frozenset((keys[e.src], keys[e.dst], RELATION_RANK[e.kind]) for e in g.edges)
    return FrameSignature(tuple(counts), len(g.nodes), edges, attrs)


def signature_distance(a: FrameSignature, b: FrameSignature, w: FrameDistanceWeights = DEFAULT_WEIGHTS) -> float:
    node_count = max(a.node_count, b.node_count)
    l1 = sum(abs(p - q) for p, q in zip(a.kind_counts, b.kind_counts))
    node_term = l1 / node_count if node_count else 0.0

    union = len(a.edges | b.edges)
    edge_term = 1.0 - len(a.edges & b.edges) / union if union else 0.0

    keys = sorted(a.attrs.keys() | b.attrs.keys())
    total = 0.0
    for key in keys:
        pa, pb = a.attrs.get(key), b.attrs.get(key)
        if pa is None or pb is None:
            total += 1.0
            continue
        dx = (pa[0] - pb[0]) / POSITION_SCALE_M
        dy = (pa[1] - pb[1]) / POSITION_SCALE_M
        dv = (pa[2] - pb[2]) / SPEED_SCALE_MPS
        total += min(1.0, math.sqrt(dx * dx + dy * dy + dv * dv))
    attr_term = total / len(keys) if keys else 0.0

    return w.w_node * node_term + w.w_edge * edge_term + w.w_attr * attr_term


def frame_distance(g1: SemanticGraph, g2: SemanticGraph, w: FrameDistanceWeights = DEFAULT_WEIGHTS) -> float:
    """Composite node-histogram / edge-Jaccard / attribute distance of two canonical graphs."""
    return signature_distance(frame_signature(g1), frame_signature(g2), w)


def scenario_signatures(s: ScenarioPrimitive) -> tuple[FrameSignature, ...]:
    if len(s.frames) == 0:
        raise EmptySequence(s.scenario_id or "scenario")
    return tuple(frame_signature(f) for f in s.frames)


def cost_lattice(
    a: Sequence[FrameSignature], b: Sequence[FrameSignature], w: FrameDistanceWeights = DEFAULT_WEIGHTS
) -> np.ndarray:
    return np.array([[signature_distance(x, y, w) for y in b] for x in a], dtype=np.float64).reshape(len(a), len(b))


# ======================================================================
# Dynamic time warping
# ======================================================================

_STEPS = ((-1, -1), (-1, 0), (0, -1))


def dtw_from_costs(costs: np.ndarray) -> float:
    """Normalised DTW over a precomputed cost lattice.

    Finds the warping path with the smallest summed cost, ties going to the
    shorter path, and returns that cost divided by the path length.
    """
    t1, t2 = costs.shape
    if t1 == 0 or t2 == 0:
        raise EmptySequence("cost lattice")
    acc = [[0.0] * t2 for _ in range(t1)]
    length = [[0] * t2 for _ in range(t1)]
    for i in range(t1):
        for j in range(t2):
            c = float(costs[i, j])
            if i == 0 and j == 0:
                acc[i][j], length[i][j] = c, 1
                continue
            best: tuple[float, int] | None = None
            for di, dj in _STEPS:
                pi, pj = i + di, j + dj
                if pi < 0 or pj < 0:
                    continue
                cand = (acc[pi][pj], length[pi][pj])
                if best is None or cand < best:
                    best = cand
            assert best is not None
            acc[i][j], length[i][j] = best[0] + c, best[1] + 1
    return acc[-1][-1] / length[-1][-1]


def signature_dtw(
    a: Sequence[FrameSignature], b: Sequence[FrameSignature], w: FrameDistanceWeights = DEFAULT_WEIGHTS
) -> float:
    return dtw_from_costs(cost_lattice(a, b, w))


def graph_dtw(s1: ScenarioPrimitive, s2: ScenarioPrimitive, w: FrameDistanceWeights = DEFAULT_WEIGHTS) -> float:
    """Path-length-normalised Graph-DTW between two canonical scenarios."""
    return signature_dtw(scenario_signatures(s1), scenario_signatures(s2), w)


def dtw_brute_force(s1: ScenarioPrimitive, s2: ScenarioPrimitive, w: FrameDistanceWeights = DEFAULT_WEIGHTS) -> float:
    """Enumerate every monotone warping path; test oracle for :func:`graph_dtw`."""
    t1, t2 = len(s1.frames), len(s2.frames)
    if t1 == 0 or t2 == 0:
        raise EmptySequence(s1.scenario_id if t1 == 0 else s2.scenario_id)
    if t1 * t2 > BRUTE_FORCE_LIMIT:
        raise TooLarge(t1 * t2, BRUTE_FORCE_LIMIT)
    costs = cost_lattice(scenario_signatures(s1), scenario_signatures(s2), w)

    best: tuple[float, int] | None = None
    stack = [(0, 0, float(costs[0, 0]), 1)]
    while stack:
        i, j, acc, n = stack.pop()
        if i == t1 - 1 and j == t2 - 1:
            if best is None or (acc, n) < best:
                best = (acc, n)
            continue
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            ni, nj = i + di, j + dj
            if ni < t1 and nj < t2:
                stack.append((ni, nj, acc + float(costs[ni, nj]), n + 1))
    assert best is not None
    return best[0] / best[1]


# ======================================================================
# Distance matrix
# ======================================================================


class PairCache(Protocol):
    def get(self, key: str) -> float | None: ...
    def set(self, key: str, value: float) -> None: ...


@dataclass
class DistanceMatrix:
    ids: tuple[str, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def problems(self) -> list[str]:
        v = self.values
        out = []
        if v.shape != (len(self.ids), len(self.ids)):
            out.append(f"shape {v.shape} does not match {len(self.ids)} ids")
            return out
        if not np.all(np.isfinite(v)):
            out.append("non-finite entries")
        if np.any(v < 0):
            out.append("negative entries")
        if not np.array_equal(v, v.T):
            out.append("not symmetric")
        if np.any(np.diag(v) != 0):
            out.append("non-zero diagonal")
        return out

    def subset(self, ids: Sequence[str]) -> "DistanceMatrix":
        """Rows/columns for ``ids`` in the given order."""
        index = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in index]
        if missing:
            raise UnknownId(missing[0], where="distance matrix")
        rows = [index[sid] for sid in ids]
        return DistanceMatrix(tuple(ids), self.values[np.ix_(rows, rows)].copy())


def scenario_fingerprint(s: ScenarioPrimitive) -> str:
    """SHA-256 of a scenario's canonical frame content (id and metadata excluded)."""
    frames = scenario_to_json(s)["frames"]
    return fingerprint(json.dumps(frames, separators=(",", ":"), allow_nan=False))


def _pair_key(fa: str, fb: str, w: FrameDistanceWeights) -> str:
    lo, hi = sorted((fa, fb))
    return f"dtw:{lo}:{hi}:{w.cache_token()}"


def _row_block(
    args: tuple[list[tuple[FrameSignature, ...]], list[tuple[int, int]], FrameDistanceWeights],
) -> list[float]:
    signatures, pairs, w = args
    return [signature_dtw(signatures[k], signatures[l], w) for k, l in pairs]


def distance_matrix(
    ds: Sequence[ScenarioPrimitive],
    w: FrameDistanceWeights = DEFAULT_WEIGHTS,
    *,
    threads: int = 1,
    cache: PairCache | None = None,
) -> DistanceMatrix:
    """Pairwise Graph-DTW over ``ds``.

    Only the upper triangle is computed and mirrored, so the result is exactly
    symmetric.  Worker processes and the cache return bit-identical values to
    a sequential run.
    """
    w.check()
    n = len(ds)
    started = time.perf_counter()
    signatures = [scenario_signatures(s) for s in ds]
    values = np.zeros((n, n), dtype=np.float64)

    keys: dict[tuple[int, int], str] = {}
    todo: list[tuple[int, int]] = []
    prints = [scenario_fingerprint(s) for s in ds] if cache is not None else []
    for k in range(n):
        for l in range(k + 1, n):
            if cache is not None:
                key = _pair_key(prints[k], prints[l], w)
                hit = cache.get(key)
                if hit is not None:
                    values[k, l] = values[l, k] = hit
                    continue
                keys[(k, l)] = key
            todo.append((k, l))

    if threads > 1 and len(todo) > 1:
        chunk = max(1, math.ceil(len(todo) / (threads * 4)))
        blocks = [todo[i:i + chunk] for i in range(0, len(todo), chunk)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = pool.map(_row_block, [(signatures, b, w) for b in blocks])
            computed = [d for block in results for d in block]
    else:
        computed = _row_block((signatures, todo, w))

    for (k, l), d in zip(todo, computed):
        values[k, l] = values[l, k] = d
        if cache is not None:
            cache.set(keys[(k, l)], d)

    logger.info(
        "Distance matrix %dx%d: %d pairs computed, %d from cache (%.1fs)",
        n, n, len(todo), n * (n - 1) // 2 - len(todo), time.perf_counter() - started,
    )
    return DistanceMatrix(tuple(s.scenario_id for s in ds), values)


def save_distance_matrix(dm: DistanceMatrix, path: str | Path) -> Path:
    rows = [[float(v) for v in row] for row in dm.values]
    return write_csv(path, dm.ids, rows)


def load_distance_matrix(path: str | Path) -> DistanceMatrix:
    header, rows = read_csv(path)
    n = len(header)
    if len(rows) != n:
        raise ParseError(len(rows) + 1, f"{path}: expected {n} matrix rows, found {len(rows)}")
    values = np.zeros((n, n), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ParseError(i + 2, f"{path}: expected {n} columns, found {len(row)}")
        try:
            values[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(i + 2, f"{path}: {exc}") from exc
    dm = DistanceMatrix(tuple(header), values)
    problems = dm.problems()
    if problems:
        raise ParseError(1, f"{path}: invalid distance matrix ({'; '.join(problems)})")
    return dm
