"""Exact k-NN vector index over scenario embeddings.

Vectors are stored as float32 (the on-disk precision) and distances are
computed in float64 from the stored values, so an index answers queries
identically before and after a save/load round trip.  Equal distances are
ordered by scenario id.
"""

import json
import logging
import math
import os
import struct
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from sklearn.cluster import KMeans

from .errors import (
    ConfigError,
    CorruptFile,
    DimMismatch,
    DuplicateId,
    EmptyIndex,
    IoError,
    NonFiniteVector,
    ParseError,
    UnknownId,
    VersionMismatch,
)
from .scenario_model import ScenarioPrimitive
from .utils import ByteReader, ensure_parent, read_csv, write_csv

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"VIDX"
INDEX_VERSION = 1
METRICS = ("euclidean", "cosine")
_F32_MAX = float(np.finfo(np.float32).max)


class Hit(NamedTuple):
    scenario_id: str
    distance: float


@dataclass(frozen=True)
class QueryResult:
    hits: tuple[Hit, ...]

    def __len__(self) -> int:
        return len(self.hits)

    def __iter__(self):
        return iter(self.hits)

    @property
    def ids(self) -> list[str]:
        return [h.scenario_id for h in self.hits]


class Query(NamedTuple):
    """A recall query; ``scenario_id`` enables self-match exclusion."""

    vector: np.ndarray
    cluster_id: int
    scenario_id: str | None = None


def _distances(vectors: np.ndarray, q: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        norms = np.linalg.norm(vectors, axis=1) * np.linalg.norm(q)
        dots = vectors @ q
        with np.errstate(divide="ignore", invalid="ignore"):
            sim = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)
        return np.maximum(1.0 - sim, 0.0)
    diff = vectors - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class VectorIndex:
    """Immutable exact-scan index; safe to query from several threads."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray, metadata: Mapping[str, Any]) -> None:
        self._ids = tuple(ids)
        self._stored = np.ascontiguousarray(vectors, dtype=np.float32)
        self._stored.setflags(write=False)
        self._vectors = self._stored.astype(np.float64)
        self._vectors.setflags(write=False)
        self._id_rank = np.argsort(np.argsort(np.array(self._ids, dtype=object), kind="stable"), kind="stable")
        self._metadata = dict(metadata)
        self._metric = str(self._metadata.get("metric", "euclidean"))
        if self._metric not in METRICS:
            raise ConfigError("Unknown index metric", details=self._metric)

    # ------------------------------------------------------------------
    # Properties
    # ------------------------------------------------------------------

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def dim(self) -> int:
        return int(self._stored.shape[1])

    @property
    def vectors(self) -> np.ndarray:
        """Stored float32 vectors (read-only)."""
        return self._stored

    @property
    def metric(self) -> str:
        return self._metric

    @property
    def metadata(self) -> dict[str, Any]:
        return dict(self._metadata)

    def __len__(self) -> int:
        return len(self._ids)

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def _check_query(self, q: np.ndarray | Sequence[float]) -> np.ndarray:
        arr = np.asarray(q, dtype=np.float64).reshape(-1)
        if arr.shape[0] != self.dim:
            raise DimMismatch(self.dim, arr.shape[0])
        return arr

    def distances(self, q: np.ndarray | Sequence[float]) -> np.ndarray:
        return _distances(self._vectors, self._check_query(q), self._metric)

    def rank(self, rows: np.ndarray, dist: np.ndarray, k: int) -> QueryResult:
        """Order candidate ``rows`` (with distances ``dist``) and keep the first ``k``."""
        order = np.lexsort((self._id_rank[rows], dist))[:k]
        return QueryResult(tuple(Hit(self._ids[rows[i]], float(dist[i])) for i in order))

    def query(self, q: np.ndarray | Sequence[float], k: int) -> QueryResult:
        if k < 1:
            raise ConfigError("k must be >= 1", details=str(k))
        dist = self.distances(q)
        n = len(dist)
        k = min(k, n)
        if k < n:
            kth = np.partition(dist, k - 1)[k - 1]
            rows = np.nonzero(dist <= kth)[0]
        else:
            rows = np.arange(n)
        return self.rank(rows, dist[rows], k)


def build_index(
    embeddings: Sequence[tuple[str, np.ndarray | Sequence[float]]],
    *,
    metric: str = "euclidean",
    checkpoint_hash: str = "",
    built_at: str | None = None,
) -> VectorIndex:
    """Build an exact index from ``(scenario_id, vector)`` pairs."""
    if not embeddings:
        raise EmptyIndex()
    if metric not in METRICS:
        raise ConfigError("Unknown index metric", details=metric)
    dim = len(np.asarray(embeddings[0][1]).reshape(-1))
    seen: set[str] = set()
    rows = []
    for sid, vec in embeddings:
        arr = np.asarray(vec, dtype=np.float64).reshape(-1)
        if arr.shape[0] != dim:
            raise DimMismatch(dim, arr.shape[0])
        if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > _F32_MAX):
            raise NonFiniteVector(sid)
        if sid in seen:
            raise DuplicateId(sid)
        seen.add(sid)
        rows.append(arr)
    if built_at is None:
        # SOURCE_DATE_EPOCH pins the timestamp for reproducible artifacts.
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        built_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(int(epoch) if epoch else None))
    metadata = {
        "count": len(rows),
        "checkpoint_hash": checkpoint_hash,
        "built_at": built_at,
        "metric": metric,
    }
    logger.info("Built %s index: %d vectors of dim %d", metric, len(rows), dim)
    return VectorIndex([sid for sid, _ in embeddings], np.vstack(rows), metadata)


def query_topk(idx: VectorIndex, q: np.ndarray | Sequence[float], k: int) -> QueryResult:
    """The ``k`` nearest entries (all when ``k`` exceeds the index size), ties by id."""
    return idx.query(q, k)


# ======================================================================
# Persistence
# ======================================================================


def encode_index(idx: VectorIndex) -> bytes:
    parts = [INDEX_MAGIC, struct.pack("<IIQ", INDEX_VERSION, idx.dim, len(idx))]
    vectors = idx.vectors.astype("<f4")
    for sid, vec in zip(idx.ids, vectors):
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(vec.tobytes())
    meta = json.dumps(idx.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    return b"".join(parts)


def decode_index(data: bytes, path: str = "<bytes>") -> VectorIndex:
    if len(data) < len(INDEX_MAGIC):
        raise CorruptFile(0, f"{len(data)} bytes, too short for a header", path)
    if data[:4] != INDEX_MAGIC:
        raise VersionMismatch(f"magic {INDEX_MAGIC!r}", repr(data[:4]))
    cur = ByteReader(data, path)
    cur.take(4, "magic")
    version = cur.u32("version")
    if version != INDEX_VERSION:
        raise VersionMismatch(f"version {INDEX_VERSION}", str(version))
    dim = cur.u32("dim")
    count = cur.u64("count")
    ids: list[str] = []
    seen: set[str] = set()
    vectors = np.zeros((count, dim), dtype=np.float32) if count * dim * 4 <= len(data) else None
    if vectors is None:
        raise CorruptFile(cur.offset, f"count {count} x dim {dim} exceeds file size", path)
    for i in range(count):
        start = cur.offset
        raw = cur.take(cur.u32(f"id length of entry {i}"), f"id of entry {i}")
        try:
            sid = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFile(start, f"entry {i}: id is not UTF-8", path) from exc
        if sid in seen:
            raise CorruptFile(start, f"duplicate id {sid!r}", path)
        seen.add(sid)
        ids.append(sid)
        vectors[i] = np.frombuffer(cur.take(4 * dim, f"vector of entry {i}"), dtype="<f4")
    meta_at = cur.offset
    raw_meta = cur.take(cur.u32("metadata length"), "metadata")
    try:
        metadata = json.loads(raw_meta.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(meta_at, f"metadata is not valid JSON: {exc}", path) from exc
    if not isinstance(metadata, dict):
        raise CorruptFile(meta_at, "metadata must be a JSON object", path)
    if not cur.done:
        raise CorruptFile(cur.offset, "trailing bytes after metadata", path)
    if metadata.get("count", count) != count:
        raise CorruptFile(meta_at, f"metadata count {metadata.get('count')} != {count}", path)
    if count == 0:
        raise CorruptFile(meta_at, "index holds no entries", path)
    return VectorIndex(ids, vectors, metadata)


def save_index(idx: VectorIndex, path: str | Path) -> Path:
    p = ensure_parent(path)
    try:
        p.write_bytes(encode_index(idx))
    except OSError as exc:
        raise IoError(str(p), str(exc)) from exc
    logger.info("Index written: %s (%d entries)", p, len(idx))
    return p


def load_index(path: str | Path) -> VectorIndex:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise IoError(str(p), str(exc)) from exc
    return decode_index(data, str(p))


# ======================================================================
# Coarse quantisation
# ======================================================================


class CoarseIndex:
    """Cluster-then-scan accelerator over an exact :class:`VectorIndex`.

    KMeans lists partition the stored vectors; a query scans the ``n_probe``
    lists whose centroids are nearest.  Results are approximate; measure
    them against the exact index with :func:`measure_recall`.
    """

    def __init__(self, exact: VectorIndex, n_lists: int = 16, seed: int = 0) -> None:
        if n_lists < 1:
            raise ConfigError("n_lists must be >= 1", details=str(n_lists))
        self.exact = exact
        self.n_lists = min(n_lists, len(exact))
        data = exact._vectors
        if exact.metric == "cosine":
            norms = np.linalg.norm(data, axis=1, keepdims=True)
            data = data / np.where(norms > 0, norms, 1.0)
        self._kmeans = KMeans(n_clusters=self.n_lists, n_init=4, random_state=seed % (2**32)).fit(data)
        labels = self._kmeans.labels_
        self._lists = [np.nonzero(labels == c)[0] for c in range(self.n_lists)]
        logger.info("Coarse index: %d lists over %d vectors", self.n_lists, len(exact))

    @property
    def dim(self) -> int:
        return self.exact.dim

    def __len__(self) -> int:
        return len(self.exact)

    def query(self, q: np.ndarray | Sequence[float], k: int, n_probe: int = 2) -> QueryResult:
        if k < 1:
            raise ConfigError("k must be >= 1", details=str(k))
        arr = self.exact._check_query(q)
        probe = arr
        if self.exact.metric == "cosine":
            norm = np.linalg.norm(arr)
            probe = arr / norm if norm > 0 else arr
        centroid_dist = np.linalg.norm(self._kmeans.cluster_centers_ - probe, axis=1)
        lists = np.lexsort((np.arange(self.n_lists), centroid_dist))[: max(1, n_probe)]
        rows = np.concatenate([self._lists[c] for c in lists])
        dist = _distances(self.exact._vectors[rows], arr, self.exact.metric)
        return self.exact.rank(rows, dist, min(k, len(rows)))


def measure_recall(
    coarse: CoarseIndex,
    exact: VectorIndex,
    queries: Sequence[np.ndarray],
    k: int,
    n_probe: int = 2,
) -> float:
    """Mean overlap between coarse and exact top-k id sets."""
    if not queries:
        return math.nan
    total = 0.0
    for q in queries:
        truth = set(exact.query(q, k).ids)
        found = set(coarse.query(q, k, n_probe).ids)
        total += len(truth & found) / len(truth)
    return total / len(queries)


# ======================================================================
# Retrieval quality
# ======================================================================


def recall_at_k(
    idx: VectorIndex | CoarseIndex,
    labels: Mapping[str, int],
    queries: Sequence[Query],
    k: int,
) -> float:
    """Mean fraction of same-cluster entries among each query's top ``k``.

    A hit whose id equals the query's ``scenario_id`` is skipped, and the
    count is always divided by ``k``.
    """
    if k < 1:
        raise ConfigError("k must be >= 1", details=str(k))
    ids = idx.exact.ids if isinstance(idx, CoarseIndex) else idx.ids
    for sid in ids:
        if sid not in labels:
            raise UnknownId(sid, where="labels")
    if not queries:
        return math.nan
    if len(ids) - 1 < k:
        logger.warning("recall@%d over an index of %d entries; some queries see fewer than k others", k, len(ids))

    total = 0.0
    for q in queries:
        result = idx.query(q.vector, k + 1)
        others = [h for h in result if h.scenario_id != q.scenario_id][:k]
        total += sum(1 for h in others if labels[h.scenario_id] == q.cluster_id) / k
    return total / len(queries)


def assemble_context(
    result: QueryResult,
    lookup: Mapping[str, ScenarioPrimitive],
    anchor: ScenarioPrimitive | None = None,
) -> list[ScenarioPrimitive]:
    """Retrieved scenarios in rank order, preceded by ``anchor`` when given."""
    context = [anchor] if anchor is not None else []
    for hit in result:
        if hit.scenario_id not in lookup:
            raise UnknownId(hit.scenario_id, where="scenario lookup")
        context.append(lookup[hit.scenario_id])
    return context


# ======================================================================
# Vectors CSV
# ======================================================================


def vectors_header(dim: int) -> list[str]:
    return ["scenario_id"] + [f"v{i}" for i in range(dim)]


def write_vectors(ids: Sequence[str], vectors: np.ndarray, path: str | Path) -> Path:
    if len(ids) != len(vectors):
        raise DimMismatch(len(ids), len(vectors))
    dim = vectors.shape[1] if vectors.ndim == 2 else 0
    rows = [[sid] + [float(v) for v in vec] for sid, vec in zip(ids, vectors)]
    return write_csv(path, vectors_header(dim), rows)


def read_vectors(path: str | Path) -> tuple[list[str], np.ndarray]:
    header, rows = read_csv(path)
    if not header or header[0] != "scenario_id" or header != vectors_header(len(header) - 1):
        raise ParseError(1, f"{path}: expected header scenario_id,v0,...")
    dim = len(header) - 1
    ids, data = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != dim + 1:
            raise ParseError(lineno, f"{path}: expected {dim + 1} columns, found {len(row)}")
        try:
            data.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(lineno, f"{path}: {exc}") from exc
        ids.append(row[0])
    return ids, np.array(data, dtype=np.float64).reshape(len(ids), dim)
