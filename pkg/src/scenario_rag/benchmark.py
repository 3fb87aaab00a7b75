"""Query-latency benchmarks over seeded random indexes and index-size sweeps."""

import logging
import time
from collections.abc import Mapping, Sequence
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .retrieval import Query, VectorIndex, build_index, recall_at_k
from .utils import fingerprint, percentile

logger = logging.getLogger(__name__)

BENCH_HEADER = ("size", "mean_us", "p99_us")
SWEEP_HEADER = ("size", "recall_at_k", "mean_us", "p99_us")


class BenchRow(NamedTuple):
    size: int
    mean_us: float
    p99_us: float
    answer_digest: str


class SweepRow(NamedTuple):
    size: int
    recall: float
    mean_us: float
    p99_us: float


def _timed_queries(idx: VectorIndex, queries: Sequence[np.ndarray], k: int) -> tuple[list[float], list[str]]:
    idx.query(queries[0], k)  # warm-up
    timings, answers = [], []
    for q in queries:
        start = time.perf_counter_ns()
        result = idx.query(q, k)
        timings.append((time.perf_counter_ns() - start) / 1000.0)
        answers.append(",".join(result.ids))
    return timings, answers


def bench_latency(
    sizes: Sequence[int],
    queries_per_size: int = 100,
    dim: int = 64,
    seed: int = 1,
    k: int = 10,
) -> list[BenchRow]:
    """Mean and p99 query latency (microseconds) of exact indexes of each size.

    Index vectors and queries come from a PCG64 stream per size, so the
    answers (summarised by ``answer_digest``) depend only on the seed.
    """
    if not sizes:
        raise ConfigError("At least one benchmark size is required")
    if list(sizes) != sorted(sizes) or min(sizes) < 1:
        raise ConfigError("Benchmark sizes must be positive and ascending", details=str(list(sizes)))
    if queries_per_size < 1 or dim < 1:
        raise ConfigError("queries_per_size and dim must be >= 1")

    rows = []
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    for size, stream in zip(sizes, streams):
        rng = np.random.Generator(np.random.PCG64(stream))
        vectors = rng.standard_normal((size, dim))
        queries = list(rng.standard_normal((queries_per_size, dim)))
        idx = build_index([(f"v{i:08d}", v) for i, v in enumerate(vectors)], built_at="")
        timings, answers = _timed_queries(idx, queries, k)
        row = BenchRow(size, float(np.mean(timings)), percentile(timings, 99.0), fingerprint("\n".join(answers)))
        logger.info("bench size=%d mean_us=%.1f p99_us=%.1f", row.size, row.mean_us, row.p99_us)
        rows.append(row)
    return rows


def latency_monotone(rows: Sequence[BenchRow], tolerance: float = 0.10) -> bool:
    """True when mean latency never drops by more than ``tolerance`` as size grows."""
    return all(b.mean_us >= a.mean_us * (1.0 - tolerance) for a, b in zip(rows, rows[1:]))


def size_sweep(
    idx: VectorIndex,
    labels: Mapping[str, int],
    queries: Sequence[Query],
    sizes: Sequence[int],
    k: int = 10,
    seed: int = 1,
) -> list[SweepRow]:
    """Recall@k and latency of nested random prefixes of ``idx``.

    Prefixes follow one seeded permutation of the index entries, so each
    smaller database is a subset of every larger one.
    """
    if not sizes or list(sizes) != sorted(sizes) or min(sizes) < 1:
        raise ConfigError("Sweep sizes must be positive and ascending", details=str(list(sizes)))
    if not queries:
        raise ConfigError("size sweep needs at least one query")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(idx))
    rows = []
    for size in sizes:
        chosen = order[: min(size, len(idx))]
        sub = build_index(
            [(idx.ids[i], idx.vectors[i]) for i in chosen],
            metric=idx.metric,
            checkpoint_hash=str(idx.metadata.get("checkpoint_hash", "")),
            built_at="",
        )
        recall = recall_at_k(sub, labels, queries, k)
        timings, _ = _timed_queries(sub, [q.vector for q in queries], k)
        row = SweepRow(len(sub), recall, float(np.mean(timings)), percentile(timings, 99.0))
        logger.info("sweep size=%d recall@%d=%.4f mean_us=%.1f", row.size, k, row.recall, row.mean_us)
        rows.append(row)
    return rows
