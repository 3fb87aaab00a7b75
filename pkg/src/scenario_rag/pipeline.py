"""Subcommand implementations for the scenario-rag command line.

Each function takes the effective :class:`PipelineConfig`, reads and writes
the artifacts it names, and returns the text the command prints on stdout
(CSV for every result-shaped output).
"""

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .benchmark import BENCH_HEADER, SWEEP_HEADER, bench_latency, size_sweep
from .config import PipelineConfig, settings
from .distance_cache import create_cache
from .embedding import ModelConfig, Params
from .errors import IoError, UnknownId
from .graph_distance import distance_matrix, load_distance_matrix, save_distance_matrix
from .gradcheck import OBJECTIVES, run_suite
from .retrieval import (
    Query,
    VectorIndex,
    assemble_context,
    build_index,
    load_index,
    read_vectors,
    recall_at_k,
    save_index,
    write_vectors,
)
from .scenario_model import ScenarioPrimitive, read_jsonl, write_jsonl
from .synth_data import GeneratorConfig, generate_dataset, read_labels, visual_feature, write_labels
from .training import (
    embed_scenarios,
    load_checkpoint,
    save_checkpoint,
    train_embedding,
    write_history,
)
from .utils import fingerprint, render_csv

logger = logging.getLogger(__name__)

QUERY_HEADER = ("rank", "scenario_id", "distance")
RECALL_HEADER = ("mode", "k", "recall_at_k")
ABLATION_HEADER = ("variant", "lambda_a", "recall_at_k")
GRADCHECK_HEADER = ("objective", "point", "max_rel_error", "coordinates", "skipped")

# Held-out seeds differ from index seeds in bit 32, so the per-scenario
# streams (seed XOR index) never coincide.
HELD_OUT_SEED_BIT = 1 << 32


def held_out_config(cfg: PipelineConfig) -> GeneratorConfig:
    return replace(
        cfg.generator,
        seed=cfg.generator.seed ^ HELD_OUT_SEED_BIT,
        scenarios_per_cluster=cfg.held_out_per_cluster,
        id_prefix="qry",
    )


def _artifacts_line(paths: list[Path]) -> str:
    return "".join(f"{p}\n" for p in paths)


# ======================================================================
# gen-data
# ======================================================================


def gen_data(cfg: PipelineConfig) -> str:
    """Write the index dataset, its labels, and the held-out query set."""
    dataset = generate_dataset(cfg.generator, threads=cfg.threads)
    held_out = generate_dataset(held_out_config(cfg), threads=cfg.threads)
    written = [
        write_jsonl(dataset.scenarios, cfg.path("dataset")),
        write_labels(dataset, cfg.path("labels")),
        write_jsonl(held_out.scenarios, cfg.path("queries")),
        write_labels(held_out, cfg.path("query_labels")),
    ]
    return _artifacts_line(written)


# ======================================================================
# dtw-matrix
# ======================================================================


def dtw_matrix(cfg: PipelineConfig) -> str:
    scenarios = read_jsonl(cfg.path("dataset"))
    cache = create_cache(
        persistent=bool(settings.distance_cache),
        db_path=settings.distance_cache or "scenario_rag_distances.db",
        max_size=settings.distance_cache_size,
    )
    try:
        dm = distance_matrix(scenarios, cfg.weights, threads=cfg.threads, cache=cache)
    finally:
        logger.info("Distance cache: %s", cache.stats)
        cache.close()
    return _artifacts_line([save_distance_matrix(dm, cfg.path("distances"))])


# ======================================================================
# train-embed / embed
# ======================================================================


def train_embed(cfg: PipelineConfig) -> str:
    scenarios = read_jsonl(cfg.path("dataset"))
    dm = load_distance_matrix(cfg.path("distances"))
    result = train_embedding(scenarios, dm, cfg.train, cfg.model)
    save_checkpoint(result.params, cfg.model, cfg.path("checkpoint"))
    write_history(result.history, cfg.path("history"))
    return _artifacts_line([cfg.path("checkpoint"), cfg.path("history")])


def _load_model(cfg: PipelineConfig) -> tuple[Params, ModelConfig, str]:
    path = cfg.path("checkpoint")
    params, mcfg = load_checkpoint(path)
    return params, mcfg, fingerprint(path.read_bytes())


def embed(cfg: PipelineConfig, dataset: str | None = None, out: str | None = None) -> str:
    """Embed a dataset with the trained checkpoint and write the vectors CSV."""
    scenarios = read_jsonl(dataset or cfg.path("dataset"))
    params, mcfg, _ = _load_model(cfg)
    vectors = embed_scenarios(scenarios, params, mcfg)
    path = write_vectors([s.scenario_id for s in scenarios], vectors, out or cfg.path("vectors"))
    return _artifacts_line([path])


# ======================================================================
# build-index / query
# ======================================================================


def build_index_cmd(cfg: PipelineConfig, vectors: str | None = None) -> str:
    ids, data = read_vectors(vectors or cfg.path("vectors"))
    _, _, checkpoint_hash = _load_model(cfg)
    idx = build_index(list(zip(ids, data)), checkpoint_hash=checkpoint_hash)
    return _artifacts_line([save_index(idx, cfg.path("index"))])


def _resolve_scenario(cfg: PipelineConfig, scenario: str) -> ScenarioPrimitive:
    """A scenario given as a JSONL file path or as an id in the dataset or query set."""
    candidate = Path(scenario)
    if candidate.is_file():
        found = read_jsonl(candidate)
        if not found:
            raise UnknownId(scenario, where="query file (empty)")
        if len(found) > 1:
            logger.warning("%s holds %d scenarios; querying the first", candidate, len(found))
        return found[0]
    for name in ("dataset", "queries"):
        path = cfg.path(name)
        if path.is_file():
            for s in read_jsonl(path):
                if s.scenario_id == scenario:
                    return s
    raise UnknownId(scenario, where="dataset or query set")


def query(cfg: PipelineConfig, scenario: str, k: int | None = None, context_out: str | None = None) -> str:
    target = _resolve_scenario(cfg, scenario)
    params, mcfg, _ = _load_model(cfg)
    idx = load_index(cfg.path("index"))
    vector = embed_scenarios([target], params, mcfg)[0]
    result = idx.query(vector, k or cfg.k)
    if context_out:
        lookup = {s.scenario_id: s for s in read_jsonl(cfg.path("dataset"))}
        write_jsonl(assemble_context(result, lookup, anchor=target), context_out)
    rows = [(rank, hit.scenario_id, hit.distance) for rank, hit in enumerate(result, start=1)]
    return render_csv(QUERY_HEADER, rows)


# ======================================================================
# bench / size-sweep
# ======================================================================


def bench(
    cfg: PipelineConfig,
    sizes: list[int] | None = None,
    queries_per_size: int | None = None,
    dim: int | None = None,
) -> str:
    rows = bench_latency(
        sizes or list(cfg.bench.sizes),
        queries_per_size or cfg.bench.queries_per_size,
        dim or cfg.bench.dim,
        seed=cfg.seed,
        k=cfg.k,
    )
    return render_csv(BENCH_HEADER, [(r.size, r.mean_us, r.p99_us) for r in rows])


def _held_out_queries(cfg: PipelineConfig, vectors: np.ndarray, scenarios: list[ScenarioPrimitive]) -> list[Query]:
    labels, _ = read_labels(cfg.path("query_labels"))
    out = []
    for s, v in zip(scenarios, vectors):
        if s.scenario_id not in labels:
            raise UnknownId(s.scenario_id, where="query labels")
        out.append(Query(v, labels[s.scenario_id], s.scenario_id))
    return out


def _graph_queries(cfg: PipelineConfig, params: Params, mcfg: ModelConfig) -> list[Query]:
    scenarios = read_jsonl(cfg.path("queries"))
    return _held_out_queries(cfg, embed_scenarios(scenarios, params, mcfg), scenarios)


def size_sweep_cmd(cfg: PipelineConfig, sizes: list[int] | None = None) -> str:
    params, mcfg, _ = _load_model(cfg)
    idx = load_index(cfg.path("index"))
    labels, _ = read_labels(cfg.path("labels"))
    wanted = sorted(sizes or list(cfg.sweep_sizes))
    rows = size_sweep(idx, labels, _graph_queries(cfg, params, mcfg), wanted, k=cfg.k, seed=cfg.seed)
    return render_csv(SWEEP_HEADER, rows)


# ======================================================================
# eval-retrieval / eval-ablation
# ======================================================================


def _visual_index(scenarios: list[ScenarioPrimitive]) -> VectorIndex:
    return build_index([(s.scenario_id, visual_feature(s)) for s in scenarios], metric="cosine", built_at="")


def eval_retrieval(cfg: PipelineConfig, mode: str) -> str:
    """Recall@k of held-out queries: ``gbr`` (graph embedding, Euclidean) or ``vsr`` (visual, cosine)."""
    labels, _ = read_labels(cfg.path("labels"))
    if mode == "gbr":
        params, mcfg, _ = _load_model(cfg)
        idx = load_index(cfg.path("index"))
        queries = _graph_queries(cfg, params, mcfg)
    elif mode == "vsr":
        idx = _visual_index(read_jsonl(cfg.path("dataset")))
        held_out = read_jsonl(cfg.path("queries"))
        queries = _held_out_queries(cfg, np.array([visual_feature(s) for s in held_out]), held_out)
    else:
        raise UnknownId(mode, where="retrieval modes (gbr, vsr)")
    recall = recall_at_k(idx, labels, queries, cfg.k)
    logger.info("eval-retrieval %s: recall@%d = %.4f", mode, cfg.k, recall)
    return render_csv(RECALL_HEADER, [(mode, cfg.k, recall)])


def eval_ablation(cfg: PipelineConfig) -> str:
    """Train restoration-only and full-objective encoders with one seed and compare recall@k."""
    scenarios = read_jsonl(cfg.path("dataset"))
    labels, _ = read_labels(cfg.path("labels"))
    dm = load_distance_matrix(cfg.path("distances"))
    held_out = read_jsonl(cfg.path("queries"))
    full_lambda = cfg.train.lambda_a if cfg.train.lambda_a > 0 else 1.0

    rows = []
    for variant, lambda_a in (("emb-rec", 0.0), ("emb-full", full_lambda)):
        result = train_embedding(scenarios, dm, replace(cfg.train, lambda_a=lambda_a), cfg.model)
        vectors = embed_scenarios(scenarios, result.params, cfg.model)
        idx = build_index([(s.scenario_id, v) for s, v in zip(scenarios, vectors)], built_at="")
        queries = _held_out_queries(cfg, embed_scenarios(held_out, result.params, cfg.model), held_out)
        recall = recall_at_k(idx, labels, queries, cfg.k)
        logger.info("eval-ablation %s (lambda_a=%g): recall@%d = %.4f", variant, lambda_a, cfg.k, recall)
        rows.append((variant, float(lambda_a), recall))
    return render_csv(ABLATION_HEADER, rows)


# ======================================================================
# grad-check
# ======================================================================


def grad_check_cmd(cfg: PipelineConfig, points: int = 10, objectives: list[str] | None = None) -> str:
    rows = run_suite(objectives or list(OBJECTIVES), points=points, seed=cfg.seed)
    return render_csv(GRADCHECK_HEADER, rows)


def ensure_output_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(out), str(exc)) from exc
    return out
