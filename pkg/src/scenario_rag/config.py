"""Configuration management for scenario-rag.

Process settings are loaded from environment variables with sensible
defaults; all env vars are prefixed with ``SCENARIO_RAG_``.  Experiment
parameters live in :class:`PipelineConfig`, a dataclass tree that round-trips
through a JSON document (``--dump-config`` / ``--config``).
"""

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .embedding import ModelConfig
from .errors import ConfigError
from .graph_distance import FrameDistanceWeights
from .synth_data import GeneratorConfig
from .training import TrainConfig
from .utils import read_text


def _env_float(key: str, default: float) -> float:
    val = os.environ.get(key)
    return float(val) if val is not None else default


def _env_int(key: str, default: int) -> int:
    val = os.environ.get(key)
    return int(val) if val is not None else default


def _env_bool(key: str, default: bool) -> bool:
    val = os.environ.get(key)
    if val is None:
        return default
    return val.lower() in ("1", "true", "yes")


def _env_str(key: str, default: str) -> str:
    return os.environ.get(key, default)


class Settings:
    """Process-level settings for the command line."""

    # Logging
    log_level: str = _env_str("SCENARIO_RAG_LOG_LEVEL", "INFO")

    # Parallelism
    threads: int = _env_int("SCENARIO_RAG_THREADS", 1)

    # Distance cache: empty path keeps it in memory, otherwise SQLite
    distance_cache: str = _env_str("SCENARIO_RAG_DISTANCE_CACHE", "")
    distance_cache_size: int = _env_int("SCENARIO_RAG_DISTANCE_CACHE_SIZE", 65536)

    # Artifacts
    output_dir: str = _env_str("SCENARIO_RAG_OUTPUT_DIR", "artifacts")


# Singleton
settings = Settings()


# ======================================================================
# Pipeline configuration
# ======================================================================


@dataclass(frozen=True)
class ArtifactPaths:
    """Artifact file names, relative to the output directory unless absolute."""

    dataset: str = "dataset.jsonl"
    labels: str = "labels.csv"
    queries: str = "queries.jsonl"
    query_labels: str = "query_labels.csv"
    distances: str = "distances.csv"
    checkpoint: str = "model.saem"
    history: str = "history.csv"
    vectors: str = "vectors.csv"
    index: str = "index.vidx"


@dataclass(frozen=True)
class BenchConfig:
    sizes: tuple[int, ...] = (1000, 10000, 100000)
    queries_per_size: int = 100
    dim: int = 64


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 1
    threads: int = 1
    output_dir: str = "artifacts"
    k: int = 10
    held_out_per_cluster: int = 20
    n_lists: int = 8
    n_probe: int = 2
    sweep_sizes: tuple[int, ...] = (30, 75, 150, 300)
    paths: ArtifactPaths = field(default_factory=ArtifactPaths)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    weights: FrameDistanceWeights = field(default_factory=FrameDistanceWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def path(self, name: str) -> Path:
        """Resolve an artifact path against ``output_dir``."""
        value = getattr(self.paths, name)
        if not value:
            raise ConfigError(f"Artifact path '{name}' is empty")
        p = Path(value)
        return p if p.is_absolute() else Path(self.output_dir) / p

    def with_overrides(
        self,
        *,
        seed: int | None = None,
        threads: int | None = None,
        output_dir: str | None = None,
    ) -> "PipelineConfig":
        """Apply command-line overrides.

        An explicit ``seed`` also replaces the generator and training seeds;
        without one, seeds set in a config file are left alone.
        """
        cfg = self
        if seed is not None:
            cfg = replace(
                cfg,
                seed=seed,
                generator=replace(cfg.generator, seed=seed),
                train=replace(cfg.train, seed=seed),
            )
        if threads is not None:
            cfg = replace(cfg, threads=threads)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=output_dir)
        return cfg

    def check(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1", details=str(self.k))
        if self.threads < 1:
            raise ConfigError("threads must be >= 1", details=str(self.threads))
        if self.held_out_per_cluster < 1:
            raise ConfigError("held_out_per_cluster must be >= 1")
        if self.n_lists < 1 or self.n_probe < 1:
            raise ConfigError("n_lists and n_probe must be >= 1")
        self.generator.check()
        self.weights.check()
        self.train.check()
        self.model.check()

    # ------------------------------------------------------------------
    # JSON document
    # ------------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return _to_jsonable(self)

    @classmethod
    def from_dict(cls, data: Any) -> "PipelineConfig":
        return _from_jsonable(cls, data, "config")

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        p = Path(path)
        text = read_text(p)
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file is not valid JSON: {p}", details=str(exc)) from exc
        return cls.from_dict(data)


def default_config() -> PipelineConfig:
    """Defaults with the environment's thread count and output directory applied."""
    return PipelineConfig(threads=max(1, settings.threads), output_dir=settings.output_dir)


def _to_jsonable(value: Any) -> Any:
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_to_jsonable(v) for v in value]
    return value


def _from_jsonable(tp: Any, data: Any, where: str) -> Any:
    origin = typing.get_origin(tp)

    if dataclasses.is_dataclass(tp):
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object", details=type(data).__name__)
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown keys", details=", ".join(unknown))
        kwargs = {k: _from_jsonable(hints[k], v, f"{where}.{k}") for k, v in data.items()}
        try:
            return tp(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(data, list):
            raise ConfigError(f"{where}: expected a list", details=type(data).__name__)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_from_jsonable(args[0], v, f"{where}[{i}]") for i, v in enumerate(data))
        if len(args) != len(data):
            raise ConfigError(f"{where}: expected {len(args)} items, found {len(data)}")
        return tuple(_from_jsonable(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, data)))

    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(data)
        except ValueError as exc:
            allowed = ", ".join(repr(m.value) for m in tp)
            raise ConfigError(f"{where}: unknown value {data!r}", details=f"allowed: {allowed}") from exc

    if origin in (typing.Union, types.UnionType):
        errors = []
        for option in typing.get_args(tp):
            if option is type(None):
                if data is None:
                    return None
                continue
            try:
                return _from_jsonable(option, data, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(f"{where}: value {data!r} matches no allowed type", details="; ".join(errors))

    if tp is bool:
        if not isinstance(data, bool):
            raise ConfigError(f"{where}: expected true/false", details=repr(data))
        return data
    if tp is int:
        if isinstance(data, bool) or not isinstance(data, int):
            raise ConfigError(f"{where}: expected an integer", details=repr(data))
        return data
    if tp is float:
        if isinstance(data, bool) or not isinstance(data, (int, float)):
            raise ConfigError(f"{where}: expected a number", details=repr(data))
        return float(data)
    if tp is str:
        if not isinstance(data, str):
            raise ConfigError(f"{where}: expected a string", details=repr(data))
        return data
    raise ConfigError(f"{where}: unsupported config type {tp!r}")
