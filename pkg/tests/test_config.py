"""Unit tests for configuration module."""

import json

import pytest

from scenario_rag.config import (
    PipelineConfig,
    Settings,
    _env_bool,
    _env_float,
    _env_int,
    _env_str,
    default_config,
)
from scenario_rag.errors import ConfigError, IoError, ParseError
from scenario_rag.synth_data import GeneratorConfig, Template
from scenario_rag.training import TrainConfig


class TestEnvHelpers:
    def test_env_float_default(self):
        assert _env_float("NONEXISTENT_KEY_12345", 3.14) == 3.14

    def test_env_float_from_env(self, monkeypatch):
        monkeypatch.setenv("TEST_FLOAT", "2.5")
        assert _env_float("TEST_FLOAT", 0.0) == 2.5

    def test_env_int_from_env(self, monkeypatch):
        monkeypatch.setenv("TEST_INT", "100")
        assert _env_int("TEST_INT", 0) == 100

    def test_env_bool(self, monkeypatch):
        assert _env_bool("NONEXISTENT_KEY_12345", True) is True
        for val in ("1", "true", "YES"):
            monkeypatch.setenv("TEST_BOOL", val)
            assert _env_bool("TEST_BOOL", False) is True
        monkeypatch.setenv("TEST_BOOL", "no")
        assert _env_bool("TEST_BOOL", True) is False

    def test_env_str(self, monkeypatch):
        assert _env_str("NONEXISTENT_KEY_12345", "default") == "default"
        monkeypatch.setenv("TEST_STR", "custom")
        assert _env_str("TEST_STR", "default") == "custom"


class TestSettings:
    def test_defaults(self, monkeypatch):
        for key in ("LOG_LEVEL", "THREADS", "DISTANCE_CACHE", "DISTANCE_CACHE_SIZE", "OUTPUT_DIR"):
            monkeypatch.delenv(f"SCENARIO_RAG_{key}", raising=False)
        s = Settings()
        assert s.log_level in ("DEBUG", "INFO", "WARNING", "ERROR")
        assert s.distance_cache_size > 0


# ======================================================================
# PipelineConfig
# ======================================================================


class TestPipelineConfig:
    def test_defaults_are_valid(self):
        cfg = PipelineConfig()
        cfg.check()
        assert cfg.k == 10
        assert cfg.generator.scenarios_per_cluster == 100
        assert [c.template for c in cfg.generator.clusters] == [
            Template.CAR_FOLLOWING,
            Template.SIGNALLED_INTERSECTION,
            Template.LANE_CHANGE,
        ]

    def test_path_resolution(self, tmp_path):
        cfg = PipelineConfig(output_dir=str(tmp_path))
        assert cfg.path("dataset") == tmp_path / "dataset.jsonl"
        assert cfg.path("index") == tmp_path / "index.vidx"

    def test_seed_override_propagates(self):
        cfg = PipelineConfig().with_overrides(seed=42, threads=3, output_dir="out")
        assert cfg.seed == 42
        assert cfg.generator.seed == 42
        assert cfg.train.seed == 42
        assert cfg.threads == 3
        assert cfg.output_dir == "out"

    def test_no_overrides_keeps_values(self):
        cfg = PipelineConfig(seed=5, threads=2)
        again = cfg.with_overrides()
        assert again.seed == 5
        assert again.threads == 2

    def test_nested_seeds_kept_without_seed_flag(self):
        cfg = PipelineConfig(seed=5, generator=GeneratorConfig(seed=11), train=TrainConfig(seed=13))
        again = cfg.with_overrides(threads=3)
        assert (again.seed, again.generator.seed, again.train.seed) == (5, 11, 13)

    def test_nested_seeds_from_file_kept_without_seed_flag(self, tmp_path):
        path = tmp_path / "config.json"
        data = PipelineConfig().to_dict()
        data["generator"]["seed"] = 21
        data["train"]["seed"] = 22
        path.write_text(json.dumps(data))
        cfg = PipelineConfig.load(path).with_overrides(output_dir="out")
        assert (cfg.seed, cfg.generator.seed, cfg.train.seed) == (1, 21, 22)
        assert cfg.with_overrides(seed=8).generator.seed == 8

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            PipelineConfig(k=0).check()

    def test_default_config_uses_settings(self):
        cfg = default_config()
        assert cfg.threads >= 1


class TestConfigDocument:
    def test_round_trip(self):
        cfg = PipelineConfig(seed=9, k=5)
        assert PipelineConfig.from_dict(json.loads(cfg.dumps())) == cfg

    def test_load_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(PipelineConfig(k=3).dumps())
        assert PipelineConfig.load(path).k == 3

    def test_partial_document_uses_defaults(self):
        cfg = PipelineConfig.from_dict({"k": 7, "train": {"epochs": 2}})
        assert cfg.k == 7
        assert cfg.train.epochs == 2
        assert cfg.train.batch_size == PipelineConfig().train.batch_size

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            PipelineConfig.from_dict({"k": 3, "bogus": 1})

    def test_nested_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"model": {"layers": 3}})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"k": "ten"})
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"k": True})

    def test_unknown_template(self):
        doc = PipelineConfig().to_dict()
        doc["generator"]["clusters"][0]["template"] = "roundabout"
        with pytest.raises(ConfigError, match="unknown value"):
            PipelineConfig.from_dict(doc)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            PipelineConfig.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            PipelineConfig.load(tmp_path / "missing.json")

    def test_invalid_utf8(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_bytes(b'{"k": 3}\n\xff\xfe')
        with pytest.raises(ParseError, match="byte offset 9") as excinfo:
            PipelineConfig.load(path)
        assert excinfo.value.line == 2
