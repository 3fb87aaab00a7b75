"""Unit tests for the seeded scenario generator and visual features."""

import numpy as np
import pytest

from scenario_rag.errors import ConfigError, ParseError
from scenario_rag.scenario_model import EntityKind, RelationKind, dumps_scenario, validate_scenario
from scenario_rag.synth_data import (
    D_VIS,
    ClusterSpec,
    GeneratorConfig,
    Jitter,
    Template,
    generate_dataset,
    generate_scenario,
    read_labels,
    style_surface,
    visual_feature,
    write_labels,
)


def topology(s):
    """Per-frame (node kinds, edge kinds) in canonical order."""
    return [
        (tuple(n.kind for n in f.nodes), tuple(sorted(e.kind.value for e in f.edges)))
        for f in s.frames
    ]


# ======================================================================
# generate_scenario
# ======================================================================


class TestGenerateScenario:
    @pytest.mark.parametrize("template", list(Template))
    def test_every_template_is_valid(self, template):
        s = generate_scenario(ClusterSpec(0, template), style_id=1, seed=11)
        assert validate_scenario(s) == []
        assert 8 <= len(s) <= 12
        assert [f.timestamp for f in s.frames] == list(range(len(s)))
        assert s.metadata["template"] == template.value

    def test_deterministic(self):
        spec = ClusterSpec(1, Template.SIGNALLED_INTERSECTION)
        a = generate_scenario(spec, 2, seed=5, scenario_id="x")
        b = generate_scenario(spec, 2, seed=5, scenario_id="x")
        assert dumps_scenario(a) == dumps_scenario(b)

    def test_seed_changes_values(self):
        spec = ClusterSpec(0, Template.CAR_FOLLOWING)
        a = generate_scenario(spec, 0, seed=1, scenario_id="x")
        b = generate_scenario(spec, 0, seed=2, scenario_id="x")
        assert dumps_scenario(a) != dumps_scenario(b)

    def test_car_following_has_lead_every_frame(self):
        s = generate_scenario(ClusterSpec(0, Template.CAR_FOLLOWING), 0, seed=3)
        for f in s.frames:
            assert any(e.kind is RelationKind.LEAD for e in f.edges)

    def test_signalled_intersection_has_active_signal(self):
        s = generate_scenario(ClusterSpec(1, Template.SIGNALLED_INTERSECTION), 0, seed=3)
        for f in s.frames:
            active = [e for e in f.edges if e.kind is RelationKind.ACTIVE]
            assert active
            assert all(f.node(e.src).kind is EntityKind.SIGNAL for e in active)

    @pytest.mark.parametrize("template", list(Template))
    def test_topology_independent_of_style(self, template):
        spec = ClusterSpec(0, template, frame_count_range=(9, 9))
        reference = topology(generate_scenario(spec, 0, seed=21))
        for style in (1, 2, 3):
            assert topology(generate_scenario(spec, style, seed=21)) == reference

    def test_fixed_frame_count(self):
        s = generate_scenario(ClusterSpec(0, Template.MERGE, frame_count_range=(5, 5)), 0, seed=1)
        assert len(s) == 5

    def test_zero_jitter(self):
        spec = ClusterSpec(0, Template.LANE_CHANGE, jitter=Jitter(0.0, 0.0, 0.0, 0.0))
        assert validate_scenario(generate_scenario(spec, 0, seed=4)) == []

    def test_invalid_frame_range(self):
        with pytest.raises(ConfigError):
            generate_scenario(ClusterSpec(0, Template.MERGE, frame_count_range=(6, 3)), 0, seed=1)


class TestStyleSurface:
    def test_styles_differ_on_surface(self):
        a, b = style_surface(0), style_surface(1)
        assert a.lane_width != b.lane_width
        assert a.vehicle_length != b.vehicle_length
        assert a.decor_sign != b.decor_sign


# ======================================================================
# generate_dataset
# ======================================================================


class TestGenerateDataset:
    def test_sizes_and_labels(self, small_dataset):
        assert len(small_dataset.scenarios) == 12
        assert sorted(set(small_dataset.labels.values())) == [0, 1, 2]
        assert small_dataset.scenarios[0].scenario_id == "scn-00-00000"
        assert small_dataset.scenarios[-1].scenario_id == "scn-02-00003"

    def test_styles_round_robin(self, small_dataset):
        styles = [small_dataset.styles[s.scenario_id] for s in small_dataset.scenarios[:4]]
        assert styles == [0, 1, 2, 3]

    def test_ids_unique(self, small_dataset):
        ids = [s.scenario_id for s in small_dataset.scenarios]
        assert len(set(ids)) == len(ids)

    def test_deterministic(self, small_dataset):
        again = generate_dataset(GeneratorConfig(seed=7, scenarios_per_cluster=4))
        assert [dumps_scenario(s) for s in again.scenarios] == [dumps_scenario(s) for s in small_dataset.scenarios]

    def test_threads_do_not_change_output(self):
        cfg = GeneratorConfig(seed=3, scenarios_per_cluster=2)
        serial = generate_dataset(cfg, threads=1)
        parallel = generate_dataset(cfg, threads=2)
        assert [dumps_scenario(s) for s in parallel.scenarios] == [dumps_scenario(s) for s in serial.scenarios]

    def test_duplicate_cluster_ids_rejected(self):
        clusters = (ClusterSpec(0, Template.MERGE), ClusterSpec(0, Template.STOP_SIGN))
        with pytest.raises(ConfigError):
            generate_dataset(GeneratorConfig(clusters=clusters, scenarios_per_cluster=1))

    def test_seed_out_of_range(self):
        with pytest.raises(ConfigError):
            generate_dataset(GeneratorConfig(seed=-1, scenarios_per_cluster=1))


class TestLabels:
    def test_round_trip(self, tmp_path, small_dataset):
        path = write_labels(small_dataset, tmp_path / "labels.csv")
        labels, styles = read_labels(path)
        assert labels == small_dataset.labels
        assert styles == small_dataset.styles

    def test_bad_row(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("scenario_id,cluster_id,style_id\nscn-1,zero,0\n")
        with pytest.raises(ParseError):
            read_labels(path)


# ======================================================================
# Visual features
# ======================================================================


class TestVisualFeature:
    def test_unit_norm(self, small_dataset):
        for s in small_dataset.scenarios:
            v = visual_feature(s)
            assert v.shape == (D_VIS,)
            assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_style_dominates(self, small_dataset):
        by_id = {s.scenario_id: visual_feature(s) for s in small_dataset.scenarios}
        # same style, different cluster vs same cluster, different style
        same_style = float(by_id["scn-00-00001"] @ by_id["scn-01-00001"])
        same_cluster = float(by_id["scn-00-00001"] @ by_id["scn-00-00002"])
        assert same_style > same_cluster
