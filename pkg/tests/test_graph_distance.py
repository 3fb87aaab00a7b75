"""Unit tests for frame distances, graph DTW and distance matrices."""

import math
from dataclasses import replace

import numpy as np
import pytest

from scenario_rag.distance_cache import MemoryDistanceCache
from scenario_rag.errors import ConfigError, EmptySequence, NonCanonicalInput, ParseError, TooLarge, UnknownId
from scenario_rag.graph_distance import (
    DistanceMatrix,
    FrameDistanceWeights,
    distance_matrix,
    dtw_brute_force,
    dtw_from_costs,
    frame_distance,
    graph_dtw,
    load_distance_matrix,
    save_distance_matrix,
    scenario_fingerprint,
)
from scenario_rag.scenario_model import FrameRecord, ScenarioPrimitive, SignalPhase, build_graph

from .conftest import ego, following_frame, lane, scenario_from, sign, signal, vehicle


def gaps_scenario(scenario_id: str, gaps: list[float]) -> ScenarioPrimitive:
    return scenario_from(scenario_id, [following_frame(t, g) for t, g in enumerate(gaps)])


def intersection_scenario(scenario_id: str, frames: int) -> ScenarioPrimitive:
    records = [
        FrameRecord(t, (ego(), lane(10, 1, 0.0), signal(20, 30.0 - 5 * t, 3.0)))
        for t in range(frames)
    ]
    return scenario_from(scenario_id, records)


def random_scenario(rng: np.random.Generator, scenario_id: str, frames: int) -> ScenarioPrimitive:
    """Frames drawn from following, signal and stop-sign layouts with random geometry."""
    records = []
    for t in range(frames):
        kind = int(rng.integers(3))
        x = float(rng.uniform(5.0, 40.0))
        if kind == 0:
            records.append(following_frame(t, x))
        elif kind == 1:
            phase = SignalPhase.RED if rng.random() < 0.5 else SignalPhase.GREEN
            speed = float(rng.uniform(5.0, 15.0))
            records.append(FrameRecord(t, (ego(speed), lane(10, 1, 0.0), signal(20, x, 3.0, phase))))
        else:
            records.append(FrameRecord(t, (ego(), lane(10, 1, 0.0), sign(30, x, 3.0))))
    return scenario_from(scenario_id, records)


# ======================================================================
# frame_distance
# ======================================================================


class TestFrameDistance:
    def test_identity(self):
        g = build_graph(following_frame(0))
        assert frame_distance(g, g) == 0.0

    def test_symmetric_and_positive(self):
        a = build_graph(following_frame(0, 20.0))
        b = build_graph(FrameRecord(0, (ego(), lane(10, 1, 0.0), signal(20, 30.0, 3.0))))
        assert frame_distance(a, b) == frame_distance(b, a)
        assert frame_distance(a, b) > 0

    def test_attribute_only_difference(self):
        a = build_graph(following_frame(0, 20.0))
        b = build_graph(following_frame(0, 25.0))
        w_struct = FrameDistanceWeights(w_node=1.0, w_edge=1.0, w_attr=0.0)
        assert frame_distance(a, b, w_struct) == 0.0
        assert frame_distance(a, b) > 0.0

    def test_attribute_term_by_hand(self):
        def frame(v1: tuple[float, float, float], v2_speed: float) -> FrameRecord:
            return FrameRecord(0, (
                ego(), lane(10, 1, 0.0), lane(11, 2, 3.5),
                vehicle(1, v1[0], v1[1], v1[2]), vehicle(2, 10.0, 3.5, v2_speed),
            ))

        a = build_graph(frame((20.0, 0.2, 10.0), 10.0))
        b = build_graph(frame((50.0, 1.0, 22.0), 40.0))
        assert a.edges == b.edges
        # vehicle 1 moves (30, 0.8) m and 12 m/s; vehicle 2 only gains 30 m/s and clamps to 1
        near = math.sqrt((30.0 / 50.0) ** 2 + (0.8 / 50.0) ** 2 + (12.0 / 20.0) ** 2)
        assert near < 1.0
        expected = 0.5 * (near + 1.0) / 5
        assert frame_distance(a, b) == pytest.approx(expected, rel=1e-12)
        only_attr = FrameDistanceWeights(w_node=0.0, w_edge=0.0, w_attr=1.0)
        assert frame_distance(a, b, only_attr) == pytest.approx((near + 1.0) / 5, rel=1e-12)

    def test_timestamp_ignored(self):
        assert frame_distance(build_graph(following_frame(0)), build_graph(following_frame(5))) == 0.0

    def test_non_canonical_rejected(self):
        g = build_graph(following_frame(0))
        with pytest.raises(NonCanonicalInput):
            frame_distance(replace(g, nodes=tuple(reversed(g.nodes))), g)

    def test_weights_validated(self):
        with pytest.raises(ConfigError):
            FrameDistanceWeights(0.0, 0.0, 0.0).check()
        with pytest.raises(ConfigError):
            FrameDistanceWeights(-1.0, 1.0, 1.0).check()


# ======================================================================
# DTW
# ======================================================================


class TestDtwFromCosts:
    def test_single_cell(self):
        assert dtw_from_costs(np.array([[0.5]])) == 0.5

    def test_diagonal_path(self):
        costs = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert dtw_from_costs(costs) == 0.0

    def test_length_normalised(self):
        # Only path: three cells summing to 0.6
        assert dtw_from_costs(np.array([[0.1, 0.2, 0.3]])) == pytest.approx(0.2)

    def test_empty(self):
        with pytest.raises(EmptySequence):
            dtw_from_costs(np.zeros((0, 3)))


class TestGraphDtw:
    def test_identity(self):
        s = gaps_scenario("a", [20.0, 18.0, 16.0])
        assert graph_dtw(s, s) == 0.0

    def test_time_warp_invariance(self):
        a = gaps_scenario("a", [20.0, 18.0, 16.0])
        b = gaps_scenario("b", [20.0, 20.0, 18.0, 16.0, 16.0])
        assert graph_dtw(a, b) == 0.0

    def test_symmetric(self):
        a = gaps_scenario("a", [20.0, 15.0, 12.0])
        b = intersection_scenario("b", 4)
        assert graph_dtw(a, b) == graph_dtw(b, a)

    def test_structure_dominates_attributes(self):
        a = gaps_scenario("a", [20.0, 18.0, 16.0])
        near = gaps_scenario("near", [24.0, 22.0, 21.0, 19.0])
        far = intersection_scenario("far", 3)
        assert graph_dtw(a, near) < graph_dtw(a, far)

    @pytest.mark.parametrize("lengths", [(1, 1), (1, 4), (3, 2), (4, 5), (6, 6)])
    def test_matches_brute_force(self, lengths):
        a = gaps_scenario("a", [20.0 - t for t in range(lengths[0])])
        b = intersection_scenario("b", lengths[1])
        assert graph_dtw(a, b) == pytest.approx(dtw_brute_force(a, b), abs=1e-12)

    def test_brute_force_matches_on_same_template(self):
        a = gaps_scenario("a", [20.0, 14.0, 19.0, 11.0])
        b = gaps_scenario("b", [12.0, 18.0, 16.0])
        assert graph_dtw(a, b) == pytest.approx(dtw_brute_force(a, b), abs=1e-12)

    def test_random_pairs_match_brute_force(self):
        rng = np.random.Generator(np.random.PCG64(17))
        for pair in range(200):
            t1, t2 = (int(n) for n in rng.integers(1, 7, size=2))
            a = random_scenario(rng, f"a{pair}", t1)
            b = random_scenario(rng, f"b{pair}", t2)
            d = graph_dtw(a, b)
            assert d == pytest.approx(dtw_brute_force(a, b), abs=1e-12), (pair, t1, t2)
            assert d >= 0.0
            assert d == pytest.approx(graph_dtw(b, a), abs=1e-12)
            assert graph_dtw(a, a) == 0.0
            assert dtw_brute_force(a, a) == 0.0

    def test_brute_force_limit(self):
        a = gaps_scenario("a", [20.0 - t for t in range(6)])
        b = gaps_scenario("b", [20.0 - t for t in range(7)])
        with pytest.raises(TooLarge):
            dtw_brute_force(a, b)

    def test_empty_scenario(self):
        a = gaps_scenario("a", [20.0])
        with pytest.raises(EmptySequence):
            graph_dtw(a, ScenarioPrimitive("empty", ()))


# ======================================================================
# Distance matrix
# ======================================================================


@pytest.fixture(scope="module")
def mixed():
    return [
        gaps_scenario("f1", [20.0, 18.0, 16.0]),
        gaps_scenario("f2", [22.0, 21.0, 19.0, 17.0]),
        intersection_scenario("i1", 3),
        intersection_scenario("i2", 5),
        gaps_scenario("f3", [15.0, 15.0]),
    ]


class TestDistanceMatrix:
    def test_properties(self, mixed):
        dm = distance_matrix(mixed)
        assert dm.ids == ("f1", "f2", "i1", "i2", "f3")
        assert dm.problems() == []
        assert dm.values[0, 1] == graph_dtw(mixed[0], mixed[1])

    def test_threads_bit_identical(self, mixed):
        serial = distance_matrix(mixed)
        parallel = distance_matrix(mixed, threads=2)
        assert np.array_equal(serial.values, parallel.values)

    def test_cache_reuse(self, mixed):
        cache = MemoryDistanceCache()
        first = distance_matrix(mixed, cache=cache)
        assert cache.size == 10
        second = distance_matrix(mixed, cache=cache)
        assert np.array_equal(first.values, second.values)
        assert cache.stats["hits"] == 10

    def test_cache_keyed_by_weights(self, mixed):
        cache = MemoryDistanceCache()
        distance_matrix(mixed, cache=cache)
        distance_matrix(mixed, FrameDistanceWeights(1.0, 2.0, 0.5), cache=cache)
        assert cache.size == 20

    def test_fingerprint_ignores_id(self):
        a = gaps_scenario("a", [20.0, 18.0])
        assert scenario_fingerprint(a) == scenario_fingerprint(replace(a, scenario_id="other"))

    def test_subset(self, mixed):
        dm = distance_matrix(mixed)
        sub = dm.subset(["i1", "f1"])
        assert sub.ids == ("i1", "f1")
        assert sub.values[0, 1] == dm.values[2, 0]
        with pytest.raises(UnknownId):
            dm.subset(["missing"])

    def test_problems_detected(self):
        dm = DistanceMatrix(("a", "b"), np.array([[0.0, 1.0], [2.0, 0.0]]))
        assert "not symmetric" in dm.problems()

    def test_save_load(self, tmp_path, mixed):
        dm = distance_matrix(mixed)
        loaded = load_distance_matrix(save_distance_matrix(dm, tmp_path / "d.csv"))
        assert loaded.ids == dm.ids
        assert np.array_equal(loaded.values, dm.values)

    def test_load_rejects_invalid(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n0.0,1.0\n2.0,0.0\n")
        with pytest.raises(ParseError):
            load_distance_matrix(path)

    def test_load_rejects_ragged(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n0.0\n1.0,0.0\n")
        with pytest.raises(ParseError):
            load_distance_matrix(path)

    def test_clusters_separate(self, small_dataset):
        dm = distance_matrix(small_dataset.scenarios)
        labels = np.array([small_dataset.labels[i] for i in dm.ids])
        same = labels[:, None] == labels[None, :]
        off_diag = ~np.eye(len(labels), dtype=bool)
        assert dm.values[same & off_diag].mean() < dm.values[~same].mean()
