"""Unit tests for MemoryDistanceCache and SQLiteDistanceCache."""

import pytest

from scenario_rag.distance_cache import MemoryDistanceCache, SQLiteDistanceCache, create_cache


# ======================================================================
# MemoryDistanceCache
# ======================================================================


class TestMemoryDistanceCache:
    def test_set_and_get(self):
        cache = MemoryDistanceCache()
        cache.set("dtw:a:b", 1.25)
        assert cache.get("dtw:a:b") == 1.25

    def test_get_missing_returns_none(self):
        assert MemoryDistanceCache().get("missing") is None

    def test_zero_distance_is_a_hit(self):
        cache = MemoryDistanceCache()
        cache.set("dtw:a:a", 0.0)
        assert cache.get("dtw:a:a") == 0.0
        assert cache.stats["hits"] == 1

    def test_lru_eviction(self):
        cache = MemoryDistanceCache(max_size=2)
        cache.set("a", 1.0)
        cache.set("b", 2.0)
        cache.get("a")  # "b" becomes LRU
        cache.set("c", 3.0)
        assert cache.get("b") is None
        assert cache.get("a") == 1.0
        assert cache.get("c") == 3.0
        assert cache.stats["evictions"] == 1

    def test_overwrite_existing_key(self):
        cache = MemoryDistanceCache()
        cache.set("k", 1.0)
        cache.set("k", 2.0)
        assert cache.get("k") == 2.0
        assert cache.size == 1

    def test_clear(self):
        cache = MemoryDistanceCache()
        cache.set("a", 1.0)
        cache.clear()
        assert cache.size == 0

    def test_stats(self):
        cache = MemoryDistanceCache(max_size=10)
        cache.set("k", 0.5)
        cache.get("k")
        cache.get("missing")
        stats = cache.stats
        assert stats["backend"] == "memory"
        assert stats["max_size"] == 10
        assert stats["hits"] == 1
        assert stats["misses"] == 1
        assert stats["hit_rate_percent"] == 50.0

    def test_hit_rate_zero_requests(self):
        assert MemoryDistanceCache().hit_rate == 0.0


# ======================================================================
# SQLiteDistanceCache
# ======================================================================


class TestSQLiteDistanceCache:
    @pytest.fixture
    def db_path(self, tmp_path):
        return str(tmp_path / "distances.db")

    def test_set_and_get(self, db_path):
        cache = SQLiteDistanceCache(db_path=db_path)
        cache.set("dtw:a:b", 0.1 + 0.2)
        assert cache.get("dtw:a:b") == 0.1 + 0.2

    def test_get_missing_returns_none(self, db_path):
        assert SQLiteDistanceCache(db_path=db_path).get("missing") is None

    def test_persists_across_instances(self, db_path):
        cache = SQLiteDistanceCache(db_path=db_path)
        cache.set("k", 3.5)
        cache.close()
        reopened = SQLiteDistanceCache(db_path=db_path)
        assert reopened.get("k") == 3.5
        reopened.close()

    def test_max_size_enforced_on_flush(self, db_path):
        cache = SQLiteDistanceCache(db_path=db_path, max_size=2)
        for i in range(5):
            cache.set(f"k{i}", float(i))
        cache.flush()
        assert cache.size == 2
        assert cache.stats["evictions"] == 3

    def test_clear(self, db_path):
        cache = SQLiteDistanceCache(db_path=db_path)
        cache.set("k", 1.0)
        cache.clear()
        assert cache.size == 0

    def test_stats(self, db_path):
        cache = SQLiteDistanceCache(db_path=db_path)
        cache.set("k", 1.0)
        cache.get("k")
        cache.get("missing")
        stats = cache.stats
        assert stats["backend"] == "sqlite"
        assert stats["path"] == db_path
        assert stats["hits"] == 1
        assert stats["misses"] == 1

    def test_unopenable_path_falls_back(self, tmp_path):
        cache = SQLiteDistanceCache(db_path=str(tmp_path / "missing-dir" / "x.db"))
        cache.set("k", 1.0)
        assert cache.get("k") is None
        assert cache.size == 0
        cache.close()


# ======================================================================
# Factory
# ======================================================================


class TestCreateCache:
    def test_memory_default(self):
        assert isinstance(create_cache(), MemoryDistanceCache)

    def test_persistent(self, tmp_path):
        cache = create_cache(persistent=True, db_path=str(tmp_path / "c.db"))
        assert isinstance(cache, SQLiteDistanceCache)
        cache.close()
