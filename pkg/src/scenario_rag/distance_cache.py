"""In-memory LRU cache of pairwise DTW values with optional SQLite persistence."""

import logging
import sqlite3
import time
from collections import OrderedDict
from typing import Any

logger = logging.getLogger(__name__)


class MemoryDistanceCache:
    """LRU cache of float values keyed by pair strings.

    Lives for one process; use :class:`SQLiteDistanceCache` to reuse
    distances across runs.
    """

    def __init__(self, max_size: int = 65536) -> None:
        self._max_size = max_size
        self._store: OrderedDict[str, float] = OrderedDict()
        self._hits = 0
        self._misses = 0
        self._evictions = 0

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    def get(self, key: str) -> float | None:
        value = self._store.get(key)
        if value is None:
            self._misses += 1
            return None
        self._store.move_to_end(key)
        self._hits += 1
        return value

    def set(self, key: str, value: float) -> None:
        if key in self._store:
            self._store.move_to_end(key)
        self._store[key] = float(value)
        while len(self._store) > self._max_size:
            self._store.popitem(last=False)
            self._evictions += 1

    def clear(self) -> None:
        self._store.clear()

    def close(self) -> None:
        pass

    # ------------------------------------------------------------------
    # Diagnostics
    # ------------------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self._store)

    @property
    def hit_rate(self) -> float:
        total = self._hits + self._misses
        return (self._hits / total * 100) if total > 0 else 0.0

    @property
    def stats(self) -> dict[str, Any]:
        return {
            "backend": "memory",
            "size": self.size,
            "max_size": self._max_size,
            "hits": self._hits,
            "misses": self._misses,
            "evictions": self._evictions,
            "hit_rate_percent": round(self.hit_rate, 1),
        }


class SQLiteDistanceCache:
    """Persistent distance cache backed by SQLite.

    Values are stored as REAL, so a cached distance is the exact double that
    was computed.  If the database cannot be opened the cache logs a warning
    and behaves as an always-missing cache.
    """

    def __init__(self, db_path: str = "scenario_rag_distances.db", max_size: int = 65536) -> None:
        self._db_path = db_path
        self._max_size = max_size
        self._hits = 0
        self._misses = 0
        self._evictions = 0
        self._pending = 0
        self._db: sqlite3.Connection | None = None

        try:
            self._db = sqlite3.connect(db_path)
            self._db.execute("PRAGMA journal_mode=WAL")
            self._db.execute(
                """
                CREATE TABLE IF NOT EXISTS distances (
                    key   TEXT PRIMARY KEY,
                    value REAL NOT NULL,
                    ts    REAL NOT NULL
                )
                """
            )
            self._db.execute("CREATE INDEX IF NOT EXISTS idx_distances_ts ON distances(ts)")
            self._db.commit()
            logger.info("SQLite distance cache opened: %s", db_path)
        except sqlite3.Error as exc:
            logger.warning("Failed to open SQLite distance cache at %s: %s", db_path, exc)
            self._db = None

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    def get(self, key: str) -> float | None:
        if self._db is None:
            self._misses += 1
            return None
        try:
            row = self._db.execute("SELECT value FROM distances WHERE key = ?", (key,)).fetchone()
        except sqlite3.Error:
            self._misses += 1
            return None
        if row is None:
            self._misses += 1
            return None
        self._hits += 1
        return float(row[0])

    def set(self, key: str, value: float) -> None:
        if self._db is None:
            return
        try:
            self._db.execute(
                "INSERT OR REPLACE INTO distances (key, value, ts) VALUES (?, ?, ?)",
                (key, float(value), time.time()),
            )
            self._pending += 1
            # Batch commits; a distance matrix writes thousands of rows.
            if self._pending >= 512:
                self.flush()
        except sqlite3.Error as exc:
            logger.debug("SQLite distance cache set failed: %s", exc)

    def flush(self) -> None:
        if self._db is None:
            return
        try:
            self._db.commit()
            self._pending = 0
            self._enforce_max_size()
        except sqlite3.Error as exc:
            logger.debug("SQLite distance cache commit failed: %s", exc)

    def clear(self) -> None:
        if self._db is None:
            return
        try:
            self._db.execute("DELETE FROM distances")
            self._db.commit()
        except sqlite3.Error:
            pass

    def close(self) -> None:
        if self._db is None:
            return
        self.flush()
        self._db.close()
        self._db = None

    # ------------------------------------------------------------------
    # Internal
    # ------------------------------------------------------------------

    def _enforce_max_size(self) -> None:
        """Evict oldest rows if over capacity."""
        if self._db is None:
            return
        try:
            count = self._db.execute("SELECT COUNT(*) FROM distances").fetchone()[0]
            if count > self._max_size:
                excess = count - self._max_size
                self._db.execute(
                    "DELETE FROM distances WHERE key IN "
                    "(SELECT key FROM distances ORDER BY ts ASC LIMIT ?)",
                    (excess,),
                )
                self._db.commit()
                self._evictions += excess
        except sqlite3.Error:
            pass

    # ------------------------------------------------------------------
    # Diagnostics
    # ------------------------------------------------------------------

    @property
    def size(self) -> int:
        if self._db is None:
            return 0
        try:
            return self._db.execute("SELECT COUNT(*) FROM distances").fetchone()[0]
        except sqlite3.Error:
            return 0

    @property
    def hit_rate(self) -> float:
        total = self._hits + self._misses
        return (self._hits / total * 100) if total > 0 else 0.0

    @property
    def stats(self) -> dict[str, Any]:
        return {
            "backend": "sqlite",
            "path": self._db_path,
            "size": self.size,
            "max_size": self._max_size,
            "hits": self._hits,
            "misses": self._misses,
            "evictions": self._evictions,
            "hit_rate_percent": round(self.hit_rate, 1),
        }


def create_cache(
    *,
    persistent: bool = False,
    db_path: str = "scenario_rag_distances.db",
    max_size: int = 65536,
) -> MemoryDistanceCache | SQLiteDistanceCache:
    """Factory for the distance cache backend."""
    if persistent:
        return SQLiteDistanceCache(db_path=db_path, max_size=max_size)
    return MemoryDistanceCache(max_size=max_size)
