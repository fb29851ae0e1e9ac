"""Caching of relation statistics in `.stats` sidecars."""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Optional

from pydantic import ValidationError

from thetamr.exceptions import StatsCacheError
from thetamr.relational import Relation
from thetamr.statistics import sample_relation
from thetamr.types import RelationStats

logger = logging.getLogger(__name__)


def sidecar_path(relation_path: str) -> Path:
    """Sidecar next to a relation file: same stem, `.stats` suffix."""
    path = Path(relation_path)
    return path.with_suffix(".stats")


class StatsCache:
    """Manages relation statistics in memory and in `.stats` sidecar files."""

    def __init__(self, enabled: bool = True, write_sidecars: bool = True):
        """Initialize the statistics cache."""
        self.enabled = enabled
        self.write_sidecars = write_sidecars
        self._memory_cache: Dict[str, RelationStats] = {}

    def get_cache_key(self, relation: Relation, rate: float, seed: int) -> str:
        """Generate a cache key from the file identity and sampling parameters."""
        cache_data = {
            "relation": relation.name,
            "cardinality": relation.cardinality,
            "bytes": relation.bytes_total,
            "rate": rate,
            "seed": seed,
        }
        if relation.path:
            try:
                stat = Path(relation.path).stat()
                cache_data["size"] = stat.st_size
                cache_data["mtime"] = stat.st_mtime_ns
            except OSError:
                pass

        cache_string = json.dumps(cache_data, sort_keys=True)
        return hashlib.sha256(cache_string.encode()).hexdigest()

    def _read_sidecar(self, relation: Relation, key: str) -> RelationStats:
        path = sidecar_path(relation.path)  # type: ignore[arg-type]
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise StatsCacheError(f"no sidecar at {path}")
        except (OSError, ValueError) as e:
            raise StatsCacheError(f"unreadable sidecar {path}: {e}")
        if document.get("key") != key:
            raise StatsCacheError(f"stale sidecar {path}")
        try:
            return RelationStats.model_validate(document.get("stats"))
        except ValidationError as e:
            raise StatsCacheError(f"invalid sidecar {path}: {e}")

    def get(
        self, relation: Relation, rate: float, seed: int
    ) -> Optional[RelationStats]:
        """Get statistics from memory or a sidecar file."""
        if not self.enabled:
            return None

        key = self.get_cache_key(relation, rate, seed)
        if key in self._memory_cache:
            logger.debug("Stats cache hit (memory) for %s", relation.name)
            return self._memory_cache[key]
        if not relation.path:
            return None
        try:
            stats = self._read_sidecar(relation, key)
        except StatsCacheError as e:
            logger.debug("Stats cache miss for %s: %s", relation.name, e)
            return None
        logger.debug("Stats cache hit (sidecar) for %s", relation.name)
        self._memory_cache[key] = stats
        return stats

    def set(
        self, relation: Relation, rate: float, seed: int, stats: RelationStats
    ) -> None:
        """Store statistics in memory and, for file-backed relations, a sidecar."""
        if not self.enabled:
            return

        key = self.get_cache_key(relation, rate, seed)
        self._memory_cache[key] = stats
        if not (relation.path and self.write_sidecars):
            return
        path = sidecar_path(relation.path)
        try:
            document = {"key": key, "stats": stats.model_dump(mode="json")}
            path.write_text(json.dumps(document, indent=2), encoding="utf-8")
        except OSError as e:
            logger.warning("Could not write stats sidecar %s: %s", path, e)

    def stats_for(
        self, relation: Relation, rate: float, seed: int, fresh: bool = False
    ) -> RelationStats:
        """Cached statistics, sampling the relation on a miss or when `fresh`."""
        stats = None if fresh else self.get(relation, rate, seed)
        if stats is None:
            stats = sample_relation(relation, rate, seed)
            self.set(relation, rate, seed, stats)
        return stats

    def clear(self) -> None:
        """Clear the in-memory layer."""
        self._memory_cache.clear()
