from typing import Any, Dict, Hashable, Optional
import time
from collections import OrderedDict


class LRUCache:
    """Simple LRU (Least Recently Used) cache with optional expiry."""

    def __init__(self, max_size: int = 100, ttl: Optional[float] = None):
        """
        Initialize cache.

        Args:
            max_size: Maximum number of items in cache
            ttl: Time to live in seconds (None keeps entries until evicted)
        """
        if max_size < 1:
            raise ValueError("max_size must be >= 1")
        self.max_size = max_size
        self.ttl = ttl
        self.cache: OrderedDict = OrderedDict()
        self.timestamps: Dict[Hashable, float] = {}
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable) -> Optional[Any]:
        """Get item from cache if it exists and hasn't expired."""
        if key not in self.cache:
            self.misses += 1
            return None

        # Check if expired
        if self.ttl is not None and time.monotonic() - self.timestamps[key] > self.ttl:
            del self.cache[key]
            del self.timestamps[key]
            self.misses += 1
            return None

        # Move to end (most recently used)
        self.cache.move_to_end(key)
        self.hits += 1
        return self.cache[key]

    def set(self, key: Hashable, value: Any) -> None:
        """Add or update item in cache."""
        if key in self.cache:
            self.cache.move_to_end(key)
        elif len(self.cache) >= self.max_size:
            # Remove oldest
            oldest_key = next(iter(self.cache))
            del self.cache[oldest_key]
            del self.timestamps[oldest_key]

        self.cache[key] = value
        self.timestamps[key] = time.monotonic()

    def clear(self) -> None:
        """Clear all items from cache."""
        self.cache.clear()
        self.timestamps.clear()
        self.hits = 0
        self.misses = 0

    def size(self) -> int:
        """Get current cache size."""
        return len(self.cache)


# Global DTW distance cache, keyed by (site pair, series fingerprints, band)
_dtw_cache = LRUCache(max_size=512)


def get_cached_distance(key: Hashable) -> Optional[Any]:
    """Get a DTW result from cache if available."""
    return _dtw_cache.get(key)


def cache_distance(key: Hashable, result: Any) -> None:
    """Cache a DTW result."""
    _dtw_cache.set(key, result)


def clear_distance_cache() -> None:
    _dtw_cache.clear()
