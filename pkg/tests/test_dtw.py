import itertools

import numpy as np
import pandas as pd
import pytest

from src.data.features import TARGET, FeatureFrame
from src.transfer.dtw import downsample, dtw_distance, rank_sources, recent_overlap, site_distance, znormalize
from src.utils.cache import LRUCache, clear_distance_cache
from src.utils.errors import DataError


def brute_force_dtw(a, b):
    """Minimum squared cost over every monotone warping path from (0, 0) to (n-1, m-1)."""
    n, m = len(a), len(b)
    best = np.inf

    def walk(i, j, total):
        nonlocal best
        total += (a[i] - b[j]) ** 2
        if (i, j) == (n - 1, m - 1):
            best = min(best, total)
            return
        if i + 1 < n:
            walk(i + 1, j, total)
        if j + 1 < m:
            walk(i, j + 1, total)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, total)

    walk(0, 0, 0.0)
    return best


def frame_of(site, values, start="2020-01-06"):
    index = pd.date_range(start, periods=len(values), freq="h", tz="UTC")
    return FeatureFrame(site, pd.DataFrame({TARGET: np.asarray(values, dtype=float)}, index=index), {TARGET: "target"})


@pytest.fixture(autouse=True)
def fresh_cache():
    clear_distance_cache()
    yield
    clear_distance_cache()


def test_worked_examples():
    x = [0.3, -1.0, 2.0]
    assert dtw_distance(x, x).distance == 0.0
    assert dtw_distance([0, 1, 0], [0, 0, 1, 0]).distance == 0.0
    result = dtw_distance([0, 0], [1, 1])
    assert result.distance == 2.0
    assert result.path_length == 2


def test_matches_exhaustive_paths():
    rng = np.random.default_rng(0)
    for n, m in itertools.product(range(1, 6), repeat=2):
        for _ in range(3):
            a, b = rng.normal(size=n), rng.normal(size=m)
            assert dtw_distance(a, b).distance == pytest.approx(brute_force_dtw(a, b), abs=1e-12)


def test_metric_properties():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.normal(size=6), rng.normal(size=8)
        ab, ba = dtw_distance(a, b).distance, dtw_distance(b, a).distance
        assert ab >= 0.0
        assert ab == pytest.approx(ba)


def test_band():
    a, b = [0.0, 1.0, 2.0, 3.0], [0.0, 0.0, 0.0, 1.0, 2.0, 3.0]
    assert dtw_distance(a, b, band=2).distance == pytest.approx(dtw_distance(a, b).distance)
    with pytest.raises(ValueError):
        dtw_distance(a, b, band=1)
    narrow = dtw_distance([0.0, 5.0, 0.0, 0.0], [0.0, 0.0, 0.0, 5.0], band=0).distance
    assert narrow >= dtw_distance([0.0, 5.0, 0.0, 0.0], [0.0, 0.0, 0.0, 5.0]).distance


def test_empty_series_rejected():
    with pytest.raises(DataError):
        dtw_distance([], [1.0])


def test_znormalize_and_downsample():
    np.testing.assert_array_equal(znormalize([4.0, 4.0]), [0.0, 0.0])
    z = znormalize([1.0, 2.0, 3.0])
    assert z.mean() == pytest.approx(0.0) and z.std() == pytest.approx(1.0)
    np.testing.assert_allclose(downsample(np.arange(10.0), 4), [2.0, 5.0, 8.0])
    assert len(downsample(np.arange(1000.0), 336)) <= 336


def test_ranking_prefers_the_copy():
    rng = np.random.default_rng(2)
    load = np.tile(np.sin(np.linspace(0, 2 * np.pi, 24, endpoint=False)) + 1.5, 30) + rng.normal(0, 0.05, 720)
    target = frame_of("T", load)
    copy = frame_of("copy", load)
    unrelated = frame_of("noise", rng.normal(size=720))
    ranked = rank_sources(target, [unrelated, copy])
    assert [r.source_id for r in ranked] == ["copy", "noise"]
    assert ranked[0].distance == pytest.approx(0.0)
    assert [r.source_id for r in rank_sources(target, [unrelated])] == ["noise"]


def test_ties_broken_by_site_id():
    load = np.arange(48.0) % 24
    ranked = rank_sources(frame_of("T", load), [frame_of("b", load), frame_of("a", load)])
    assert [r.source_id for r in ranked] == ["a", "b"]


def test_ranking_needs_overlap_and_candidates():
    target = frame_of("T", np.ones(48), start="2020-01-01")
    later = frame_of("L", np.ones(48), start="2021-01-01")
    with pytest.raises(DataError):
        rank_sources(target, [later])
    with pytest.raises(DataError):
        rank_sources(target, [])


def test_recent_overlap_window():
    target = frame_of("T", np.ones(24 * 60))
    candidate = frame_of("C", np.ones(24 * 40), start="2020-01-16")
    start, end = recent_overlap(target, candidate, window_days=28)
    assert end == target.timestamps[-1]
    assert (end - start) == pd.Timedelta(hours=28 * 24 - 1)


def test_shift_one_source_ranks_above_shift_twelve(site_profile):
    from src.data.features import aggregate_hourly
    from src.data.synth import generate_sessions, shifted_profile

    def frame(profile):
        return aggregate_hourly(generate_sessions(profile, "2019-01-07", 2), profile.site_id)

    target = frame(site_profile)
    near = frame(shifted_profile(site_profile, 1, site_id="near", seed=11))
    far = frame(shifted_profile(site_profile, 12, site_id="far", seed=12))
    ranked = rank_sources(target, [far, near], band=3)
    assert [r.source_id for r in ranked] == ["near", "far"]


def test_site_distance_is_memoized(rng):
    values = rng.uniform(size=24 * 30)
    target, source = frame_of("T", values), frame_of("S", values[::-1])

    first = site_distance(target, source, window_days=7)
    assert site_distance(target, source, window_days=7) is first
    assert site_distance(target, source, window_days=7, band=2) is not first


def test_lru_cache_evicts_oldest_and_counts():
    cache = LRUCache(max_size=2)
    cache.set("a", 1)
    cache.set("b", 2)
    assert cache.get("a") == 1
    cache.set("c", 3)

    assert cache.get("b") is None
    assert (cache.get("a"), cache.get("c")) == (1, 3)
    assert (cache.hits, cache.misses) == (3, 1)
    with pytest.raises(ValueError):
        LRUCache(max_size=0)
