import math

import numpy as np
import pandas as pd
import pytest

from src.data.features import (
    TARGET,
    FeatureFrame,
    aggregate_hourly,
    cyclic_features,
    encode_categorical,
    encode_cyclic,
    filter_anomalies,
    fit_minmax,
    load_frame,
    save_frame,
)
from src.data.pipeline import FeaturePipeline, GuardedArray, ModelInputs
from src.data.sessions import SessionRecord, load_sessions, sessions_from_frame, sessions_to_frame
from src.data.station_encoder import compress_station_activity, fit_linear_autoencoder
from src.data.windows import make_test_windows, make_windows, plan_splits, window_count
from src.utils.errors import DataError, LeakageError


def target_frame(values, start="2020-01-06", site="X", extra=None, kinds=None):
    index = pd.date_range(start, periods=len(values), freq="h", tz="UTC")
    data = pd.DataFrame({TARGET: np.asarray(values, dtype=float)}, index=index)
    for name, column in (extra or {}).items():
        data[name] = column
    return FeatureFrame(site, data, {TARGET: "target", **(kinds or {})})


# ==================== SESSIONS ====================

def test_session_file_with_acn_names_and_cutoff(tmp_path):
    raw = pd.DataFrame({
        "siteID": ["caltech", "caltech", "caltech"],
        "stationID": ["1", "2", "1"],
        "connectionTime": ["2020-02-28T10:00:00Z", "2020-02-29T09:15:00Z", "2020-03-02T08:00:00Z"],
        "disconnectTime": ["2020-02-28T12:00:00Z", "2020-02-29T10:15:00Z", "2020-03-02T09:00:00Z"],
        "kWhDelivered": [6.0, 3.0, 2.0],
    })
    path = tmp_path / "acn.csv"
    raw.to_csv(path, index=False)
    sessions = load_sessions(path, end_date="2020-03-01")
    assert [s.energy_kwh for s in sessions] == [6.0, 3.0]
    assert sessions[0].station_id == "1"


def test_json_lines_sessions(tmp_path, make_session):
    path = tmp_path / "sessions.jsonl"
    sessions_to_frame([make_session("2020-01-01 10:00", "2020-01-01 11:00", 5.0)]).to_json(
        path, orient="records", lines=True
    )
    loaded = load_sessions(path)
    assert loaded[0].energy_kwh == 5.0
    assert loaded[0].connect == pd.Timestamp("2020-01-01 10:00", tz="UTC")


def test_invalid_sessions_rejected(make_session):
    with pytest.raises(DataError):
        make_session("2020-01-01 11:00", "2020-01-01 10:00", 1.0)
    with pytest.raises(DataError):
        make_session("2020-01-01 10:00", "2020-01-01 11:00", -1.0)


def test_session_without_disconnect_is_rejected():
    with pytest.raises(DataError, match="missing"):
        SessionRecord("A", "A-S000", pd.Timestamp("2020-01-01 00:00", tz="UTC"), pd.NaT, 5.0)


def test_invalid_rows_are_dropped_with_a_warning(chargecast_logs):
    raw = pd.DataFrame({
        "site_id": ["A", "A", "A", "A"],
        "station_id": ["A-S000", "A-S001", "A-S002", "A-S003"],
        "connect_utc": ["2020-01-01T00:00:00Z", "2020-01-01T02:00:00Z", "not a time", "2020-01-01T03:00:00Z"],
        "disconnect_utc": [None, "2020-01-01T03:00:00Z", "2020-01-01T04:00:00Z", "2020-01-01T02:00:00Z"],
        "energy_kwh": [5.0, 2.0, 1.0, 1.0],
    })

    sessions = sessions_from_frame(raw)

    assert [s.station_id for s in sessions] == ["A-S001"]
    assert any("Dropped 3 invalid sessions" in r.getMessage() for r in chargecast_logs.records)
    frame = aggregate_hourly(sessions, "A")
    assert frame.target.sum() == pytest.approx(2.0)


def test_all_invalid_rows_raise():
    raw = pd.DataFrame({
        "site_id": ["A"], "station_id": ["A-S000"], "connect_utc": ["2020-01-01T00:00:00Z"],
        "disconnect_utc": [None], "energy_kwh": [5.0],
    })
    with pytest.raises(DataError, match="invalid"):
        sessions_from_frame(raw)


def test_missing_session_file():
    with pytest.raises(FileNotFoundError):
        load_sessions("does/not/exist.csv")


# ==================== AGGREGATION ====================

def test_full_hour_session(make_session):
    frame = aggregate_hourly([make_session("2020-01-01 10:00", "2020-01-01 11:00", 5.0)], "A")
    assert len(frame) == 1
    assert frame.target[0] == 5.0


def test_session_split_across_hours(make_session):
    frame = aggregate_hourly([make_session("2020-01-01 10:30", "2020-01-01 11:30", 4.0)], "A")
    np.testing.assert_allclose(frame.target, [2.0, 2.0])
    assert frame.timestamps[0] == pd.Timestamp("2020-01-01 10:00", tz="UTC")


def test_idle_hours_are_zero(make_session):
    frame = aggregate_hourly([
        make_session("2020-01-01 08:00", "2020-01-01 09:00", 1.0),
        make_session("2020-01-01 12:10", "2020-01-01 12:40", 2.0, station="A-S001"),
    ], "A")
    np.testing.assert_allclose(frame.target, [1.0, 0.0, 0.0, 0.0, 2.0])
    np.testing.assert_allclose(frame.data["active_stations"], [1, 0, 0, 0, 1])
    assert frame.station_columns == ["station:A-S000", "station:A-S001"]


def test_zero_duration_session_goes_to_connect_hour(make_session):
    frame = aggregate_hourly([
        make_session("2020-01-01 10:20", "2020-01-01 10:20", 1.5),
        make_session("2020-01-01 11:00", "2020-01-01 11:30", 1.0),
    ], "A")
    np.testing.assert_allclose(frame.target, [1.5, 1.0])


def test_aggregation_conserves_energy(site_sessions):
    frame = aggregate_hourly(site_sessions, "A")
    emitted = math.fsum(s.energy_kwh for s in site_sessions)
    assert frame.target.sum() == pytest.approx(emitted, rel=1e-9)


def test_unknown_site(make_session):
    with pytest.raises(DataError):
        aggregate_hourly([make_session("2020-01-01 10:00", "2020-01-01 11:00", 1.0)], "B")


# ==================== ANOMALIES ====================

def test_constant_series_is_untouched():
    frame, log = filter_anomalies(target_frame(np.full(200, 3.0)), window=168)
    assert log == []
    np.testing.assert_array_equal(frame.target, np.full(200, 3.0))


def test_spike_is_clipped(rng):
    values = 5.0 + rng.uniform(-0.5, 0.5, size=400)
    values[300] = 100.0
    frame, log = filter_anomalies(target_frame(values), window=168, k=3.0)
    assert len(log) == 1
    assert log[0].original == 100.0
    assert frame.target[300] == log[0].clipped < 8.5
    np.testing.assert_array_equal(np.delete(frame.target, 300), np.delete(values, 300))


def test_infinite_k_is_identity(rng):
    values = rng.uniform(size=200)
    values[50] = 1e6
    frame, log = filter_anomalies(target_frame(values), window=168, k=math.inf)
    assert log == []
    np.testing.assert_array_equal(frame.target, values)


def test_anomaly_filter_needs_a_full_window():
    with pytest.raises(DataError, match="168"):
        filter_anomalies(target_frame(np.ones(100)), window=168)


# ==================== CALENDAR ====================

def test_cyclic_encoding_values():
    midnight = encode_cyclic("2020-01-01 00:00")
    assert midnight["hour"] == pytest.approx((0.0, 1.0))
    six = encode_cyclic("2020-01-01 06:00")
    assert six["hour"][0] == pytest.approx(1.0)
    assert six["hour"][1] == pytest.approx(0.0, abs=1e-12)


def test_cyclic_pairs_lie_on_unit_circle():
    columns = cyclic_features(pd.date_range("2020-01-01", periods=24 * 400, freq="h", tz="UTC"))
    for name in ("hour", "dow", "month"):
        radius = columns[f"{name}_sin"] ** 2 + columns[f"{name}_cos"] ** 2
        np.testing.assert_allclose(radius, 1.0, atol=1e-12)


def test_calendar_columns(site_frame):
    assert site_frame.columns_of("categorical") == ["day_type", "weekday"]
    assert set(site_frame.data["day_type"]) <= {"holiday", "weekend", "workday"}
    np.testing.assert_array_equal(site_frame.data["lag_24"].to_numpy()[24:], site_frame.target[:-24])
    assert site_frame.data["lag_168"].to_numpy()[:168].sum() == 0.0


# ==================== SCALING & CATEGORICALS ====================

def test_minmax_scaling():
    frame = target_frame(np.linspace(0.0, 10.0, 11), extra={"flat": np.full(11, 4.0)})
    scaler = fit_minmax(frame, [TARGET, "flat"], slice(0, 11))
    assert scaler.transform_column(TARGET, np.array([5.0]))[0] == pytest.approx(0.5)
    assert scaler.transform_column(TARGET, np.array([12.0]))[0] == pytest.approx(1.2)
    assert scaler.constant == ["flat"]
    np.testing.assert_array_equal(scaler.transform_column("flat", np.array([4.0, 7.0])), [4.0, 7.0])
    np.testing.assert_allclose(scaler.inverse_column(TARGET, np.array([0.25])), [2.5])


def test_categorical_strategies():
    three = encode_categorical("c", ["a", "b", "c", "a"])
    assert three.strategy == "onehot" and three.column_names() == ["c=a", "c=b", "c=c"]
    np.testing.assert_array_equal(three.transform(["b"]), [[0.0, 1.0, 0.0]])

    eight = encode_categorical("e", [str(i) for i in range(8)])
    assert eight.strategy == "embedding" and eight.embedding_dim == 4
    np.testing.assert_array_equal(eight.transform(["0", "7", "unseen"]), [1, 8, 0])

    assert encode_categorical("w", [str(i) for i in range(12)]).strategy == "autoencoder"
    with pytest.raises(DataError):
        encode_categorical("empty", [])


def test_unseen_category_is_logged(chargecast_logs):
    plan = encode_categorical("e", [str(i) for i in range(8)])
    plan.transform(["nope"])
    assert "OOV" in chargecast_logs.text


# ==================== STATION ACTIVITY ====================

def station_frame(rng, stations, hours=120):
    activity = (rng.random((hours, stations)) < 0.2).astype(float)
    extra = {f"station:S{i:03d}": activity[:, i] for i in range(stations)}
    kinds = {name: "station" for name in extra}
    return target_frame(activity.sum(axis=1), extra=extra, kinds=kinds)


def test_station_compression_to_code(rng):
    frame = station_frame(rng, 40)
    codes, encoder = compress_station_activity([frame], code_dim=30, epochs=20, lr=0.01)
    assert codes["X"].shape == (len(frame), 30)
    assert encoder.output_dim == 30
    np.testing.assert_allclose(encoder.encode(np.zeros((1, 40)))[0], encoder.bias)


def test_few_stations_pass_through(rng):
    frame = station_frame(rng, 5)
    codes, encoder = compress_station_activity([frame], code_dim=30)
    assert encoder.passthrough
    np.testing.assert_array_equal(codes["X"], frame.data[frame.station_columns].to_numpy())


def test_reconstruction_error_decreases(rng):
    data = (rng.random((200, 40)) < 0.3).astype(float)
    _, curve = fit_linear_autoencoder(data, 30, epochs=10, lr=1e-3, seed=0)
    assert all(b < a for a, b in zip(curve, curve[1:]))


# ==================== WINDOWS & SPLITS ====================

def inputs_of(length, protected_from=None):
    values = np.arange(length, dtype=float)
    return ModelInputs.from_arrays(values[:, None], values, protected_from=protected_from)


def test_window_counts():
    assert len(make_windows(inputs_of(10), 3, 2)) == 6
    assert len(make_windows(inputs_of(5), 3, 2)) == 1
    with pytest.raises(DataError, match="at least 5"):
        make_windows(inputs_of(4), 3, 2)


def test_window_count_formula_on_random_triples(rng):
    for _ in range(100):
        p, delta = int(rng.integers(1, 20)), int(rng.integers(1, 10))
        length = int(rng.integers(p + delta, p + delta + 60))
        windows = make_windows(inputs_of(length), p, delta)
        assert len(windows) == window_count(length, p, delta) == length - p - delta + 1


def test_window_contents_and_origin():
    window = make_windows(inputs_of(10), 3, 2)[2]
    np.testing.assert_array_equal(window.past_target, [2, 3, 4])
    np.testing.assert_array_equal(window.horizon_target, [5, 6])
    assert window.origin == pd.Timestamp("2020-01-01 04:00", tz="UTC")


def test_stride_delta_gives_disjoint_horizons():
    windows = make_windows(inputs_of(30), 4, 3, stride=3)
    covered = np.concatenate([w.horizon_target for w in windows])
    assert len(covered) == len(set(covered))


def test_split_plan_arithmetic():
    plan = plan_splits(1000, test_frac=0.10, folds=5)
    assert plan.test == (900, 1000)
    for fold in plan.folds:
        assert fold.train[1] <= fold.validation[0]
        assert fold.validation[1] <= 900


def test_split_plan_too_short():
    with pytest.raises(DataError):
        plan_splits(40, folds=5, min_segment=10)


def test_no_temporal_leakage_over_random_plans(rng):
    checked = 0
    while checked < 100:
        p, delta = int(rng.integers(1, 12)), int(rng.integers(1, 6))
        folds = int(rng.integers(1, 6))
        length = int(rng.integers(50, 600))
        try:
            plan = plan_splits(length, test_frac=0.1, folds=folds, min_segment=p + delta)
        except DataError:
            continue
        inputs = inputs_of(length)
        for fold in plan.folds:
            train = make_windows(inputs, p, delta, start=fold.train[0], stop=fold.train[1])
            val = make_windows(inputs, p, delta, start=fold.validation[0], stop=fold.validation[1])
            last_train = max(w.horizon_start + delta - 1 for w in train)
            first_val = min(w.start for w in val)
            assert last_train < first_val
            assert max(w.horizon_start + delta for w in val) <= plan.test_start
        checked += 1


def test_test_windows_tile_the_tail():
    inputs = inputs_of(60)
    windows = make_test_windows(inputs, 8, 4, test_start=40)
    assert [w.horizon_start for w in windows] == [40, 44, 48, 52, 56]
    assert windows[0].start == 32


# ==================== LEAKAGE GUARD ====================

def test_guarded_array_blocks_protected_reads():
    guarded = GuardedArray(np.arange(10.0), protected_from=7)
    np.testing.assert_array_equal(guarded[2:7], [2, 3, 4, 5, 6])
    for read in (lambda: guarded[7], lambda: guarded[5:8], lambda: guarded[-1], lambda: np.asarray(guarded)):
        with pytest.raises(LeakageError):
            read()
    guarded.unlock()
    assert guarded[9] == 9.0


def test_windows_cannot_reach_into_the_test_range():
    inputs = inputs_of(50, protected_from=40)
    make_windows(inputs, 5, 2, stop=40)
    with pytest.raises(LeakageError):
        make_windows(inputs, 5, 2, stop=42)
    with pytest.raises(LeakageError):
        make_test_windows(inputs, 5, 2, test_start=40)
    inputs.release_test_targets()
    assert len(make_test_windows(inputs, 5, 2, test_start=40)) == 5


def test_pipeline_fit_uses_training_rows_only(site_frame):
    test_start = len(site_frame) - 100
    spiked = site_frame.with_target(np.where(np.arange(len(site_frame)) >= test_start, 1e4, site_frame.target))
    pipeline = FeaturePipeline.fit(spiked, train_end=test_start, test_start=test_start)
    assert pipeline.scaler.maximums[TARGET] == pytest.approx(site_frame.target[:test_start].max())
    leaky = FeaturePipeline.fit(spiked, train_end=len(spiked))
    assert leaky.scaler.maximums[TARGET] == 1e4
    with pytest.raises(LeakageError):
        FeaturePipeline.fit(spiked, train_end=test_start + 1, test_start=test_start)


def test_pipeline_transform_and_persistence(site_frame):
    pipeline = FeaturePipeline.fit(site_frame, train_end=1000)
    inputs = pipeline.transform(site_frame, protected_from=1000)
    assert inputs.features.shape == (len(site_frame), len(pipeline.feature_names))
    assert inputs.embedding_vocab_sizes == [7]
    assert "day_type=workday" in pipeline.feature_names
    with pytest.raises(LeakageError):
        inputs.target[1000]
    restored = FeaturePipeline.from_dict(pipeline.to_dict())
    assert restored.fingerprint() == pipeline.fingerprint()
    np.testing.assert_array_equal(restored.transform(site_frame).features, inputs.features)


@pytest.mark.parametrize("vocab", [12, 15, 29])
def test_wide_categorical_code_is_narrower_than_its_one_hot(site_frame, vocab):
    labels = np.array([f"zone{i}" for i in range(vocab)])[np.arange(len(site_frame)) % vocab]
    frame = site_frame.with_columns(pd.DataFrame({"zone": labels}), {"zone": "categorical"})

    pipeline = FeaturePipeline.fit(frame, train_end=500, station_encoder_epochs=5)
    codes = [n for n in pipeline.feature_names if n.startswith("zone_code")]
    assert 0 < len(codes) == vocab - 1 < vocab
    inputs = pipeline.transform(frame)
    assert inputs.features.shape[1] == len(pipeline.feature_names)


def test_feature_widths_match_across_sites(site_frame, site_profile):
    from src.data.features import build_feature_frame
    from src.data.synth import generate_sessions, shifted_profile

    other = shifted_profile(site_profile, 5, 0.5, site_id="B", seed=2)
    frame_b, _ = build_feature_frame(generate_sessions(other, "2019-06-03", 1), "B")
    names_a = FeaturePipeline.fit(site_frame, train_end=500).feature_names
    names_b = FeaturePipeline.fit(frame_b, train_end=500).feature_names
    assert names_a == names_b


def test_frame_cache_round_trip(tmp_path, site_frame):
    path = save_frame(site_frame, tmp_path / "A.frame.csv", extra={"anomalies_clipped": 0})
    loaded = load_frame(path)
    assert loaded.site_id == "A"
    assert loaded.column_kinds == site_frame.column_kinds
    assert loaded.timestamps.equals(site_frame.timestamps)
    np.testing.assert_allclose(loaded.target, site_frame.target)
    assert list(loaded.data["weekday"]) == list(site_frame.data["weekday"])
