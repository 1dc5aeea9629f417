import json
import math

import numpy as np
import pytest

from src.config.settings import default_config
from src.data.pipeline import ModelInputs
from src.data.synth import SiteProfile, generate_sessions
from src.data.features import build_feature_frame
from src.data.windows import make_windows, plan_splits
from src.model.tcn import TcnConfig, TcnModel
from src.training.harness import (
    TrainConfig,
    build_model_config,
    cross_validate,
    default_hyperparameters,
    final_fit_and_test,
    fold_inputs,
    run_search,
    seasonal_naive,
    train,
    window_pinball,
)
from src.training.search import SearchSpace, Trial, sample_trial, sample_trials
from src.metrics.evaluation import normalized_deviation
from src.utils.errors import DataError


def constant_inputs(value, length=60):
    return ModelInputs.from_arrays(np.ones((length, 1)), np.full(length, value))


def small_model(lookback=8, horizon=1, quantiles=(0.5,), seed=0):
    config = TcnConfig(
        input_channels=1, kernel_size=2, num_blocks=1, channels=[4], dropout=0.0,
        lookback=lookback, horizon=horizon, quantiles=quantiles, head_hidden=4,
    )
    return TcnModel(config, seed=seed)


# =========================
# TrainConfig
# =========================

def test_train_config_from_config(tiny_config):
    config = TrainConfig.from_config(tiny_config)
    assert (config.lookback, config.horizon, config.epochs, config.patience) == (24, 4, 3, 1)
    assert config.quantiles == (0.05, 0.50, 0.90)


@pytest.mark.parametrize("kwargs", [
    {"epochs": -1},
    {"epochs": 5, "patience": 5},
    {"batch_size": 0},
    {"learning_rate": -0.1},
])
def test_train_config_rejects_invalid_values(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_with_epochs_caps_patience():
    config = TrainConfig(epochs=50, patience=20).with_epochs(5)
    assert config.epochs == 5
    assert config.patience == 4


# =========================
# Training loop
# =========================

def test_constant_target_is_learned():
    c = 0.5
    inputs = constant_inputs(c)
    windows = make_windows(inputs, 8, 1)
    model = small_model()
    config = TrainConfig(epochs=400, patience=50, batch_size=len(windows), learning_rate=5e-3,
                         quantiles=(0.5,), lookback=8, horizon=1)

    result = train(model, windows, config)

    predictions = np.concatenate([
        model.predict(w.features[None], w.past_target[None], w.categorical[None]).ravel() for w in windows[:5]
    ])
    np.testing.assert_allclose(predictions, c, atol=0.05)
    assert result.best_loss < 0.025


def test_zero_epochs_leaves_model_unchanged():
    inputs = constant_inputs(1.0)
    model = small_model()
    before = model.state_dict()

    result = train(model, make_windows(inputs, 8, 1), TrainConfig(epochs=0, lookback=8, horizon=1, quantiles=(0.5,)))

    assert result.epochs_run == 0
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(value, before[name])


def test_training_is_deterministic_for_a_seed(rng):
    values = rng.uniform(0.0, 1.0, size=80)
    inputs = ModelInputs.from_arrays(values[:, None], values)
    windows = make_windows(inputs, 8, 2)
    config = TrainConfig(epochs=4, patience=3, batch_size=16, learning_rate=1e-2, lookback=8, horizon=2,
                         quantiles=(0.1, 0.9), seed=3)

    runs = []
    for _ in range(2):
        model = small_model(horizon=2, quantiles=(0.1, 0.9))
        runs.append((train(model, windows, config).curves, model.state_dict()))

    assert runs[0][0] == runs[1][0]
    for name in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][name], runs[1][1][name])


def test_best_weights_are_restored(rng):
    values = rng.uniform(0.0, 1.0, size=120)
    inputs = ModelInputs.from_arrays(values[:, None], values)
    train_windows = make_windows(inputs, 8, 2, stop=80)
    val_windows = make_windows(inputs, 8, 2, start=80)
    config = TrainConfig(epochs=12, patience=2, batch_size=8, learning_rate=5e-2, lookback=8, horizon=2,
                         quantiles=(0.5,))
    model = small_model(horizon=2)

    result = train(model, train_windows, config, val_windows)

    val_losses = [row["val_loss"] for row in result.curves]
    assert result.best_loss == pytest.approx(min(val_losses))
    assert result.curves[result.best_epoch - 1]["val_loss"] == pytest.approx(result.best_loss)
    assert window_pinball(model, val_windows, [0.5]) == pytest.approx(result.best_loss, rel=1e-9)
    if result.stopped_early:
        assert result.epochs_run < config.epochs


def test_train_without_windows_raises():
    with pytest.raises(DataError):
        train(small_model(), [], TrainConfig(epochs=2, patience=1, quantiles=(0.5,)))


# =========================
# Random search
# =========================

def test_search_trials_do_not_depend_on_budget():
    space = SearchSpace(seed=7)
    short = sample_trials(space, 3)
    long = sample_trials(space, 8)
    assert short == long[:3]
    assert sample_trial(space, 2) == long[2]


def test_search_samples_stay_in_range():
    space = SearchSpace(seed=1, dropout=(0.1, 0.2), learning_rate=(1e-4, 1e-2))
    for trial in sample_trials(space, 20):
        hp = trial.hyperparameters
        assert hp["num_blocks"] in space.num_blocks
        assert hp["channels"] in space.channels
        assert 0.1 <= hp["dropout"] <= 0.2
        assert 1e-4 <= hp["learning_rate"] <= 1e-2


def test_search_space_rejects_empty_range():
    with pytest.raises(ValueError):
        SearchSpace(channels=[])
    with pytest.raises(ValueError):
        SearchSpace(budget=0)


def _cv_inputs(rng, length=200):
    values = np.abs(np.sin(np.arange(length) * 2 * np.pi / 24)) + 0.05 * rng.normal(size=length)
    return ModelInputs.from_arrays(values[:, None], values, protected_from=180)


def test_budget_of_one_returns_that_trial(rng, tiny_config):
    inputs = _cv_inputs(rng)
    plan = plan_splits(len(inputs), 0.1, folds=2, min_segment=12)
    trial = Trial(0, default_hyperparameters(tiny_config))
    config = TrainConfig(epochs=2, patience=1, lookback=8, horizon=4)

    result = cross_validate(inputs, plan, [trial], config, head_hidden=4)

    assert result.best.trial_id == 0
    assert len(result.best.fold_losses) == plan.fold_count
    assert all(math.isfinite(loss) for loss in result.best.fold_losses)


def test_duplicate_trials_score_equally_and_tie_breaks_by_id(rng, tiny_config, tmp_path):
    inputs = _cv_inputs(rng)
    plan = plan_splits(len(inputs), 0.1, folds=2, min_segment=12)
    hp = default_hyperparameters(tiny_config)
    config = TrainConfig(epochs=2, patience=1, lookback=8, horizon=4)

    result = cross_validate(inputs, plan, [Trial(3, hp), Trial(1, hp)], config, head_hidden=4, out_dir=tmp_path)

    assert result.trials[0].fold_losses == result.trials[1].fold_losses
    assert result.best.trial_id == 1
    folds = json.loads((tmp_path / "folds.json").read_text())
    assert folds["best_trial"] == 1
    assert (tmp_path / "trial-3" / "curves.csv").exists()


def test_cross_validation_never_reads_test_targets(rng, tiny_config):
    inputs = _cv_inputs(rng)
    plan = plan_splits(len(inputs), 0.1, folds=2, min_segment=12)
    assert inputs.protected_from == plan.test_start
    result = cross_validate(inputs, plan, [Trial(0, default_hyperparameters(tiny_config))],
                            TrainConfig(epochs=1, patience=0, lookback=8, horizon=4), head_hidden=4)
    assert result.plan.folds[-1].validation[1] <= plan.test_start


def test_frozen_learning_rate_trial_is_never_selected(rng, tiny_config):
    inputs = _cv_inputs(rng)
    plan = plan_splits(len(inputs), 0.1, folds=2, min_segment=12)
    hp = default_hyperparameters(tiny_config)
    stuck = Trial(0, dict(hp, learning_rate=0.0))
    moving = Trial(1, dict(hp, learning_rate=1e-2))
    config = TrainConfig(epochs=10, patience=3, lookback=8, horizon=4)

    result = cross_validate(inputs, plan, [stuck, moving], config, head_hidden=4)

    assert result.best.trial_id == 1
    assert result.trials[1].mean_loss < result.trials[0].mean_loss


def test_best_loss_never_worsens_with_budget(rng, tiny_config):
    inputs = _cv_inputs(rng)
    plan = plan_splits(len(inputs), 0.1, folds=2, min_segment=12)
    trials = sample_trials(SearchSpace.from_config(tiny_config["search"], seed=0), 4)
    config = TrainConfig(epochs=2, patience=1, lookback=8, horizon=4)

    best = [
        cross_validate(inputs, plan, trials[:budget], config, head_hidden=4).best.mean_loss
        for budget in (1, 2, 4)
    ]

    assert best[0] >= best[1] >= best[2]


def test_fold_pipelines_fit_on_fold_training_rows(site_frame, tiny_config):
    plan = plan_splits(len(site_frame), 0.1, folds=2, min_segment=28)
    per_fold = fold_inputs(site_frame, tiny_config, plan)

    assert len(per_fold) == plan.fold_count
    target = site_frame.target
    for fold, inputs in zip(plan.folds, per_fold):
        stop = fold.train[1]
        scaled = inputs.target[:stop]
        assert scaled.min() == pytest.approx(0.0)
        assert scaled.max() == pytest.approx(1.0)
        expected = (target[:plan.test_start] - target[:stop].min()) / (target[:stop].max() - target[:stop].min())
        np.testing.assert_allclose(inputs.target[:plan.test_start], expected)
        assert inputs.protected_from == plan.test_start


def test_cross_validate_rejects_wrong_fold_count(rng, tiny_config):
    inputs = _cv_inputs(rng)
    plan = plan_splits(len(inputs), 0.1, folds=2, min_segment=12)
    with pytest.raises(ValueError, match="folds"):
        cross_validate([inputs], plan, [Trial(0, default_hyperparameters(tiny_config))],
                       TrainConfig(epochs=1, patience=0, lookback=8, horizon=4), head_hidden=4)


def test_model_config_follows_hyperparameters(rng, tiny_config):
    inputs = _cv_inputs(rng)
    hp = dict(default_hyperparameters(tiny_config), num_blocks=3, channels=6)
    config = build_model_config(hp, inputs, TrainConfig(lookback=8, horizon=4), head_hidden=5)
    assert config.channels == [6, 6, 6]
    assert config.dilations == [1, 2, 4]
    assert (config.lookback, config.horizon, config.head_hidden) == (8, 4, 5)


# =========================
# Seasonal naive
# =========================

def test_seasonal_naive_is_exact_on_weekly_periodic_series(rng):
    week = rng.uniform(1.0, 5.0, size=168)
    series = np.tile(week, 4)
    history, future = series[:500], series[500:524]
    forecast = seasonal_naive(history, 24)
    np.testing.assert_allclose(forecast, future)
    assert normalized_deviation(future, forecast) == 0.0


def test_seasonal_naive_on_constant_series():
    forecast = seasonal_naive(np.full(400, 3.0), 48)
    np.testing.assert_array_equal(forecast, np.full(48, 3.0))


def test_seasonal_naive_repeats_last_week_beyond_one_season():
    history = np.arange(200.0)
    forecast = seasonal_naive(history, 170)
    assert forecast[0] == history[-168]
    assert forecast[168] == forecast[0]


def test_seasonal_naive_needs_history():
    with pytest.raises(DataError, match="192"):
        seasonal_naive(np.ones(191), 24)


# =========================
# Final fit
# =========================

def test_final_fit_writes_outputs(site_frame, tiny_config, tmp_path):
    result = final_fit_and_test(site_frame, default_hyperparameters(tiny_config), tiny_config, out_dir=tmp_path)

    report = result.report.to_dict()
    for key in ("picp", "pinball", "winkler", "nd"):
        assert math.isfinite(report[key])
    assert 0.0 <= report["picp"] <= 100.0
    assert result.evaluation.baseline_nd is not None
    assert len(result.evaluation.forecasts) == len(result.evaluation.origins) * 4
    assert result.test_start == len(site_frame) - int(np.floor(0.1 * len(site_frame) + 0.5))
    for name in ("best.ckpt", "report.json", "forecasts.csv", "curves.csv"):
        assert (tmp_path / name).exists()
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["metrics"]["n_steps"] == result.report.n_steps
    assert payload["parameters"]["total"] == result.model.parameter_count()


def test_test_windows_start_at_the_held_out_tail(site_frame, tiny_config):
    result = final_fit_and_test(site_frame, default_hyperparameters(tiny_config), tiny_config, epochs=1)
    first = result.evaluation.origins[0]
    assert first == site_frame.timestamps[result.test_start - 1]
    steps = np.diff([o.value for o in result.evaluation.origins])
    assert np.all(steps == 4 * 3600 * 10 ** 9)


def test_run_search_picks_a_sampled_trial(site_frame, tiny_config, tmp_path):
    cv, final = run_search(site_frame, tiny_config, out_dir=tmp_path)

    sampled = sample_trials(SearchSpace.from_config(tiny_config["search"], seed=0))
    assert cv.best.hyperparameters == sampled[cv.best.trial_id].hyperparameters
    assert len(cv.trials) == 2
    assert final.train_result.epochs_run <= cv.best.mean_best_epoch
    assert (tmp_path / "folds.json").exists()
    assert (tmp_path / "report.json").exists()


@pytest.mark.slow
def test_end_to_end_coverage_and_baseline():
    profile = SiteProfile(seed=11, site_id="E", sessions_per_day=60.0, station_count=20)
    frame, _ = build_feature_frame(generate_sessions(profile, "2019-01-07", months=6), "E")
    settings = default_config()
    settings["train"].update(lookback=72, horizon=24, epochs=40, patience=8, learning_rate=3e-3, seed=0)
    settings["tcn"].update(num_blocks=3, channels=16, kernel_size=3, dropout=0.1, head_hidden=16)

    result = final_fit_and_test(frame, default_hyperparameters(settings), settings)

    assert 78.0 <= result.report.picp <= 92.0
    assert result.report.nd < result.evaluation.baseline_nd
