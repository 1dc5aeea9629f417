import numpy as np
import pandas as pd
import pytest

from src.config.settings import default_config
from src.data.features import build_feature_frame
from src.data.sessions import SessionRecord
from src.data.synth import SiteProfile, generate_sessions, shifted_profile
from src.training.harness import default_hyperparameters, final_fit_and_test


def session(connect, disconnect, kwh, site="A", station="A-S000"):
    return SessionRecord(site, station, pd.Timestamp(connect, tz="UTC"), pd.Timestamp(disconnect, tz="UTC"), float(kwh))


@pytest.fixture
def make_session():
    return session


@pytest.fixture(scope="session")
def site_profile():
    return SiteProfile(seed=1, site_id="A", sessions_per_day=24.0, station_count=12)


@pytest.fixture(scope="session")
def site_sessions(site_profile):
    return generate_sessions(site_profile, "2019-01-07", months=2)


@pytest.fixture(scope="session")
def site_frame(site_sessions):
    frame, _ = build_feature_frame(site_sessions, "A")
    return frame


def tiny_settings():
    """Desk-sized settings that train in seconds."""
    config = default_config()
    config["train"].update(
        lookback=24, horizon=4, epochs=3, patience=1, batch_size=32, learning_rate=0.01, seed=0,
    )
    config["tcn"].update(num_blocks=2, channels=4, kernel_size=2, dropout=0.0, head_hidden=4)
    config["search"].update(
        budget=2, num_blocks=[1, 2], channels=[4], kernel_size=[2], batch_size=[32], jobs=1,
    )
    config["data"].update(folds=2)
    config["transfer"].update(lookback=24, horizon=4, budget_hours=240, appended_channels=4)
    return config


@pytest.fixture
def tiny_config():
    return tiny_settings()


@pytest.fixture(scope="session")
def source_fit(site_frame):
    """One source model trained on site A with the tiny settings."""
    config = tiny_settings()
    return final_fit_and_test(site_frame, default_hyperparameters(config), config)


@pytest.fixture(scope="session")
def target_frame(site_profile):
    """Site B: site A shifted by three hours with a smaller fleet."""
    profile = shifted_profile(site_profile, 3, 0.7, site_id="B")
    frame, _ = build_feature_frame(generate_sessions(profile, "2019-01-07", months=2), "B")
    return frame


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def chargecast_logs(caplog):
    """Capture records of the ChargeCast logger even after the CLI turned propagation off."""
    import logging

    logger = logging.getLogger("ChargeCast")
    logger.addHandler(caplog.handler)
    caplog.handler.setLevel(logging.DEBUG)
    try:
        yield caplog
    finally:
        logger.removeHandler(caplog.handler)
