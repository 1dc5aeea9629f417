from src.data.sessions import SessionRecord, load_holidays, load_sessions, sessions_from_frame, write_sessions
from src.data.features import (
    AnomalyRecord,
    CategoricalPlan,
    FeatureFrame,
    MinMaxScaler,
    aggregate_hourly,
    apply_minmax,
    build_feature_frame,
    encode_categorical,
    encode_cyclic,
    filter_anomalies,
    fit_minmax,
    invert_minmax,
)
from src.data.station_encoder import StationEncoder, compress_station_activity
from src.data.pipeline import FeaturePipeline, GuardedArray, ModelInputs
from src.data.windows import SplitPlan, WindowSample, make_test_windows, make_windows, plan_splits
from src.data.synth import SiteProfile, generate_sessions, shifted_profile

__all__ = [
    "SessionRecord",
    "load_holidays",
    "load_sessions",
    "sessions_from_frame",
    "write_sessions",
    "AnomalyRecord",
    "CategoricalPlan",
    "FeatureFrame",
    "MinMaxScaler",
    "aggregate_hourly",
    "apply_minmax",
    "build_feature_frame",
    "encode_categorical",
    "encode_cyclic",
    "filter_anomalies",
    "fit_minmax",
    "invert_minmax",
    "StationEncoder",
    "compress_station_activity",
    "FeaturePipeline",
    "GuardedArray",
    "ModelInputs",
    "SplitPlan",
    "WindowSample",
    "make_test_windows",
    "make_windows",
    "plan_splits",
    "SiteProfile",
    "generate_sessions",
    "shifted_profile",
]
