"""
Seeded synthetic charging-site generator.

Hourly session counts are Poisson with rate
    sessions_per_day * shape[hour] * day multiplier * (1 + trend * years)
and each session's energy is lognormal with the configured mean. Sessions
charge at a constant power from a uniformly drawn connect minute.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from ..utils.errors import DataError
from ..utils.seeding import make_rng
from .sessions import SessionRecord

logger = logging.getLogger("ChargeCast")

HOURS_PER_YEAR = 24 * 365.25


def default_shape(peak_hour: float = 10.0, width: float = 3.0, floor: float = 0.01) -> np.ndarray:
    """Workplace-style daily shape: a daytime bump over a small overnight floor."""
    hours = np.arange(24, dtype=np.float64)
    distance = np.minimum(np.abs(hours - peak_hour), 24 - np.abs(hours - peak_hour))
    weights = np.exp(-0.5 * (distance / width) ** 2) + floor
    return weights / weights.sum()


@dataclass(frozen=True)
class SiteProfile:
    seed: int = 0
    site_id: str = "synth-site"
    shape: Sequence[float] = field(default_factory=lambda: tuple(default_shape()))
    weekday_multiplier: float = 1.0
    weekend_multiplier: float = 0.3
    holiday_multiplier: float = 0.2
    holidays: Sequence[date] = ()
    sigma: float = 0.5
    station_count: int = 20
    sessions_per_day: float = 30.0
    trend_per_year: float = 0.0
    energy_mean_kwh: float = 8.0
    charge_power_kw: float = 11.0

    def __post_init__(self):
        shape = np.asarray(self.shape, dtype=np.float64)
        if shape.shape != (24,) or np.any(shape < 0):
            raise ValueError("shape must hold 24 non-negative weights")
        if not math.isclose(float(shape.sum()), 1.0, abs_tol=1e-9):
            raise ValueError(f"shape weights must sum to 1, got {shape.sum()}")
        object.__setattr__(self, "shape", tuple(float(w) for w in shape))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.sessions_per_day <= 0:
            raise ValueError("sessions_per_day must be > 0")
        if self.station_count < 1:
            raise ValueError("station_count must be >= 1")
        if self.energy_mean_kwh <= 0 or self.charge_power_kw <= 0:
            raise ValueError("energy_mean_kwh and charge_power_kw must be > 0")

    @property
    def peak_hour(self) -> int:
        return int(np.argmax(self.shape))


def generate_sessions(profile: SiteProfile, start, months: int) -> List[SessionRecord]:
    """
    Draw sessions for `months` calendar months from `start` (UTC midnight).

    Args:
        profile: Site behaviour
        start: First day, anything pandas parses
        months: Calendar months to cover, >= 1

    Returns:
        Sessions sorted by connect time
    """
    if months < 1:
        raise DataError(f"months must be >= 1, got {months}")
    begin = pd.Timestamp(start)
    begin = (begin.tz_localize("UTC") if begin.tzinfo is None else begin.tz_convert("UTC")).floor("D")
    end = begin + pd.DateOffset(months=months)
    hours = pd.date_range(begin, end, freq="h", inclusive="left")

    holidays = {pd.Timestamp(d).date() for d in profile.holidays}
    shape = np.asarray(profile.shape)
    is_holiday = np.array([ts.date() in holidays for ts in hours])
    weekend = np.asarray(hours.dayofweek >= 5)
    day_mult = np.where(
        is_holiday, profile.holiday_multiplier,
        np.where(weekend, profile.weekend_multiplier, profile.weekday_multiplier),
    )
    years = (np.arange(len(hours)) / HOURS_PER_YEAR)
    rate = profile.sessions_per_day * shape[np.asarray(hours.hour)] * day_mult * np.maximum(1.0 + profile.trend_per_year * years, 0.0)

    rng = make_rng(profile.seed, f"synth:{profile.site_id}")
    counts = rng.poisson(rate)
    total = int(counts.sum())
    mu = math.log(profile.energy_mean_kwh) - 0.5 * profile.sigma ** 2
    energy = rng.lognormal(mu, profile.sigma, size=total) if profile.sigma > 0 else np.full(total, profile.energy_mean_kwh)
    offsets = rng.uniform(0.0, 1.0, size=total)
    stations = rng.integers(0, profile.station_count, size=total)

    hour_of_session = np.repeat(np.arange(len(hours)), counts)
    base_ns = hours.asi8[hour_of_session]
    connect_ns = base_ns + np.round(offsets * 3600e9).astype(np.int64)
    duration_ns = np.round(energy / profile.charge_power_kw * 3600e9).astype(np.int64)

    sessions = [
        SessionRecord(
            profile.site_id,
            f"{profile.site_id}-S{int(station):03d}",
            pd.Timestamp(int(c), tz="UTC"),
            pd.Timestamp(int(c + d), tz="UTC"),
            float(e),
        )
        for c, d, e, station in zip(connect_ns, duration_ns, energy, stations)
    ]
    sessions.sort(key=lambda s: (s.connect, s.station_id))
    logger.info(
        f"✅ Generated {len(sessions)} sessions ({float(energy.sum()):.1f} kWh) for {profile.site_id} "
        f"over {months} months from {begin.date()}"
    )
    return sessions


def shifted_profile(
    profile: SiteProfile, hour_shift: int, scale: float = 1.0, site_id: Optional[str] = None, seed: Optional[int] = None
) -> SiteProfile:
    """Rotate the daily shape by `hour_shift` hours and scale session volume."""
    if not 0 <= hour_shift <= 23:
        raise ValueError(f"hour_shift must lie in [0, 23], got {hour_shift}")
    if scale <= 0:
        raise ValueError("scale must be > 0")
    return replace(
        profile,
        shape=tuple(np.roll(np.asarray(profile.shape), hour_shift)),
        sessions_per_day=profile.sessions_per_day * scale,
        site_id=site_id or profile.site_id,
        seed=profile.seed if seed is None else seed,
    )


def profile_from_config(synth: dict, holidays: Sequence[date] = ()) -> SiteProfile:
    """Build a profile from the resolved `synth` config section, applying its shift and scale."""
    base = SiteProfile(
        seed=int(synth["seed"]),
        site_id=str(synth["site_id"]),
        weekend_multiplier=float(synth["weekend_multiplier"]),
        holiday_multiplier=float(synth["holiday_multiplier"]),
        holidays=tuple(holidays),
        sigma=float(synth["sigma"]),
        station_count=int(synth["station_count"]),
        sessions_per_day=float(synth["sessions_per_day"]),
        trend_per_year=float(synth["trend_per_year"]),
        energy_mean_kwh=float(synth["energy_mean_kwh"]),
    )
    return shifted_profile(base, int(synth["hour_shift"]), float(synth["scale"]))


def hourly_profile_mean(frame_target: np.ndarray, timestamps: pd.DatetimeIndex) -> np.ndarray:
    """Mean kWh per hour of day."""
    series = pd.Series(np.asarray(frame_target, dtype=np.float64), index=timestamps)
    return series.groupby(series.index.hour).mean().reindex(range(24), fill_value=0.0).to_numpy()
