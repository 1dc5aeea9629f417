import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

import pandas as pd

from ..utils.errors import DataError
from ..utils.io import write_csv

logger = logging.getLogger("ChargeCast")

SESSION_COLUMNS = ["site_id", "station_id", "connect_utc", "disconnect_utc", "energy_kwh"]

# ACN-style exports after renaming
ACN_FIELD_MAP = {
    "siteID": "site_id",
    "stationID": "station_id",
    "connectionTime": "connect_utc",
    "disconnectTime": "disconnect_utc",
    "kWhDelivered": "energy_kwh",
}


@dataclass(frozen=True)
class SessionRecord:
    """One raw charging session."""

    site_id: str
    station_id: str
    connect: pd.Timestamp
    disconnect: pd.Timestamp
    energy_kwh: float

    def __post_init__(self):
        if pd.isna(self.connect) or pd.isna(self.disconnect):
            raise DataError(f"session at {self.site_id}/{self.station_id}: missing connect or disconnect time")
        if self.disconnect < self.connect:
            raise DataError(
                f"session at {self.site_id}/{self.station_id}: disconnect {self.disconnect} precedes connect {self.connect}"
            )
        if not math.isfinite(self.energy_kwh) or self.energy_kwh < 0:
            raise DataError(f"session at {self.site_id}/{self.station_id}: invalid energy {self.energy_kwh}")


def _to_utc(value) -> pd.Timestamp:
    ts = pd.Timestamp(value)
    return ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")


def sessions_from_frame(frame: pd.DataFrame, end_date: Optional[str] = None) -> List[SessionRecord]:
    """
    Build validated SessionRecords from a DataFrame with canonical or ACN column names.

    Args:
        frame: Raw table
        end_date: Optional cutoff; sessions connecting at or after it are dropped

    Returns:
        Sessions sorted by connect time
    """
    frame = frame.rename(columns={k: v for k, v in ACN_FIELD_MAP.items() if k in frame.columns})
    missing = [c for c in SESSION_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"session table is missing columns: {', '.join(missing)}")

    connect = pd.to_datetime(frame["connect_utc"], utc=True, errors="coerce")
    disconnect = pd.to_datetime(frame["disconnect_utc"], utc=True, errors="coerce")
    energy = pd.to_numeric(frame["energy_kwh"], errors="coerce")

    valid = (
        connect.notna() & disconnect.notna() & (disconnect >= connect)
        & energy.notna() & (energy >= 0) & (energy < math.inf)
    )
    invalid = int((~valid).sum())
    if invalid == len(frame) and invalid:
        raise DataError(f"all {invalid} sessions are invalid (missing times, negative energy or disconnect before connect)")
    if invalid:
        logger.warning(f"⚠️ Dropped {invalid} invalid sessions (missing times, bad energy or disconnect before connect)")

    keep = valid
    if end_date is not None:
        cutoff = _to_utc(end_date)
        before = connect < cutoff
        dropped = int((valid & ~before).sum())
        keep = valid & before
        if dropped:
            logger.info(f"Dropped {dropped} sessions on or after cutoff {cutoff.date()}")

    records = [
        SessionRecord(str(site), str(station), c, d, float(e))
        for site, station, c, d, e, k in zip(
            frame["site_id"], frame["station_id"], connect, disconnect, energy, keep
        )
        if k
    ]
    records.sort(key=lambda r: (r.connect, r.site_id, r.station_id))
    return records


def load_sessions(path: Union[str, Path], end_date: Optional[str] = None) -> List[SessionRecord]:
    """Read a session CSV (header required) or JSON-lines file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Session file not found: {path}")
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        frame = pd.read_json(path, lines=True, dtype=False)
    else:
        frame = pd.read_csv(path, dtype={"site_id": str, "station_id": str, "siteID": str, "stationID": str})
    records = sessions_from_frame(frame, end_date=end_date)
    logger.info(f"✅ Loaded {len(records)} sessions from {path}")
    return records


def sessions_to_frame(sessions: Iterable[SessionRecord]) -> pd.DataFrame:
    rows = [
        {
            "site_id": s.site_id,
            "station_id": s.station_id,
            "connect_utc": s.connect.isoformat(),
            "disconnect_utc": s.disconnect.isoformat(),
            "energy_kwh": s.energy_kwh,
        }
        for s in sessions
    ]
    return pd.DataFrame(rows, columns=SESSION_COLUMNS)


def write_sessions(path: Union[str, Path], sessions: Iterable[SessionRecord]) -> Path:
    return write_csv(path, sessions_to_frame(sessions))


def load_holidays(path: Union[str, Path]) -> pd.DataFrame:
    """Read a (date, name) holiday calendar CSV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Holiday calendar not found: {path}")
    calendar = pd.read_csv(path)
    if "date" not in calendar.columns:
        raise DataError(f"holiday calendar {path} needs a 'date' column")
    calendar["date"] = pd.to_datetime(calendar["date"]).dt.date
    if "name" not in calendar.columns:
        calendar["name"] = ""
    return calendar[["date", "name"]]
