import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import pandas as pd

logger = logging.getLogger("ChargeCast")

PathLike = Union[str, Path]


def file_sha256(path: PathLike) -> str:
    """Hash a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def json_sha256(payload: Any) -> str:
    """Hash the canonical JSON encoding of a payload."""
    return hashlib.sha256(to_json(payload).encode("utf-8")).hexdigest()


def to_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2)


def atomic_write_text(path: PathLike, text: str) -> Path:
    """
    Write text through a temporary file in the same directory, then rename.

    A failure never leaves a partial file at `path`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, to_json(payload) + "\n")


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    """Write a DataFrame as CSV; floats use their shortest round-trip repr."""
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))
