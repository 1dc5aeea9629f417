import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Union

from .. import __version__
from ..utils.errors import DataError
from ..utils.io import file_sha256, read_json, write_json

logger = logging.getLogger("ChargeCast")

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """Everything needed to re-run one CLI invocation."""

    subcommand: str
    argv: List[str]
    config: Dict[str, Dict[str, Any]]
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    version: str = __version__

    def add_input(self, path: Union[str, Path]) -> None:
        path = Path(path)
        if path.exists():
            self.inputs[str(path)] = file_sha256(path)

    def add_artifact(self, name: str, path: Union[str, Path]) -> None:
        self.artifacts[name] = str(path)

    def write(self, out_dir: Union[str, Path]) -> Path:
        path = write_json(Path(out_dir) / MANIFEST_NAME, asdict(self))
        logger.info(f"✅ Wrote run manifest to {path}")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RunManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Manifest not found: {path}")
        payload = read_json(path)
        try:
            return cls(**payload)
        except TypeError as e:
            raise DataError(f"malformed manifest {path}: {e}")

    def verify_inputs(self) -> None:
        """Raise DataError if any recorded input is missing or no longer matches its hash."""
        for name, digest in self.inputs.items():
            path = Path(name)
            if not path.exists():
                raise FileNotFoundError(f"Recorded input is missing: {path}")
            actual = file_sha256(path)
            if actual != digest:
                raise DataError(f"input {path} changed since the run (sha256 {actual[:12]} != {digest[:12]})")
        logger.info(f"🔍 Verified {len(self.inputs)} input hashes")
