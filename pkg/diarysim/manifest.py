import logging
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Sequence

from . import __version__
from .utils import atomic_write_json, file_digest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """Provenance written next to every output set."""
    command: str
    parameters: Dict[str, Any]
    inputs: Dict[str, Optional[str]] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = __version__
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).replace(tzinfo=None).isoformat())
    duration_seconds: float = 0.0
    _clock: float = field(default_factory=time.perf_counter, repr=False)

    def add_inputs(self, paths: Sequence[Optional[str]]) -> None:
        for path in paths:
            if path:
                self.inputs[path] = file_digest(path)

    def finish(self) -> None:
        self.duration_seconds = round(time.perf_counter() - self._clock, 6)

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload.pop("_clock")
        return payload

    def write(self, directory: str) -> str:
        path = os.path.join(directory, MANIFEST_NAME)
        atomic_write_json(path, self.to_dict())
        logger.info(f"📋 Manifest written to {path}")
        return path
