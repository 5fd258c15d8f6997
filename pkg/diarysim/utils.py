import hashlib
import json
import logging
import os
import tempfile
from typing import Any, Optional

import numpy as np

logger = logging.getLogger(__name__)


def agent_rng(seed: int, agent: int) -> np.random.Generator:
    """Independent stream for one agent, derived from the master seed and the agent index only."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(agent,)))


def draw_seed() -> int:
    """Fresh master seed for runs started without --seed."""
    return int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0] >> 1)


def file_digest(path: str) -> Optional[str]:
    """SHA-256 of a file's bytes, or None if it cannot be read."""
    try:
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                digest.update(block)
        return digest.hexdigest()
    except OSError as e:
        logger.warning(f"⚠️ Could not digest {path}: {e}")
        return None


def atomic_write_text(path: str, text: str) -> None:
    """Write via a sibling temp file and os.replace so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_json(path: str, payload: Any) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def weighted_choice(rng: np.random.Generator, weights: np.ndarray) -> int:
    """Index drawn with probability proportional to non-negative weights (at least one positive)."""
    cumulative = np.cumsum(weights)
    return int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
