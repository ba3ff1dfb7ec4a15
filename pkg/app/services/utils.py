import hashlib
import json
import numpy as np
from app.config import settings

"""
Utils Service for the Normalized Projections Application.

This module provides hashing of run configurations and the seeded random
streams every experiment draws from.
"""

def config_hash(config: dict) -> str:
    """
    Hash a configuration dictionary.

    Args:
        config (dict): JSON-serializable configuration.
    Returns:
        str: SHA-256 hex digest of the canonical JSON encoding.
    """
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode()).hexdigest()

def make_rng(seed: int | None = None) -> np.random.Generator:
    """
    Build a seeded generator, falling back to settings.DEFAULT_SEED.

    Args:
        seed (int, optional): 64-bit seed.
    Returns:
        np.random.Generator: PCG64-backed generator.
    """
    return np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)

def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """
    Split one seed into independent per-repetition streams.

    Stream i depends only on (seed, i), so repetitions can run in any order
    and still reproduce.

    Args:
        seed (int): Root seed.
        count (int): Number of streams.
    Returns:
        list[np.random.Generator]: One generator per stream index.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]

def frame_records(frame) -> list[dict]:
    """
    Convert a DataFrame to JSON-safe records, NaN becoming None.

    Args:
        frame (pd.DataFrame): Table to convert.
    Returns:
        list[dict]: One dict per row.
    """
    return frame.astype(object).where(frame.notna(), None).to_dict(orient="records")
