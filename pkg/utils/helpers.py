"""Helper Utilities for LatentForge"""
import hashlib
import logging
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

SeedPart = Union[int, str]


def derive_seed(seed: int, *labels: SeedPart) -> int:
    """Derive an independent 64-bit seed from a base seed and stage labels

    Hash-based, so adding a new labeled stage never shifts another stage's stream.
    """
    text = '/'.join([str(int(seed))] + [str(label) for label in labels])
    digest = hashlib.blake2b(text.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def make_rng(seed: int, *labels: SeedPart) -> np.random.Generator:
    """numpy Generator for a labeled stage"""
    return np.random.default_rng(derive_seed(seed, *labels))


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Wrap radians into [-pi, pi)"""
    return (np.asarray(theta, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi


def circular_mean(theta: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    return float(np.arctan2(np.sin(theta).mean(), np.cos(theta).mean()))


def circular_correlation(alpha: np.ndarray, beta: np.ndarray) -> float:
    """Circular-circular correlation coefficient of two angle samples (radians)"""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    sa = np.sin(alpha - circular_mean(alpha))
    sb = np.sin(beta - circular_mean(beta))
    denominator = np.sqrt((sa * sa).sum() * (sb * sb).sum())
    if denominator == 0:
        return 0.0
    return float((sa * sb).sum() / denominator)


def format_seconds(seconds: float) -> str:
    """Format elapsed time"""
    if seconds is None or not np.isfinite(seconds):
        return "N/A"
    if seconds >= 3600:
        return f"{seconds / 3600:.2f}h"
    elif seconds >= 60:
        return f"{seconds / 60:.1f}m"
    return f"{seconds:.2f}s"

