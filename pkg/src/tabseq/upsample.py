"""Minority-class oversampling over flattened window features.

SMOTE interpolates between a minority window and one of its k nearest
neighbors in flattened feature space. For token-grid inputs, where
interpolating ids is meaningless, minority windows are duplicated instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, TooFewSamples
from .preprocess import FeatureMatrix


@dataclass(frozen=True)
class SmoteConfig:
    k: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("neighbor count k must be >= 1")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ConfigError("target_ratio must lie in (0, 1]")


def k_nearest_neighbors(flat: np.ndarray, k: int) -> np.ndarray:
    """Indices [n, k] of each row's k nearest other rows (Euclidean)."""
    d2 = np.sum((flat[:, None, :] - flat[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_upsample(
    minority: list[FeatureMatrix], majority_count: int, cfg: SmoteConfig
) -> list[FeatureMatrix]:
    """Synthesize minority windows until minority/majority hits target_ratio.

    Each synthetic sample is x + u * (x_nn - x) with u uniform in [0, 1],
    x a seeded-random minority window and x_nn one of its k nearest
    neighbors. Returns only the synthetic windows.
    """
    if len(minority) <= cfg.k:
        raise TooFewSamples(
            f"SMOTE needs more than k={cfg.k} minority samples, got {len(minority)}"
        )
    shapes = {fm.values.shape for fm in minority}
    if len(shapes) != 1:
        raise ShapeError(f"minority windows have mixed shapes: {shapes}")
    shape = shapes.pop()

    wanted = int(round(cfg.target_ratio * majority_count)) - len(minority)
    if wanted <= 0:
        return []

    flat = np.stack([fm.values.reshape(-1) for fm in minority])
    neighbors = k_nearest_neighbors(flat, cfg.k)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    base = rng.integers(0, len(minority), size=wanted)
    pick = rng.integers(0, cfg.k, size=wanted)
    u = rng.random(wanted)
    out = []
    for i in range(wanted):
        x = flat[base[i]]
        x_nn = flat[neighbors[base[i], pick[i]]]
        out.append(FeatureMatrix((x + u[i] * (x_nn - x)).reshape(shape)))
    return out


def duplicate_upsample(minority: list, majority_count: int, target_ratio: float, seed: int) -> list:
    """Token-path counterpart of SMOTE: repeat seeded-random minority windows."""
    if not 0.0 < target_ratio <= 1.0:
        raise ConfigError("target_ratio must lie in (0, 1]")
    if not minority:
        raise TooFewSamples("no minority windows to duplicate")
    wanted = int(round(target_ratio * majority_count)) - len(minority)
    if wanted <= 0:
        return []
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return [minority[i] for i in rng.integers(0, len(minority), size=wanted)]
