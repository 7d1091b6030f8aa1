"""Reproducible per-path random streams.

Every Monte Carlo path ``k`` under a master seed draws from its own Philox
stream keyed by ``(seed, k)``.  Philox is counter based, so streams are
independent of the order in which paths are generated and of how paths are
split into chunks or workers.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Generator for path ``path`` under master seed ``seed``."""
    if seed < 0 or path < 0:
        raise ValueError("seed and path index must be nonnegative")
    key = ((path & _MASK64) << 64) | (seed & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def path_normals(seed: int, paths, shape: tuple[int, ...]) -> np.ndarray:
    """Stack standard normals of ``shape`` for each path index in ``paths``.

    Result has shape ``(len(paths), *shape)``; row ``j`` depends only on
    ``(seed, paths[j])``.
    """
    paths = list(paths)
    out = np.empty((len(paths),) + tuple(shape))
    for j, k in enumerate(paths):
        out[j] = path_rng(seed, k).standard_normal(shape)
    return out


def chunks(n: int, size: int):
    """Yield ``range`` objects covering ``0..n-1`` in blocks of ``size``."""
    size = max(1, int(size))
    for start in range(0, n, size):
        yield range(start, min(n, start + size))
