"""Seeded synthetic test images used by the tests, calibration and the CLI fixtures."""

from __future__ import annotations

import numpy as np

SUITE_SEEDS = (0, 1, 2, 3, 4)


def _grid(n: int):
    yy, xx = np.mgrid[0:n, 0:n] / n
    return yy, xx


def piecewise_linear(n: int = 128, seed: int = 0, regions: int = 4) -> np.ndarray:
    """A tilted plane cut by random half-planes, each adding its own level and slope.

    Values stay in [0.05, 0.95] so added noise is rarely clipped.
    """
    rng = np.random.default_rng(seed)
    yy, xx = _grid(n)
    img = 0.3 + 0.2 * xx + 0.1 * yy
    for _ in range(regions):
        a, b, c = rng.normal(size=3)
        inside = a * (xx - 0.5) + b * (yy - 0.5) + 0.2 * c > 0
        img = img + inside * (rng.uniform(-0.2, 0.2) + rng.uniform(-0.2, 0.2) * xx)
    return np.clip(img, 0.05, 0.95)


def smooth_with_edge(n: int = 64) -> np.ndarray:
    """Gently curved surface with one straight step edge."""
    yy, xx = _grid(n)
    curved = 0.4 + 0.15 * np.sin(2 * np.pi * 1.1 * xx) * np.cos(2 * np.pi * 0.7 * yy)
    return curved + 0.2 * (xx + 0.3 * yy > 0.6)


def textured(n: int = 128, seed: int = 0, amplitude: float = 0.1, period: float = 3.0) -> np.ndarray:
    """Piecewise-linear base with a small high-frequency texture in its left half."""
    base = piecewise_linear(n, seed)
    yy, xx = np.mgrid[0:n, 0:n]
    pattern = np.sin(2 * np.pi * xx / period) * np.sin(2 * np.pi * yy / (period + 1.0))
    return np.clip(base + amplitude * pattern * (xx < n // 2), 0.0, 1.0)


def ramp(n: int = 64) -> np.ndarray:
    """Horizontal intensity ramp from 0.1 to 0.9."""
    return np.tile(np.linspace(0.1, 0.9, n), (n, 1))


def scratch_mask(n: int = 128, seed: int = 0, scratches: int = 6) -> np.ndarray:
    """Boolean mask of random straight scratches, each one or two pixels wide."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    mask = np.zeros((n, n), dtype=bool)
    for _ in range(scratches):
        angle = rng.uniform(0, np.pi)
        cx, cy = rng.uniform(0.2 * n, 0.8 * n, size=2)
        width = rng.choice([1.0, 2.0])
        dist = np.abs((xx - cx) * np.sin(angle) - (yy - cy) * np.cos(angle))
        mask |= dist < width / 2
    return mask
