"""Procedural piecewise-constant phantoms standing in for T1 slices."""

from __future__ import annotations

import numpy as np

from .rng import SplitMix64, derive_seed


def _ellipse(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = ((xx - cx) * c + (yy - cy) * s) / rx
    v = (-(xx - cx) * s + (yy - cy) * c) / ry
    return u * u + v * v <= 1.0


def phantom(side: int, seed: int, density: int = 5) -> np.ndarray:
    """One phantom: a head ellipse, a brighter rim, and ``density`` inner
    ellipses/rectangles with distinct intensities."""
    rng = SplitMix64(seed)
    u = lambda n=1: rng.uniform(n)  # noqa: E731
    coords = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    img = np.zeros((side, side))
    ry, rx = 0.75 + 0.2 * u()[0], 0.6 + 0.25 * u()[0]
    tilt = (u()[0] - 0.5) * 0.6
    head = _ellipse(yy, xx, 0.0, 0.0, ry, rx, tilt)
    inner = _ellipse(yy, xx, 0.0, 0.0, ry * 0.88, rx * 0.88, tilt)
    img[head] = 0.8 + 0.2 * u()[0]
    img[inner] = 0.15 + 0.15 * u()[0]
    for _ in range(density):
        a = u(6)
        cy = (a[0] - 0.5) * ry
        cx = (a[1] - 0.5) * rx
        sy = 0.06 + 0.3 * a[2]
        sx = 0.06 + 0.3 * a[3]
        val = 0.35 + 0.6 * a[4]
        if a[5] < 0.7:
            region = _ellipse(yy, xx, cy, cx, sy, sx, (u()[0] - 0.5) * np.pi)
        else:
            region = (np.abs(yy - cy) <= sy * 0.7) & (np.abs(xx - cx) <= sx * 0.7)
        img[region & inner] = val
    return np.clip(img, 0.0, 1.0)


def generate_phantoms(count: int, side: int, seed: int, density: int = 5) -> list:
    """``count`` distinct phantoms, deterministic in ``seed``."""
    if side < 16 or side & (side - 1):
        raise ValueError(f"phantom side must be a power of two >= 16, got {side}")
    out = []
    attempt = 0
    while len(out) < count:
        img = phantom(side, derive_seed(seed, attempt), density)
        attempt += 1
        if img.var() <= 1e-3 or len(np.unique(img)) < 3:
            continue
        if any(np.abs(img - o).max() <= 0.05 for o in out):
            continue
        out.append(img)
    return out
