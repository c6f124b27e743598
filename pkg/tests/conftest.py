"""Shared fixtures: synthetic shape scenes used by training-level tests."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))


def checkerboard_scene(rng, size=64):
    period = int(rng.integers(8, 17))
    phase_r, phase_c = rng.integers(0, period, size=2)
    rows, cols = np.indices((size, size))
    img = (((rows + phase_r) // period + (cols + phase_c) // period) % 2).astype(float)
    lo, hi = sorted(rng.uniform(0.05, 0.95, size=2))
    return lo + (hi - lo) * img


def polygon_scene(rng, size=64):
    img = np.full((size, size), float(rng.uniform(0.3, 0.7)))
    rows, cols = np.indices((size, size))
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(8, size - 8, size=2)
        radius = rng.uniform(5, 14)
        k = int(rng.integers(3, 7))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
        verts = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)],
                         axis=1)
        inside = np.ones((size, size), dtype=bool)
        for i in range(k):
            x0, y0 = verts[i]
            x1, y1 = verts[(i + 1) % k]
            inside &= (x1 - x0) * (rows - y0) - (y1 - y0) * (cols - x0) >= 0
        img[inside] = rng.uniform(0.0, 1.0)
    return img


def blob_scene(rng, size=64):
    img = np.full((size, size), float(rng.uniform(0.2, 0.5)))
    rows, cols = np.indices((size, size))
    for _ in range(int(rng.integers(4, 9))):
        cx, cy = rng.uniform(6, size - 6, size=2)
        sigma = rng.uniform(2.0, 6.0)
        amp = rng.uniform(-0.6, 0.8)
        img += amp * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma**2))
    return np.clip(img, 0.0, 1.0)


def shape_scenes(seed, count, size=64):
    """Mixed checkerboards, polygons and blobs; deterministic per seed."""
    rng = np.random.default_rng(seed)
    makers = (checkerboard_scene, polygon_scene, blob_scene)
    return [makers[i % 3](rng, size) for i in range(count)]
