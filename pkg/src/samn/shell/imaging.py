"""Sample-grid output as binary portable graymaps (P5), no imaging deps."""

from __future__ import annotations

import numpy as np


def write_image_grid(samples, rows, cols, path):
    """Tile `rows*cols` square images (row-major) into one P5 graymap.

    Pixel values are quantized as round(255 * x); output bytes are
    deterministic for fixed input.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if rows * cols > samples.shape[0]:
        raise ValueError(f"grid needs {rows * cols} samples, got {samples.shape[0]}")
    side = int(round(np.sqrt(samples.shape[1])))
    if side * side != samples.shape[1]:
        raise ValueError(f"pixel count {samples.shape[1]} is not a perfect square")
    grid = np.zeros((rows * side, cols * side))
    for i in range(rows):
        for j in range(cols):
            img = samples[i * cols + j].reshape(side, side)
            grid[i * side : (i + 1) * side, j * side : (j + 1) * side] = img
    payload = np.clip(np.round(255.0 * grid), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{cols * side} {rows * side}\n255\n".encode("ascii"))
        f.write(payload.tobytes())
