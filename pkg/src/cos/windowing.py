"""Partition an L x L x C feature map into non-overlapping square windows.

Window order is row-major over the window grid, which fixes the within-scale
token order downstream and makes checkpoints reproducible. Non-divisible
window sizes are a hard error, never padded: padding would silently corrupt
token counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cos.numerics import ShapeError, Tensor, reshape, tensor_slice


class DivisibilityError(ValueError):
    """Feature size is not a multiple of the requested window size."""


@dataclass
class WindowedFeatures:
    windows: list[Tensor]  # row-major over the window grid, each (W*W, C)
    window_grid: tuple[int, int]
    source_shape: tuple[int, int, int]
    window_size: int

    def __len__(self) -> int:
        return len(self.windows)


def partition(x: Tensor, w: int) -> WindowedFeatures:
    """Split an (L, L, C) feature map into (L/w)**2 windows of shape (w*w, C).

    Window (r, c) holds rows [r*w, (r+1)*w) and columns [c*w, (c+1)*w) of the
    source, flattened row-major. Differentiable: gradients scatter back into
    the source map.
    """
    if x.ndim != 3 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"expected a square (L, L, C) feature map, got {x.shape}")
    size, _, channels = x.shape
    if w < 1 or size % w != 0:
        raise DivisibilityError(f"feature size {size} is not divisible by window size {w}")
    grid = size // w
    windows = []
    for r in range(grid):
        for c in range(grid):
            block = tensor_slice(x, (slice(r * w, (r + 1) * w), slice(c * w, (c + 1) * w)))
            windows.append(reshape(block, (w * w, channels)))
    return WindowedFeatures(
        windows=windows,
        window_grid=(grid, grid),
        source_shape=(size, size, channels),
        window_size=w,
    )


def unpartition(wf: WindowedFeatures) -> Tensor:
    """Exact inverse of :func:`partition`. Reconstruction only, not differentiable."""
    size, _, channels = wf.source_shape
    w = wf.window_size
    rows, cols = wf.window_grid
    if rows != cols or rows * w != size:
        raise ShapeError(f"inconsistent metadata: grid {wf.window_grid}, window {w}, source {wf.source_shape}")
    if len(wf.windows) != rows * cols:
        raise ShapeError(f"expected {rows * cols} windows, got {len(wf.windows)}")
    out = np.empty((size, size, channels), dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            win = wf.windows[r * cols + c]
            if win.shape != (w * w, channels):
                raise ShapeError(f"window ({r}, {c}) has shape {win.shape}, expected {(w * w, channels)}")
            out[r * w : (r + 1) * w, c * w : (c + 1) * w, :] = win.data.reshape(w, w, channels)
    return Tensor(out)
