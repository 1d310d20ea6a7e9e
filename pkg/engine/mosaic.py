"""
Temporal mosaicing: interlace a block of T frames into one 2-D image and back.

Frame k = dy * g_x + dx lands at mosaic[i * g_y + dy, j * g_x + dx], so the
T samples of pixel (i, j) occupy the g_y x g_x tile at (i * g_y, j * g_x).
"""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from engine.errors import ConfigError


@dataclass(frozen=True)
class MosaicGrid:
    g_y: int
    g_x: int

    def __post_init__(self):
        if self.g_y < 1 or self.g_x < 1:
            raise ConfigError(f"grid factors must be positive, got {self.g_y}x{self.g_x}")

    @property
    def block_size(self) -> int:
        return self.g_y * self.g_x

    @classmethod
    def parse(cls, text: str) -> "MosaicGrid":
        """Parse 'GYxGX', e.g. '5x1'"""
        try:
            gy, gx = text.lower().split("x")
            return cls(int(gy), int(gx))
        except ValueError as e:
            raise ConfigError(f"grid must look like GYxGX, got {text!r}") from e

    def __str__(self) -> str:
        return f"{self.g_y}x{self.g_x}"


@dataclass
class Mosaic:
    data: np.ndarray
    grid: MosaicGrid
    block_dims: Tuple[int, int, int]

    def __post_init__(self):
        t, h, w = self.block_dims
        if self.data.shape != (h * self.grid.g_y, w * self.grid.g_x):
            raise ConfigError(
                f"mosaic shape {self.data.shape} does not match block {self.block_dims} on grid {self.grid}"
            )
        if t != self.grid.block_size:
            raise ConfigError(f"block of {t} frames does not fit grid {self.grid}")


def grid_for_block_size(block_size: int) -> MosaicGrid:
    """Most-square factorisation of T, with g_y >= g_x"""
    if block_size < 1:
        raise ConfigError(f"block size must be >= 1, got {block_size}")
    g_x = 1
    for cand in range(1, math.isqrt(block_size) + 1):
        if block_size % cand == 0:
            g_x = cand
    return MosaicGrid(block_size // g_x, g_x)


def shuffle_block(frames: Sequence[np.ndarray], grid: MosaicGrid) -> Mosaic:
    stack = np.stack([np.asarray(f) for f in frames]) if len(frames) else None
    if stack is None or stack.ndim != 3:
        raise ConfigError("shuffle_block needs a non-empty list of equal-sized 2-D frames")
    t, h, w = stack.shape
    if t != grid.block_size:
        raise ConfigError(f"{t} frames cannot be interlaced on grid {grid}")

    data = (
        stack.reshape(grid.g_y, grid.g_x, h, w)
        .transpose(2, 0, 3, 1)
        .reshape(h * grid.g_y, w * grid.g_x)
    )
    return Mosaic(data=np.ascontiguousarray(data), grid=grid, block_dims=(t, h, w))


def unshuffle_array(data: np.ndarray, grid: MosaicGrid) -> List[np.ndarray]:
    """Inverse of the interlace for a bare array"""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ConfigError(f"mosaic must be 2-D, got shape {data.shape}")
    rows, cols = data.shape
    if rows % grid.g_y or cols % grid.g_x:
        raise ConfigError(f"mosaic {rows}x{cols} is not divisible by grid {grid}")
    h, w = rows // grid.g_y, cols // grid.g_x

    stack = data.reshape(h, grid.g_y, w, grid.g_x).transpose(1, 3, 0, 2).reshape(grid.block_size, h, w)
    return [np.ascontiguousarray(f) for f in stack]


def unshuffle_mosaic(mosaic: Mosaic) -> List[np.ndarray]:
    return unshuffle_array(mosaic.data, mosaic.grid)
