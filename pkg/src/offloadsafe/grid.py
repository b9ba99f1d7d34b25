"""Binary occupancy raster with disk dilation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import Box


@dataclass
class OccupancyGrid:
    """Cells are indexed ``cells[iy, ix]``; ``origin`` is the lower-left corner."""

    origin: tuple[float, float]
    resolution: float
    width: int
    height: int
    cells: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.cells is None:
            self.cells = np.zeros((self.height, self.width), dtype=bool)
        elif self.cells.shape != (self.height, self.width):
            raise ValueError("cells shape does not match grid dimensions")

    @classmethod
    def centered(cls, center, size: float, resolution: float) -> "OccupancyGrid":
        n = int(math.ceil(size / resolution))
        half = 0.5 * n * resolution
        return cls((float(center[0]) - half, float(center[1]) - half), resolution, n, n)

    def cell_of(self, p) -> tuple[int, int] | None:
        ix = int(math.floor((p[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((p[1] - self.origin[1]) / self.resolution))
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return ix, iy
        return None

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def fill_box(self, box: Box) -> None:
        """Mark cells whose centre lies inside ``box``."""
        corners = box.corners()
        lo = corners.min(axis=0)
        hi = corners.max(axis=0)
        ix0 = max(int(math.floor((lo[0] - self.origin[0]) / self.resolution)), 0)
        iy0 = max(int(math.floor((lo[1] - self.origin[1]) / self.resolution)), 0)
        ix1 = min(int(math.ceil((hi[0] - self.origin[0]) / self.resolution)), self.width)
        iy1 = min(int(math.ceil((hi[1] - self.origin[1]) / self.resolution)), self.height)
        if ix0 >= ix1 or iy0 >= iy1:
            return
        xs = self.origin[0] + (np.arange(ix0, ix1) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(iy0, iy1) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        inside = box.contains(np.stack([gx.ravel(), gy.ravel()], axis=1)).reshape(gx.shape)
        self.cells[iy0:iy1, ix0:ix1] |= inside

    def dilate(self, radius: float) -> np.ndarray:
        """Cells within ``radius`` (centre to centre) of any occupied cell."""
        if not self.cells.any():
            return np.zeros_like(self.cells)
        dist = ndimage.distance_transform_edt(~self.cells) * self.resolution
        return dist <= radius

    @property
    def occupied_count(self) -> int:
        return int(self.cells.sum())


def disk_cover(length: float, width: float, margin: float = 1.05) -> tuple[np.ndarray, float]:
    """Equal disks along the vehicle centreline covering a length x width footprint.

    Returns the longitudinal disk offsets from the box centre and the radius.
    """
    k = max(int(math.ceil(length / width)), 1)
    step = length / k
    offsets = -0.5 * length + step * (np.arange(k) + 0.5)
    return offsets, width / math.sqrt(2.0) * margin
