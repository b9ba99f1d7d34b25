"""Planar geometry helpers: polylines, oriented boxes, polygon containment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Oriented rectangle. ``length`` runs along ``heading``."""

    x: float
    y: float
    heading: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Vectorised membership test for an (N, 2) array of points."""
        pts = np.atleast_2d(pts)
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx = pts[:, 0] - self.x
        dy = pts[:, 1] - self.y
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (np.abs(u) <= 0.5 * self.length) & (np.abs(v) <= 0.5 * self.width)


def _project(corners: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    d = corners @ axis
    return float(d.min()), float(d.max())


def obb_overlap(a: Box, b: Box) -> bool:
    """Separating-axis test over the four edge normals of two rectangles.

    Touching boxes count as overlapping.
    """
    if a.length <= 0 or a.width <= 0 or b.length <= 0 or b.width <= 0:
        raise ValueError("box extents must be positive")
    # cheap bounding-circle reject first
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return False
    ca, cb = a.corners(), b.corners()
    for h in (a.heading, b.heading):
        for axis in (np.array([math.cos(h), math.sin(h)]), np.array([-math.sin(h), math.cos(h)])):
            amin, amax = _project(ca, axis)
            bmin, bmax = _project(cb, axis)
            if amax < bmin or bmax < amin:
                return False
    return True


class Polyline:
    """Piecewise-linear curve with arc-length parameterisation."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2D points")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self._seg = seg
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(self._seg_len <= 0):
            raise ValueError("polyline has repeated consecutive points")
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self._heading = np.arctan2(seg[:, 1], seg[:, 0])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def _closest(self, p) -> tuple[int, float, float]:
        """Return (segment index, fraction along it, squared distance)."""
        p = np.asarray(p, dtype=float)
        rel = p - self.points[:-1]
        t = np.einsum("ij,ij->i", rel, self._seg) / self._seg_len**2
        t = np.clip(t, 0.0, 1.0)
        foot = self.points[:-1] + self._seg * t[:, None]
        d2 = np.sum((foot - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        return i, float(t[i]), float(d2[i])

    def distance(self, p) -> float:
        return math.sqrt(self._closest(p)[2])

    def distances(self, pts) -> np.ndarray:
        """Minimum distance of each point in (N, 2) to any segment."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        a = self.points[:-1][None, :, :]
        d = self._seg[None, :, :]
        rel = pts[:, None, :] - a
        t = np.clip(np.sum(rel * d, axis=2) / self._seg_len[None, :] ** 2, 0.0, 1.0)
        foot = a + d * t[:, :, None]
        return np.sqrt(np.min(np.sum((foot - pts[:, None, :]) ** 2, axis=2), axis=1))

    def project(self, p) -> tuple[float, float]:
        """Arc length of the foot point and signed lateral offset (left positive)."""
        i, t, d2 = self._closest(p)
        s = self._cum[i] + t * self._seg_len[i]
        seg = self._seg[i]
        rel = np.asarray(p, dtype=float) - self.points[i]
        side = seg[0] * rel[1] - seg[1] * rel[0]
        d = math.sqrt(d2)
        return float(s), d if side >= 0 else -d

    def _locate(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(max(i, 0), len(self._seg_len) - 1)
        return i, s - self._cum[i]

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length ``s``; extrapolates linearly past either end."""
        if s > self.length:
            i, extra = len(self._seg_len) - 1, s - self.length
            return self.points[-1] + self._seg[i] / self._seg_len[i] * extra
        if s < 0:
            return self.points[0] + self._seg[0] / self._seg_len[0] * s
        i, rem = self._locate(s)
        return self.points[i] + self._seg[i] / self._seg_len[i] * rem

    def heading_at(self, s: float) -> float:
        return float(self._heading[self._locate(s)[0]])

    def _segments(self, s: np.ndarray) -> np.ndarray:
        i = np.searchsorted(self._cum, s, side="right") - 1
        return np.clip(i, 0, len(self._seg_len) - 1)

    def points_at(self, s) -> np.ndarray:
        """Vectorised ``point_at`` for an array of arc lengths."""
        s = np.asarray(s, dtype=float)
        i = self._segments(s)
        unit = self._seg[i] / self._seg_len[i][:, None]
        return self.points[i] + unit * (s - self._cum[i])[:, None]

    def headings_at(self, s) -> np.ndarray:
        return self._heading[self._segments(np.asarray(s, dtype=float))]

    def offset(self, d: float) -> "Polyline":
        """Parallel curve shifted ``d`` to the left (vertex normals averaged)."""
        n_seg = np.stack([-np.sin(self._heading), np.cos(self._heading)], axis=1)
        normals = np.empty_like(self.points)
        normals[0], normals[-1] = n_seg[0], n_seg[-1]
        if len(self.points) > 2:
            m = n_seg[:-1] + n_seg[1:]
            m /= np.linalg.norm(m, axis=1)[:, None]
            # keep the true offset distance at corners
            cosh = np.einsum("ij,ij->i", m, n_seg[1:])
            normals[1:-1] = m / cosh[:, None]
        return Polyline(self.points + d * normals)


def point_in_polygon(p, ring: np.ndarray) -> bool:
    """Even-odd ray casting; points on the boundary count as inside."""
    x, y = float(p[0]), float(p[1])
    a = np.asarray(ring, dtype=float)
    b = np.roll(a, 1, axis=0)
    xi, yi, xj, yj = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    cross = (xj - xi) * (y - yi) - (yj - yi) * (x - xi)
    eps = 1e-12
    on_edge = ((np.abs(cross) < eps)
               & (np.minimum(xi, xj) - eps <= x) & (x <= np.maximum(xi, xj) + eps)
               & (np.minimum(yi, yj) - eps <= y) & (y <= np.maximum(yi, yj) + eps))
    if on_edge.any():
        return True
    straddle = (yi > y) != (yj > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = xi + (y - yi) * (xj - xi) / (yj - yi)
    return bool(np.count_nonzero(straddle & (x < xc)) % 2)


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi
