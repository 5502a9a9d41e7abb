"""Planar geometry in a local projected frame and a uniform-grid radius index."""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterable, NamedTuple

import numpy as np

EARTH_RADIUS = 6371008.8


class GeometryError(ValueError):
    pass


class GeoPoint(NamedTuple):
    x: float  # meters east
    y: float  # meters north


def _check(*vals: float) -> None:
    for v in vals:
        if not math.isfinite(v):
            raise GeometryError(f"non-finite coordinate {v!r}")


def distance(a: GeoPoint, b: GeoPoint) -> float:
    _check(a[0], a[1], b[0], b[1])
    return float(np.hypot(b[0] - a[0], b[1] - a[1]))


def bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Compass bearing from ``a`` to ``b`` in degrees, 0 = north, 90 = east."""
    _check(a[0], a[1], b[0], b[1])
    dx, dy = b[0] - a[0], b[1] - a[1]
    if dx == 0 and dy == 0:
        raise GeometryError(f"degenerate edge: coincident points {a!r}")
    return float(bearings(np.array([dx]), np.array([dy]))[0])


def bearings(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    deg = np.degrees(np.arctan2(dx, dy)) % 360.0
    # -0.0 and 360.0 both fold onto 0
    return np.where(deg >= 360.0, 0.0, deg) + 0.0


class LocalProjection:
    """Spherical azimuthal-equidistant projection about (lon0, lat0).

    Community-scale extents keep the error well under a meter, so all
    downstream physics works in planar meters.
    """

    def __init__(self, lon0: float, lat0: float):
        _check(lon0, lat0)
        self.lon0 = float(lon0)
        self.lat0 = float(lat0)
        self._phi0 = math.radians(self.lat0)
        self._lam0 = math.radians(self.lon0)

    @classmethod
    def centered_on(cls, lons: Iterable[float], lats: Iterable[float]) -> "LocalProjection":
        lons = np.asarray(list(lons), dtype=float)
        lats = np.asarray(list(lats), dtype=float)
        if lons.size == 0:
            raise GeometryError("cannot center a projection on zero points")
        return cls(float(np.mean(lons)), float(np.mean(lats)))

    def forward(self, lon, lat):
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat))):
            raise GeometryError("non-finite lon/lat")
        phi, lam = np.radians(lat), np.radians(lon) - self._lam0
        cos_c = (math.sin(self._phi0) * np.sin(phi)
                 + math.cos(self._phi0) * np.cos(phi) * np.cos(lam))
        c = np.arccos(np.clip(cos_c, -1.0, 1.0))
        k = np.where(c > 0, c / np.where(np.sin(c) == 0, 1.0, np.sin(c)), 1.0)
        x = EARTH_RADIUS * k * np.cos(phi) * np.sin(lam)
        y = EARTH_RADIUS * k * (math.cos(self._phi0) * np.sin(phi)
                                - math.sin(self._phi0) * np.cos(phi) * np.cos(lam))
        return x, y

    def inverse(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rho = np.hypot(x, y)
        c = rho / EARTH_RADIUS
        sin_c, cos_c = np.sin(c), np.cos(c)
        safe = np.where(rho == 0, 1.0, rho)
        phi = np.arcsin(np.clip(cos_c * math.sin(self._phi0)
                                + np.where(rho == 0, 0.0, y * sin_c * math.cos(self._phi0) / safe),
                                -1.0, 1.0))
        lam = self._lam0 + np.arctan2(
            x * sin_c, rho * math.cos(self._phi0) * cos_c - y * math.sin(self._phi0) * sin_c)
        return np.degrees(lam), np.degrees(phi)


class SpatialIndex:
    """Uniform grid over planar points. Immutable after construction."""

    def __init__(self, xy, ids=None, cell_size: float = 200.0):
        if not cell_size > 0:
            raise GeometryError("cell size must be positive")
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(xy)):
            raise GeometryError("non-finite coordinates in index")
        self.cell_size = float(cell_size)
        self._xy = xy
        self._xy.setflags(write=False)
        self.ids = list(range(len(xy))) if ids is None else list(ids)
        if len(self.ids) != len(xy):
            raise ValueError("ids and coordinates differ in length")
        cells = np.floor(xy / self.cell_size).astype(np.int64)
        buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, (cx, cy) in enumerate(cells.tolist()):
            buckets[(cx, cy)].append(i)
        self._cells = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}

    def __len__(self) -> int:
        return len(self._xy)

    @property
    def xy(self) -> np.ndarray:
        return self._xy

    def query_indices(self, center, r: float, exclude: int | None = None) -> np.ndarray:
        """Sorted positions of points with distance <= r (inclusive)."""
        if not r > 0:
            raise GeometryError("query radius must be positive")
        cx, cy = float(center[0]), float(center[1])
        _check(cx, cy)
        x0, x1 = math.floor((cx - r) / self.cell_size), math.floor((cx + r) / self.cell_size)
        y0, y1 = math.floor((cy - r) / self.cell_size), math.floor((cy + r) / self.cell_size)
        found = [self._cells[(i, j)]
                 for i in range(x0, x1 + 1) for j in range(y0, y1 + 1) if (i, j) in self._cells]
        if not found:
            return np.empty(0, dtype=np.int64)
        cand = np.sort(np.concatenate(found))
        d = np.hypot(self._xy[cand, 0] - cx, self._xy[cand, 1] - cy)
        hits = cand[d <= r]
        if exclude is not None:
            hits = hits[hits != exclude]
        return hits

    def radius_query(self, center, r: float, exclude=None) -> set:
        """Ids of indexed nodes within ``r`` meters of ``center``.

        ``exclude`` is the id of the querying node, dropped from the result.
        """
        pos = None if exclude is None else self.ids.index(exclude)
        return {self.ids[i] for i in self.query_indices(center, r, pos)}
