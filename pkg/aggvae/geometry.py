"""Boundary polygons, the computational grid and the grid-to-polygon lookup.

A ``MembershipMatrix`` is the binary K x n table M with M[i, j] = 1 when grid
point j lies in polygon i. Points on a shared edge go to the polygon with the
lowest index, so every column holds at most one 1.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.validation import explain_validity

from . import checks
from .errors import CoverageError, GridError, OverlapError, PolygonFormatError

logger = logging.getLogger(__name__)

# relative tolerance for the on-edge test
_EDGE_TOL = 1e-12


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PolygonSet:
    name: str
    polygons: Tuple[np.ndarray, ...]
    labels: Tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.polygons:
            raise PolygonFormatError(f"Polygon set {self.name!r} has no polygons.")
        if len(self.labels) != len(self.polygons):
            raise PolygonFormatError("One label per polygon is required.")

        rings = []
        for label, ring in zip(self.labels, self.polygons):
            ring = _frozen(ring)
            _check_ring(ring, label)
            rings.append(ring)
        object.__setattr__(self, "polygons", tuple(rings))
        object.__setattr__(self, "labels", tuple(str(label) for label in self.labels))

    @property
    def K(self) -> int:
        return len(self.polygons)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        stacked = np.vstack(self.polygons)
        return (
            float(stacked[:, 0].min()),
            float(stacked[:, 1].min()),
            float(stacked[:, 0].max()),
            float(stacked[:, 1].max()),
        )

    def areas(self) -> np.ndarray:
        return np.array([ShapelyPolygon(ring).area for ring in self.polygons])

    def to_geojson(self, provenance: dict = None) -> dict:
        features = []
        for label, ring in zip(self.labels, self.polygons):
            features.append(
                {
                    "type": "Feature",
                    "properties": {"id": label},
                    "geometry": {"type": "Polygon", "coordinates": [ring.tolist()]},
                }
            )
        collection = {"type": "FeatureCollection", "name": self.name, "features": features}
        if provenance:
            collection["provenance"] = provenance
        return collection


@dataclass(frozen=True)
class Grid:
    points: np.ndarray
    dx: float
    dy: float
    nx: int
    ny: int
    bounds: Tuple[float, float, float, float]
    grid_id: str = field(default="")

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _frozen(self.points))
        if not self.grid_id:
            x0, y0, x1, y1 = self.bounds
            object.__setattr__(
                self, "grid_id", f"{self.nx}x{self.ny}@{x0!r},{y0!r},{x1!r},{y1!r}"
            )

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy


@dataclass(frozen=True)
class MembershipMatrix:
    entries: np.ndarray
    polygon_set_name: str
    grid_id: str
    labels: Tuple[str, ...] = ()
    cell_area: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", _frozen(self.entries, dtype=np.uint8))

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def owner(self) -> np.ndarray:
        """Row index owning each grid point, -1 for points outside every polygon."""
        covered = self.entries.any(axis=0)
        return np.where(covered, self.entries.argmax(axis=0), -1)

    def dense(self) -> np.ndarray:
        return self.entries.astype(float)


def _check_ring(ring: np.ndarray, label) -> None:
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise PolygonFormatError(f"Polygon {label}: ring must be a list of (x, y) pairs.")
    if len(ring) < 4:
        raise PolygonFormatError(f"Polygon {label}: ring needs at least 4 vertices, got {len(ring)}.")
    if not np.array_equal(ring[0], ring[-1]):
        raise PolygonFormatError(f"Polygon {label}: ring is not closed.")
    checks.finite_array(ring, f"Polygon {label} coordinates", error=PolygonFormatError)


def load_polygons(path: Union[str, Path], name: str) -> PolygonSet:
    path = Path(path)
    try:
        collection = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise PolygonFormatError(f"Cannot parse {path}: {exc}") from exc

    if not isinstance(collection, dict) or collection.get("type") != "FeatureCollection":
        raise PolygonFormatError(f"{path} is not a GeoJSON FeatureCollection.")

    features = collection.get("features") or []
    if not features:
        raise PolygonFormatError(f"{path}: no polygons.")

    rings: List[np.ndarray] = []
    labels: List[str] = []
    for index, feature in enumerate(features):
        properties = feature.get("properties") or {}
        label = properties.get("id", feature.get("id", index))
        geometry = feature.get("geometry") or {}
        kind = geometry.get("type")
        if kind != "Polygon":
            raise PolygonFormatError(f"Feature {label}: geometry type {kind!r} is not a Polygon.")

        coordinates = geometry.get("coordinates") or []
        if len(coordinates) != 1:
            raise PolygonFormatError(
                f"Feature {label}: expected one exterior ring and no holes, got {len(coordinates)} rings."
            )

        ring = np.asarray(coordinates[0], dtype=float)
        _check_ring(ring, label)
        shape = ShapelyPolygon(ring)
        if not shape.is_valid:
            raise PolygonFormatError(f"Feature {label}: {explain_validity(shape)}.")

        rings.append(ring)
        labels.append(str(label))

    logger.debug("Loaded %d polygons from %s", len(rings), path)
    return PolygonSet(name=name, polygons=tuple(rings), labels=tuple(labels))


def build_grid(polygons: Union[PolygonSet, Sequence[PolygonSet]], resolution: int) -> Grid:
    """Regular ``resolution x resolution`` lattice of cell centres over the bounding box.

    Passing several polygon sets spans the union of their bounding boxes, which
    is how the old and new partitions share one grid.

    Spacing is width / resolution, not width / (resolution - 1): the unit
    square at resolution 3 gives dx = 1/3 with points at 1/6, 1/2 and 5/6.
    """
    checks.positive_int(resolution, "resolution", minimum=2, error=GridError)

    sets = [polygons] if isinstance(polygons, PolygonSet) else list(polygons)
    boxes = np.array([s.bounds for s in sets])
    x0, y0 = boxes[:, 0].min(), boxes[:, 1].min()
    x1, y1 = boxes[:, 2].max(), boxes[:, 3].max()
    if not (x1 > x0 and y1 > y0):
        raise GridError(f"Degenerate bounding box ({x0}, {y0}, {x1}, {y1}).")

    dx = (x1 - x0) / resolution
    dy = (y1 - y0) / resolution
    xs = x0 + (np.arange(resolution) + 0.5) * dx
    ys = y0 + (np.arange(resolution) + 0.5) * dy
    # row-major: x varies fastest
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])

    return Grid(
        points=points,
        dx=float(dx),
        dy=float(dy),
        nx=resolution,
        ny=resolution,
        bounds=(float(x0), float(y0), float(x1), float(y1)),
    )


def _edge_hits(points: np.ndarray, ring: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Even-odd crossing parity and on-edge flags for many points against one ring."""
    px = points[:, 0]
    py = points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    on_edge = np.zeros(len(points), dtype=bool)

    scale = max(float(np.ptp(ring[:, 0])), float(np.ptp(ring[:, 1])), 1.0)
    tol = _EDGE_TOL * scale

    for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
        ex, ey = bx - ax, by - ay
        length2 = ex * ex + ey * ey
        cross = ex * (py - ay) - ey * (px - ax)
        dot = ex * (px - ax) + ey * (py - ay)
        on_edge |= (np.abs(cross) <= tol * np.sqrt(length2)) & (dot >= -tol) & (dot <= length2 + tol)

        straddles = (ay > py) != (by > py)
        if not np.any(straddles):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = ax + (py - ay) * ex / ey
        inside ^= straddles & (px < x_cross)

    return inside, on_edge


def point_in_polygon(point, polygon: np.ndarray) -> bool:
    """True when ``point`` is inside ``polygon`` or on its boundary."""
    ring = np.asarray(polygon, dtype=float)
    inside, on_edge = _edge_hits(np.atleast_2d(np.asarray(point, dtype=float)), ring)
    return bool(inside[0] or on_edge[0])


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    inside, on_edge = _edge_hits(np.asarray(points, dtype=float), np.asarray(polygon, dtype=float))
    return inside | on_edge


def membership_matrix(grid: Grid, polygons: PolygonSet) -> MembershipMatrix:
    n = grid.n
    owner = np.full(n, -1, dtype=int)
    interior_count = np.zeros(n, dtype=int)

    for index, ring in enumerate(polygons.polygons):
        inside, on_edge = _edge_hits(grid.points, ring)
        interior_count += inside & ~on_edge
        take = (inside | on_edge) & (owner < 0)
        owner[take] = index

    if np.any(interior_count > 1):
        j = int(np.argmax(interior_count > 1))
        raise OverlapError(
            f"Polygons of {polygons.name!r} overlap: grid point {tuple(grid.points[j])} is inside several."
        )

    entries = np.zeros((polygons.K, n), dtype=np.uint8)
    covered = owner >= 0
    entries[owner[covered], np.flatnonzero(covered)] = 1

    row_sums = entries.sum(axis=1)
    for index in np.flatnonzero(row_sums == 0):
        label = polygons.labels[index]
        raise CoverageError(
            f"Polygon {label} of {polygons.name!r} has no grid point; increase resolution.",
            label=label,
        )

    logger.debug(
        "Membership %s: %d of %d grid points assigned to %d polygons",
        polygons.name,
        int(covered.sum()),
        n,
        polygons.K,
    )
    return MembershipMatrix(
        entries=entries,
        polygon_set_name=polygons.name,
        grid_id=grid.grid_id,
        labels=polygons.labels,
        cell_area=grid.cell_area,
    )


def adjacency_matrix(polygons: PolygonSet) -> np.ndarray:
    """Rook adjacency: units sharing an edge of positive length are neighbours."""
    shapes = [ShapelyPolygon(ring) for ring in polygons.polygons]
    K = len(shapes)
    adjacency = np.zeros((K, K), dtype=int)
    tol = _EDGE_TOL * max(polygons.bounds[2] - polygons.bounds[0], 1.0)
    for i in range(K):
        for j in range(i + 1, K):
            if not shapes[i].intersects(shapes[j]):
                continue
            if shapes[i].intersection(shapes[j]).length > tol:
                adjacency[i, j] = adjacency[j, i] = 1
    return adjacency
