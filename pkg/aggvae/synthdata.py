"""Synthetic change-of-support scenarios.

Two partitions of one extent are overlaid on a single GP surface drawn on the
shared grid, so old-boundary and new-boundary counts describe the same
underlying prevalence.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import special
from scipy.spatial import Voronoi
from shapely.geometry import MultiPoint, Polygon as ShapelyPolygon, box
from shapely.ops import unary_union

from . import checks, rng
from ._classes import Era
from .errors import GeometryError
from .geometry import Grid, PolygonSet, build_grid, membership_matrix
from .inference import PrevalenceData, write_prevalence
from .priors import KernelSpec, rbf_covariance, sample_mvn_cov

logger = logging.getLogger(__name__)

Extent = Tuple[float, float, float, float]
UNIT_SQUARE: Extent = (0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class TruthSpec:
    b0: float = -1.0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec(variance=0.08 ** 2, lengthscale=0.8))


@dataclass(frozen=True)
class Scenario:
    polygons_old: PolygonSet
    polygons_new: PolygonSet
    grid: Grid
    truth: TruthSpec
    seed: int
    surface: np.ndarray
    theta_old: np.ndarray
    theta_new: np.ndarray
    data_old: PrevalenceData
    data_new: PrevalenceData
    provenance: Dict = field(default_factory=dict)

    def truth_rows(self):
        for era, polygons, theta in (
            (Era.OLD, self.polygons_old, self.theta_old),
            (Era.NEW, self.polygons_new, self.theta_new),
        ):
            for label, value in zip(polygons.labels, theta):
                yield era, label, float(value)


def _check_extent(extent: Extent) -> Extent:
    x0, y0, x1, y1 = (float(v) for v in extent)
    if not (x1 > x0 and y1 > y0):
        raise GeometryError(f"Extent {extent} has no area.")
    return x0, y0, x1, y1


def _rect_tiling(rows: int, cols: int, extent: Extent, name: str) -> PolygonSet:
    x0, y0, x1, y1 = extent
    xs = np.linspace(x0, x1, cols + 1)
    ys = np.linspace(y0, y1, rows + 1)
    rings, labels = [], []
    for r in range(rows):
        for c in range(cols):
            a, b = xs[c], xs[c + 1]
            lo, hi = ys[r], ys[r + 1]
            rings.append(np.array([[a, lo], [b, lo], [b, hi], [a, hi], [a, lo]]))
            labels.append(f"{name}-{r * cols + c}")
    return PolygonSet(name=name, polygons=tuple(rings), labels=tuple(labels))


def make_partitions(
    rows_old: int, cols_old: int, rows_new: int, cols_new: int, extent: Extent = UNIT_SQUARE
) -> Tuple[PolygonSet, PolygonSet]:
    """Two axis-aligned rectangular tilings of one extent."""
    for value, name in ((rows_old, "rows_old"), (cols_old, "cols_old"), (rows_new, "rows_new"), (cols_new, "cols_new")):
        checks.positive_int(value, name)
    extent = _check_extent(extent)
    if (rows_old, cols_old) == (rows_new, cols_new):
        logger.warning("Old and new tilings are identical (%dx%d); there is no change of support", rows_old, cols_old)
    return (
        _rect_tiling(rows_old, cols_old, extent, Era.OLD),
        _rect_tiling(rows_new, cols_new, extent, Era.NEW),
    )


def make_voronoi_partition(count: int, extent: Extent, seed: int, name: str = Era.NEW) -> PolygonSet:
    """Irregular partition: Voronoi cells of uniform sites, clipped to the extent.

    Sites are mirrored across the four sides so every original cell is bounded.
    """
    checks.positive_int(count, "count", minimum=2)
    x0, y0, x1, y1 = _check_extent(extent)
    generator = rng.stream(seed, rng.PARTITION)
    sites = np.column_stack([generator.uniform(x0, x1, count), generator.uniform(y0, y1, count)])

    mirrored = [sites]
    for axis, edge in ((0, x0), (0, x1), (1, y0), (1, y1)):
        reflected = sites.copy()
        reflected[:, axis] = 2.0 * edge - reflected[:, axis]
        mirrored.append(reflected)
    diagram = Voronoi(np.vstack(mirrored))

    frame = box(x0, y0, x1, y1)
    rings, labels = [], []
    for i in range(count):
        region = diagram.regions[diagram.point_region[i]]
        if -1 in region or not region:
            raise GeometryError(f"Voronoi cell {i} is unbounded after mirroring.")
        cell = MultiPoint(diagram.vertices[region]).convex_hull.intersection(frame)
        if cell.is_empty or cell.geom_type != "Polygon":
            raise GeometryError(f"Voronoi cell {i} clipped to {cell.geom_type}.")
        cell = cell.simplify(0.0)
        rings.append(np.asarray(cell.exterior.coords, dtype=float))
        labels.append(f"{name}-{i}")

    coverage = unary_union([ShapelyPolygon(ring) for ring in rings]).area
    if not np.isclose(coverage, frame.area, rtol=1e-9):
        raise GeometryError(f"Voronoi cells cover {coverage} of an extent with area {frame.area}.")
    return PolygonSet(name=name, polygons=tuple(rings), labels=tuple(labels))


def _test_counts(K: int, tests_per_unit: int, skew: float, generator: np.random.Generator) -> np.ndarray:
    if skew == 0:
        return np.full(K, tests_per_unit, dtype=np.int64)
    multiplier = np.exp(skew * generator.standard_normal(K))
    return np.maximum(1, np.round(tests_per_unit * multiplier)).astype(np.int64)


def simulate_counts(
    polygons_old: PolygonSet,
    polygons_new: PolygonSet,
    resolution: int,
    truth: TruthSpec,
    tests_per_unit: int,
    seed: int,
    skew: float = 0.0,
    surface: Optional[np.ndarray] = None,
) -> Scenario:
    """One GP surface on the shared grid, aggregated to both partitions, then Binomial counts.

    ``surface`` replaces the GP draw, e.g. with zeros for a flat truth.
    """
    checks.positive_int(tests_per_unit, "tests_per_unit")
    if skew < 0:
        raise ValueError("skew must be nonnegative.")

    grid = build_grid([polygons_old, polygons_new], resolution)
    M_old = membership_matrix(grid, polygons_old)
    M_new = membership_matrix(grid, polygons_new)

    if surface is None:
        cov = rbf_covariance(grid, truth.kernel)
        surface = sample_mvn_cov(cov, rng.stream(seed, rng.TRUTH)).values
    surface = np.asarray(surface, dtype=float)
    checks.same_length(surface, range(grid.n), "surface")

    c = grid.cell_area
    theta_old = special.expit(truth.b0 + c * (M_old.dense() @ surface))
    theta_new = special.expit(truth.b0 + c * (M_new.dense() @ surface))

    generator = rng.stream(seed, rng.COUNTS)
    tests_old = _test_counts(polygons_old.K, tests_per_unit, skew, generator)
    tests_new = _test_counts(polygons_new.K, tests_per_unit, skew, generator)
    pos_old = generator.binomial(tests_old, theta_old)
    pos_new = generator.binomial(tests_new, theta_new)

    provenance = {
        "seed": int(seed),
        "resolution": int(resolution),
        "tests_per_unit": int(tests_per_unit),
        "skew": float(skew),
        "b0_true": float(truth.b0),
        "lengthscale_true": float(truth.kernel.lengthscale),
        "sigma_true": float(truth.kernel.sigma),
        "K1": polygons_old.K,
        "K2": polygons_new.K,
    }
    logger.info(
        "Simulated %d + %d units on a %d-point grid, mean prevalence %.3f",
        polygons_old.K,
        polygons_new.K,
        grid.n,
        float(np.mean(np.concatenate([theta_old, theta_new]))),
    )
    return Scenario(
        polygons_old=polygons_old,
        polygons_new=polygons_new,
        grid=grid,
        truth=truth,
        seed=int(seed),
        surface=surface,
        theta_old=theta_old,
        theta_new=theta_new,
        data_old=PrevalenceData(polygons_old.labels, tests_old, pos_old),
        data_new=PrevalenceData(polygons_new.labels, tests_new, pos_new),
        provenance=provenance,
    )


SCENARIO_FILES = {
    "boundaries_old": "boundaries_old.geojson",
    "boundaries_new": "boundaries_new.geojson",
    "data_old": "data_old.csv",
    "data_new": "data_new.csv",
    "truth": "truth.csv",
    "provenance": "provenance.json",
}


def write_scenario(scenario: Scenario, out_dir: Union[str, Path], provenance: Optional[Dict] = None) -> Dict[str, Path]:
    """Write the six scenario files and return their paths by role."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    info = dict(scenario.provenance)
    info.update(provenance or {})
    paths = {role: out_dir / name for role, name in SCENARIO_FILES.items()}

    for role, polygons in (("boundaries_old", scenario.polygons_old), ("boundaries_new", scenario.polygons_new)):
        text = json.dumps(polygons.to_geojson(info), indent=1, sort_keys=True)
        paths[role].write_text(text + "\n", encoding="utf-8")

    write_prevalence(scenario.data_old, paths["data_old"], info)
    write_prevalence(scenario.data_new, paths["data_new"], info)

    with open(paths["truth"], "w", encoding="utf-8", newline="") as fh:
        for key, value in sorted(info.items()):
            fh.write(f"# {key} = {value}\n")
        fh.write("era,unit,theta\n")
        for era, label, theta in scenario.truth_rows():
            fh.write(f"{era},{label},{theta!r}\n")

    paths["provenance"].write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote scenario to %s", out_dir)
    return paths
