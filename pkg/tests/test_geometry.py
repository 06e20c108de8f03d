import json

import numpy as np
import pytest

from aggvae import geometry, synthdata
from aggvae.errors import CoverageError, GridError, OverlapError, PolygonFormatError


def square(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])


def winding_number(point, ring):
    """Independent oracle: total signed angle swept by the ring around the point."""
    rel = ring - point
    angles = np.arctan2(rel[:, 1], rel[:, 0])
    turns = np.diff(angles)
    turns = (turns + np.pi) % (2.0 * np.pi) - np.pi
    return int(round(turns.sum() / (2.0 * np.pi)))


def star_polygon(generator, vertices):
    angles = np.sort(generator.uniform(0.0, 2.0 * np.pi, vertices))
    radii = generator.uniform(0.3, 1.0, vertices)
    ring = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    return np.vstack([ring, ring[:1]])


def write_geojson(path, features):
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
    return path


def feature(ring, label):
    return {
        "type": "Feature",
        "properties": {"id": label},
        "geometry": {"type": "Polygon", "coordinates": [np.asarray(ring).tolist()]},
    }


def test_grid_cell_centres_row_major(unit_square):
    polygons = geometry.PolygonSet("box", (unit_square,), ("a",))
    grid = geometry.build_grid(polygons, 3)

    assert grid.n == 9
    assert grid.dx == pytest.approx(1.0 / 3.0)
    assert grid.cell_area == pytest.approx(1.0 / 9.0)
    np.testing.assert_allclose(grid.points[0], [1.0 / 6.0, 1.0 / 6.0])
    np.testing.assert_allclose(grid.points[1], [0.5, 1.0 / 6.0])
    np.testing.assert_allclose(grid.points[3], [1.0 / 6.0, 0.5])


def test_grid_rejects_low_resolution(unit_square):
    polygons = geometry.PolygonSet("box", (unit_square,), ("a",))
    with pytest.raises(GridError):
        geometry.build_grid(polygons, 1)


def test_grid_is_shared_by_both_partitions(partitions):
    old, new = partitions
    a = geometry.build_grid([old, new], 6)
    b = geometry.build_grid([new, old], 6)
    assert a.grid_id == b.grid_id
    np.testing.assert_array_equal(a.points, b.points)


@pytest.mark.parametrize(
    "point, expected",
    [
        ((0.5, 0.5), True),
        ((1.5, 0.5), False),
        ((1.0, 0.5), True),
        ((0.0, 0.0), True),
        ((-1e-3, 0.5), False),
    ],
)
def test_point_in_polygon_basic(unit_square, point, expected):
    assert geometry.point_in_polygon(point, unit_square) is expected


def test_point_in_polygon_matches_winding_number():
    generator = np.random.default_rng(11)
    checked = 0
    for _ in range(100):
        ring = star_polygon(generator, int(generator.integers(3, 12)))
        points = generator.uniform(-1.2, 1.2, size=(100, 2))
        fast = geometry.points_in_polygon(points, ring)
        for point, got in zip(points, fast):
            assert got == (winding_number(point, ring) != 0)
            checked += 1
    assert checked == 10_000


def test_membership_invariants_on_random_tilings():
    generator = np.random.default_rng(5)
    for _ in range(100):
        rows_old, cols_old, rows_new, cols_new = generator.integers(1, 5, size=4)
        if (rows_old, cols_old) == (rows_new, cols_new):
            cols_new = cols_new % 4 + 1
        old, new = synthdata.make_partitions(rows_old, cols_old, rows_new, cols_new)
        grid = geometry.build_grid([old, new], int(generator.integers(8, 17)))
        for polygons in (old, new):
            M = geometry.membership_matrix(grid, polygons).entries
            assert np.all(M.sum(axis=0) == 1)
            assert np.all(M.sum(axis=1) >= 1)


def test_shared_edge_goes_to_lowest_index():
    left, right = square(0, 0, 0.5, 1), square(0.5, 0, 1, 1)
    grid = geometry.Grid(
        points=np.array([[0.5, 0.5], [0.25, 0.5], [0.75, 0.5]]),
        dx=1.0,
        dy=1.0,
        nx=3,
        ny=1,
        bounds=(0.0, 0.0, 1.0, 1.0),
    )

    M = geometry.membership_matrix(grid, geometry.PolygonSet("lr", (left, right), ("l", "r")))
    np.testing.assert_array_equal(M.entries, [[1, 1, 0], [0, 0, 1]])

    M = geometry.membership_matrix(grid, geometry.PolygonSet("rl", (right, left), ("r", "l")))
    np.testing.assert_array_equal(M.entries, [[1, 0, 1], [0, 1, 0]])


def test_membership_carries_cell_area(grid_setup):
    grid, M_old, M_new = grid_setup
    assert M_old.cell_area == grid.cell_area
    assert M_old.grid_id == M_new.grid_id == grid.grid_id


def test_uncovered_polygon_is_named(unit_square):
    polygons = geometry.PolygonSet("pair", (unit_square, square(0.01, 0.01, 0.02, 0.02)), ("big", "speck"))
    grid = geometry.build_grid(polygons, 4)
    with pytest.raises(CoverageError) as info:
        geometry.membership_matrix(grid, polygons)
    assert info.value.label == "speck"
    assert "speck" in str(info.value)


def test_overlapping_polygons_are_rejected(unit_square):
    polygons = geometry.PolygonSet("twice", (unit_square, unit_square.copy()), ("a", "b"))
    grid = geometry.build_grid(polygons, 4)
    with pytest.raises(OverlapError):
        geometry.membership_matrix(grid, polygons)


def test_load_polygons_reads_labels(tmp_path, unit_square):
    path = write_geojson(tmp_path / "b.geojson", [feature(square(0, 0, 0.5, 1), "west"), feature(square(0.5, 0, 1, 1), "east")])
    polygons = geometry.load_polygons(path, "old")
    assert polygons.K == 2
    assert polygons.labels == ("west", "east")
    np.testing.assert_allclose(polygons.areas(), [0.5, 0.5])


@pytest.mark.parametrize(
    "features, message",
    [
        ([], "no polygons"),
        ([{"type": "Feature", "properties": {"id": "m"}, "geometry": {"type": "MultiPolygon", "coordinates": []}}], "m"),
        (
            [
                {
                    "type": "Feature",
                    "properties": {"id": "holed"},
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [square(0, 0, 1, 1).tolist(), square(0.4, 0.4, 0.6, 0.6).tolist()],
                    },
                }
            ],
            "holes",
        ),
        ([feature([[0, 0], [1, 1], [1, 0], [0, 1], [0, 0]], "bowtie")], "bowtie"),
        ([feature([[0, 0], [1, 0], [1, 1], [0, 1]], "open")], "not closed"),
    ],
)
def test_load_polygons_rejects_bad_input(tmp_path, features, message):
    path = write_geojson(tmp_path / "bad.geojson", features)
    with pytest.raises(PolygonFormatError, match=message):
        geometry.load_polygons(path, "bad")


def test_geojson_round_trip(tmp_path, partitions):
    old, _ = partitions
    path = tmp_path / "old.geojson"
    path.write_text(json.dumps(old.to_geojson({"seed": 1})))
    again = geometry.load_polygons(path, "old")
    assert again.labels == old.labels
    for a, b in zip(again.polygons, old.polygons):
        np.testing.assert_array_equal(a, b)


def test_rook_adjacency_of_two_by_two(partitions):
    old, _ = partitions
    A = geometry.adjacency_matrix(old)
    expected = np.array(
        [
            [0, 1, 1, 0],
            [1, 0, 0, 1],
            [1, 0, 0, 1],
            [0, 1, 1, 0],
        ]
    )
    np.testing.assert_array_equal(A, expected)


def test_row_sums_grow_with_resolution(partitions):
    old, new = partitions
    for polygons in (old, new):
        previous = None
        for resolution in (6, 12, 24):
            grid = geometry.build_grid([old, new], resolution)
            counts = geometry.membership_matrix(grid, polygons).entries.sum(axis=1)
            if previous is not None:
                assert np.all(counts >= previous)
            previous = counts
