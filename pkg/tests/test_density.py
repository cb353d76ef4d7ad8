from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streetsynth.density import (box_filter, build_density_grid, cell_density_field, load_density,
                                 region_density_grid, sample_cell_density, save_density)
from streetsynth.geo import Region
from streetsynth.graph import from_edge_list

coords = st.floats(0.0, 100.0, allow_nan=False)


def test_sample_spacing():
    r = Region(0, 0, 16, 16)
    grid = region_density_grid(from_edge_list(np.zeros((0, 2)), np.zeros((0, 2))), r)
    assert abs(grid.resolution_m - 19.109) < 0.01
    assert grid.shape == (64, 64)


@given(coords, coords, coords, coords)
def test_grid_conserves_length(x0, y0, x1, y1):
    g = from_edge_list([[x0, y0], [x1, y1]], [[0, 1]])
    grid = build_density_grid(g, (0, 0, 100, 100), 10.0)
    total = grid.values.sum() * 100.0
    assert total == pytest.approx(g.total_length(), rel=1e-9, abs=1e-9)


def test_grid_splits_at_lattice_lines():
    g = from_edge_list([[5, 5], [25, 5]], [[0, 1]])
    grid = build_density_grid(g, (0, 0, 30, 10), 10.0)
    assert np.allclose(grid.values[0] * 100, [5, 10, 5])


def test_clipped_outside_bounds():
    g = from_edge_list([[-50, 5], [50, 5]], [[0, 1]])
    grid = build_density_grid(g, (0, 0, 20, 10), 10.0)
    assert grid.values.sum() * 100 == pytest.approx(20.0)


def test_box_filter_matches_direct_mean(rng):
    v = rng.random((9, 11))
    for size in (1, 2, 3, 4):
        out = box_filter(v, size)
        lo = size // 2
        pad = np.pad(v, size)
        ref = np.array([[pad[i - lo + size:i - lo + 2 * size, j - lo + size:j - lo + 2 * size].mean()
                         for j in range(11)] for i in range(9)])
        assert np.allclose(out, ref)


def test_cell_field_matches_per_cell_sampling(rng):
    r = Region(0, 0, 6, 5)
    pts = rng.random((30, 2)) * [r.width_m, r.height_m]
    g = from_edge_list(pts, rng.integers(0, 30, size=(40, 2)))
    grid = region_density_grid(g, r)
    window = 3 * r.cell_m
    field = cell_density_field(grid, r, window)
    for i in range(r.cells_y):
        for j in range(r.cells_x):
            centre = ((j + 0.5) * r.cell_m, (i + 0.5) * r.cell_m)
            assert np.allclose(field[i, j], sample_cell_density(grid, centre, r.cell_m, window))


def test_uniform_street_density_in_interior():
    # horizontal streets every 19.109 m give 1 / spacing metres per square metre
    r = Region(0, 0, 8, 8)
    s = r.cell_m / 4
    ys = (np.arange(32) + 0.5) * s
    verts = np.concatenate([[[0, y], [r.width_m, y]] for y in ys])
    g = from_edge_list(verts, np.arange(64).reshape(32, 2))
    field = cell_density_field(region_density_grid(g, r), r, 2 * r.cell_m)
    assert np.allclose(field[3:5, 3:5], 1 / s)


def test_density_file_round_trip(tmp_path, rng):
    g = from_edge_list(rng.random((5, 2)) * 100, [[0, 1], [2, 3], [3, 4]])
    grid = build_density_grid(g, (0, 0, 100, 100), 10.0)
    save_density(grid, tmp_path / "d.sgr")
    back = load_density(tmp_path / "d.sgr")
    assert np.allclose(back.values, grid.values, rtol=1e-6)
    assert back.resolution_m == 10.0 and tuple(back.origin) == (0.0, 0.0)
