"""Quadrature construction: counting weights, cell layout, dummy grids."""
import numpy as np
import pytest

from tesspp.geometry import PointPattern, Window, unit_square
from tesspp.quadglm import (
    QuadratureScheme,
    build_quadrature,
    default_dummy_grid,
    quadrature_cells,
)


def _pattern(n, seed=0, window=None):
    window = window or unit_square()
    rng = np.random.default_rng(seed)
    pts = np.column_stack(
        [
            rng.uniform(window.xmin, window.xmax, n),
            rng.uniform(window.ymin, window.ymax, n),
        ]
    )
    return PointPattern(pts, window)


def test_weights_sum_to_window_area():
    w = Window(0.0, 3.0, 0.0, 2.0)
    quad = build_quadrature(_pattern(137, 1, w), 32, 32)
    assert np.isclose(quad.weights.sum(), w.area, rtol=1e-9)
    assert np.all(quad.weights > 0)


def test_counting_weights_shared_within_cell():
    # every quadrature point in a cell carries cellarea / (points in cell)
    pat = _pattern(200, 2)
    quad = build_quadrature(pat, 16, 16)
    cells = quadrature_cells(quad, 16, 16)
    area = 1.0 / 256
    counts = np.bincount(cells, minlength=256)
    assert np.allclose(quad.weights, area / counts[cells])


def test_dummy_points_at_cell_centers():
    pat = _pattern(5, 3)
    quad = build_quadrature(pat, 16, 16)
    dummies = quad.points[~quad.is_data]
    centers = (np.arange(16) + 0.5) / 16
    assert sorted(set(np.round(dummies[:, 0], 12))) == pytest.approx(list(centers))
    assert quad.is_data.sum() == 5
    assert (~quad.is_data).sum() == 256


def test_data_points_preserved_in_order():
    pat = _pattern(23, 4)
    quad = build_quadrature(pat, 16, 16)
    assert np.array_equal(quad.points[quad.is_data], pat.points)


def test_default_dummy_grid_doubles_when_crowded():
    w = unit_square()
    # cram 30 points into one cell of the 32x32 base grid
    rng = np.random.default_rng(5)
    pts = np.column_stack(
        [rng.uniform(0.0, 1.0 / 32, 30), rng.uniform(0.0, 1.0 / 32, 30)]
    )
    pat = PointPattern(pts, w)
    assert default_dummy_grid(pat) == 64
    spread = _pattern(30, 6)
    assert default_dummy_grid(spread) == 32


def test_minimum_grid_enforced():
    pat = _pattern(3, 7)
    with pytest.raises(ValueError):
        build_quadrature(pat, 2, 2)


def test_scheme_validates_weight_sum():
    w = unit_square()
    pts = np.array([[0.5, 0.5]])
    with pytest.raises(ValueError):
        QuadratureScheme(
            points=pts, weights=np.array([0.5]), is_data=np.array([True]), window=w
        )


def test_empty_pattern_quadrature():
    pat = PointPattern(np.zeros((0, 2)), unit_square())
    quad = build_quadrature(pat, 16, 16)
    assert quad.is_data.sum() == 0
    assert np.isclose(quad.weights.sum(), 1.0)
