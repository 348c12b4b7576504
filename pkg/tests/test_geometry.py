"""Tests for misreg.services.geometry."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from misreg.exceptions import InputError
from misreg.models.geometry import LagMode, LagSpec, Location
from misreg.services.geometry import (
    as_coords,
    bin_pairs,
    default_lags,
    directional_lags,
    distance,
    make_lattice,
    pairwise_distances,
)


class TestDistances:
    """Tests for the Euclidean metric."""

    def test_three_four_five(self):
        assert distance(Location(x=0, y=0), Location(x=3, y=4)) == pytest.approx(5.0)

    def test_pairwise_symmetric_with_zero_diagonal(self, unit_square):
        d = pairwise_distances(unit_square)
        np.testing.assert_allclose(d, d.T)
        np.testing.assert_allclose(np.diag(d), 0.0)
        assert d[0, 3] == pytest.approx(math.sqrt(2))

    def test_locations_and_arrays_agree(self):
        locs = [Location(x=0, y=0), Location(x=1, y=2)]
        np.testing.assert_allclose(as_coords(locs), [[0, 0], [1, 2]])

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            as_coords(np.array([[0.0, np.nan]]))

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            as_coords(np.empty((0, 2)))


class TestLattice:
    """Tests for make_lattice."""

    def test_shape_and_corners(self):
        grid = make_lattice(3, spacing=2.0)
        assert grid.shape == (9, 2)
        np.testing.assert_allclose(grid[0], [0, 0])
        np.testing.assert_allclose(grid[-1], [4, 4])

    def test_invalid_side(self):
        with pytest.raises(InputError):
            make_lattice(0)

    def test_invalid_spacing(self):
        with pytest.raises(InputError):
            make_lattice(3, spacing=0)


class TestBinPairs:
    """Tests for lag binning of self and cross pairs."""

    def test_self_pairs_stored_once(self, unit_square):
        lags = [LagSpec(r=1.0, r_tol=0.1), LagSpec(r=math.sqrt(2), r_tol=0.1)]
        sides, diagonals = bin_pairs(unit_square, None, lags)
        assert sides.count == 4
        assert diagonals.count == 2
        assert np.all(sides.pairs[:, 0] < sides.pairs[:, 1])
        assert sides.mean_distance == pytest.approx(1.0)

    def test_empty_bin_kept(self, unit_square):
        (empty,) = bin_pairs(unit_square, None, [LagSpec(r=5.0, r_tol=0.1)])
        assert empty.count == 0
        assert empty.mean_distance == 5.0

    def test_cross_pairs_index_both_sets(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[1.0, 0.0], [3.0, 0.0]])
        (near,) = bin_pairs(a, b, [LagSpec(r=1.0, r_tol=0.1)])
        np.testing.assert_array_equal(near.pairs, [[0, 0]])

    def test_directional_bins(self):
        locs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        east = LagSpec(mode=LagMode.DIRECTIONAL, r=1.0, r_tol=0.1, angle=0.0, angle_tol=math.pi / 8)
        north = LagSpec(mode=LagMode.DIRECTIONAL, r=1.0, r_tol=0.1, angle=math.pi / 2, angle_tol=math.pi / 8)
        east_bin, north_bin = bin_pairs(locs, None, [east, north])
        np.testing.assert_array_equal(east_bin.pairs, [[0, 1]])
        np.testing.assert_array_equal(north_bin.pairs, [[0, 2]])

    def test_angles_fold_modulo_pi(self):
        """A westward pair falls in the eastward bin."""
        lag = LagSpec(mode=LagMode.DIRECTIONAL, r=1.0, r_tol=0.1, angle=0.0, angle_tol=0.1)
        (b,) = bin_pairs(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]), [lag])
        assert b.count == 1

    def test_bounds_are_closed(self):
        locs = np.array([[0.0, 0.0], [1.5, 0.0]])
        (b,) = bin_pairs(locs, None, [LagSpec(r=1.0, r_tol=0.5)])
        assert b.count == 1


class TestLagGrids:
    """Tests for default and directional lag grids."""

    def test_default_grid_is_even(self):
        lags = default_lags(make_lattice(6))
        assert len(lags) == 8
        centers = np.array([lag.r for lag in lags])
        steps = np.diff(centers)
        np.testing.assert_allclose(steps, steps[0])
        assert lags[0].r_tol == pytest.approx(steps[0] / 2)

    def test_default_grid_needs_two_points(self):
        with pytest.raises(InputError):
            default_lags(np.array([[0.0, 0.0]]))

    def test_cross_grid(self):
        lags = default_lags(make_lattice(3), make_lattice(3) + 0.5, n_lags=4)
        assert len(lags) == 4

    def test_single_direction_is_isotropic(self):
        lags = directional_lags([1.0, 2.0], 1, 0.25)
        assert all(lag.mode == LagMode.ISOTROPIC for lag in lags)

    def test_directions_cover_half_circle(self):
        lags = directional_lags([1.0], 4, 0.25)
        np.testing.assert_allclose([lag.angle for lag in lags], [0, math.pi / 4, math.pi / 2, 3 * math.pi / 4])
        assert all(lag.angle_tol == pytest.approx(math.pi / 8) for lag in lags)

    def test_directional_lag_needs_angle(self):
        with pytest.raises(ValidationError):
            LagSpec(mode=LagMode.DIRECTIONAL, r=1.0, r_tol=0.1)

    def test_angle_outside_half_circle(self):
        with pytest.raises(ValidationError):
            LagSpec(mode=LagMode.DIRECTIONAL, r=1.0, r_tol=0.1, angle=math.pi, angle_tol=0.1)
