import math

import numpy as np
import pytest

from wavedecay.geometry import (
    BOUNDARY_ADJACENT,
    INTERIOR,
    OBSTACLE,
    OUTER,
    DomainError,
    ObstacleSpec,
    Region,
    build_grid,
    check_star_shaped,
    grid_summary,
    integrate,
)

SQUARE = [(1, -1), (1, 1), (-1, 1), (-1, -1)]
# square with a slot cut into the right side: the slot's side faces have
# exterior normals pointing back across the origin, breaking star-shape
NOTCHED = [(2, -2), (2, -0.25), (0.5, -0.25), (0.5, 0.25), (2, 0.25), (2, 2), (-2, 2), (-2, -2)]


class TestObstacle:
    def test_ball_needs_positive_radius(self):
        with pytest.raises(DomainError):
            ObstacleSpec.ball(0.0)

    def test_polygon_must_contain_origin(self):
        with pytest.raises(DomainError, match="origin"):
            ObstacleSpec.polygon([(1, 1), (2, 1), (2, 2), (1, 2)])

    def test_polygon_must_be_simple(self):
        with pytest.raises(DomainError, match="simple"):
            ObstacleSpec.polygon([(1, -1), (-1, 1), (1, 1), (-1, -1)])

    def test_polygon_must_be_ccw(self):
        with pytest.raises(DomainError, match="counterclockwise"):
            ObstacleSpec.polygon(list(reversed(SQUARE)))

    def test_square_radii(self):
        sq = ObstacleSpec.polygon(SQUARE)
        assert sq.circumradius == pytest.approx(math.sqrt(2.0), rel=1e-15)
        assert sq.inradius == pytest.approx(1.0, rel=1e-12)


class TestBuildGrid:
    def test_radial_node_count(self):
        grid = build_grid(ObstacleSpec.ball(1.0), L=10.0, h=0.01, mode="radial3d")
        assert grid.r.shape == (901,)
        assert grid.r[0] == 1.0
        assert grid.r[-1] == pytest.approx(10.0, abs=1e-12)

    def test_cartesian_mask_marks_interior_cells(self):
        # obstacle cells are exactly the nodes with center norm < rho0
        grid = build_grid(ObstacleSpec.ball(1.0), L=4.0, h=0.025, mode="cartesian2d")
        inside = grid.radii < 1.0
        assert np.array_equal(grid.mask == OBSTACLE, inside)

    def test_cartesian_outer_ring(self):
        grid = build_grid(ObstacleSpec.ball(1.0), L=4.0, h=0.025, mode="cartesian2d")
        assert np.all(grid.mask[0, :] == OUTER)
        assert np.all(grid.mask[:, -1] == OUTER)

    def test_interior_nodes_have_classified_neighbors(self):
        grid = build_grid(ObstacleSpec.polygon(SQUARE), L=6.0, h=0.04, mode="cartesian2d")
        interior = grid.mask == INTERIOR
        # every stencil neighbor of a strictly interior node is fluid
        fluid = grid.fluid_mask
        for shift, axis in (((1, 0), 0), ((-1, 0), 0), ((0, 1), 1), ((0, -1), 1)):
            rolled = np.roll(fluid, shift, axis=(0, 1))
            assert np.all(rolled[interior])

    def test_rejects_small_L(self):
        with pytest.raises(DomainError, match="too small"):
            build_grid(ObstacleSpec.ball(2.0), L=3.0, h=0.01, mode="radial3d")

    def test_rejects_coarse_h(self):
        with pytest.raises(DomainError, match="too coarse"):
            build_grid(ObstacleSpec.ball(1.0), L=4.0, h=0.5, mode="cartesian2d")

    def test_rejects_nonpositive_h(self):
        with pytest.raises(DomainError):
            build_grid(ObstacleSpec.ball(1.0), L=4.0, h=-0.1, mode="radial3d")

    def test_radial_requires_ball(self):
        with pytest.raises(DomainError, match="ball"):
            build_grid(ObstacleSpec.polygon(SQUARE), L=10.0, h=0.01, mode="radial3d")

    def test_boundary_normals_are_unit(self):
        grid = build_grid(ObstacleSpec.polygon(SQUARE), L=6.0, h=0.05, mode="cartesian2d")
        norms = np.linalg.norm(grid.boundary_normals, axis=1)
        assert np.max(np.abs(norms - 1.0)) <= 1e-12


class TestStarShape:
    def test_ball_worst_is_minus_radius(self):
        rep = check_star_shaped(ObstacleSpec.ball(1.0))
        assert rep.passed and rep.worst == -1.0
        rep = check_star_shaped(ObstacleSpec.ball(2.5))
        assert rep.worst == -2.5

    def test_square_passes_with_worst_minus_one(self):
        rep = check_star_shaped(ObstacleSpec.polygon(SQUARE))
        assert rep.passed
        assert rep.worst == pytest.approx(-1.0, abs=1e-12)

    def test_notched_polygon_fails(self):
        rep = check_star_shaped(ObstacleSpec.polygon(NOTCHED))
        assert not rep.passed
        assert rep.worst == pytest.approx(0.25, abs=1e-12)
        # the offending face is a slot side with normal pointing past the origin
        assert abs(rep.worst_point[1]) == pytest.approx(0.25, abs=1e-12)


class TestQuadrature:
    def test_radial_shell_volume(self):
        grid = build_grid(ObstacleSpec.ball(1.0), L=10.0, h=0.005, mode="radial3d")
        ones = np.ones_like(grid.r)
        vol = integrate(ones, grid, Region.ball(2.0))
        exact = 4.0 * math.pi / 3.0 * (2.0**3 - 1.0**3)
        assert abs(vol - exact) / exact <= 5e-3

    def test_cartesian_annulus_area(self):
        grid = build_grid(ObstacleSpec.ball(1.0), L=4.0, h=0.01, mode="cartesian2d")
        ones = np.ones_like(grid.radii)
        area = integrate(ones, grid, Region.ball(2.0))
        exact = math.pi * (4.0 - 1.0)
        assert abs(area - exact) / exact <= 5e-3

    def test_zero_field_integrates_to_zero(self, ball_grid):
        assert integrate(np.zeros_like(ball_grid.r), ball_grid, Region.all()) == 0.0

    def test_disjoint_support(self, ball_grid):
        field = (ball_grid.r >= 3.0).astype(float)
        assert integrate(field, ball_grid, Region.ball(2.0)) == 0.0

    def test_ball_exterior_additivity(self, ball_grid):
        rng = np.random.default_rng(7)
        field = rng.uniform(0.0, 1.0, ball_grid.r.shape)
        total = integrate(field, ball_grid, Region.all())
        parts = integrate(field, ball_grid, Region.ball(3.3)) + integrate(
            field, ball_grid, Region.exterior(3.3)
        )
        assert abs(total - parts) <= 1e-12 * abs(total)

    def test_three_way_partition(self, ball_grid):
        rng = np.random.default_rng(8)
        field = rng.uniform(0.0, 1.0, ball_grid.r.shape)
        total = integrate(field, ball_grid, Region.all())
        parts = (
            integrate(field, ball_grid, Region.ball(2.0))
            + integrate(field, ball_grid, Region.annulus(2.0, 5.0))
            + integrate(field, ball_grid, Region.exterior(5.0))
        )
        assert abs(total - parts) <= 1e-12 * abs(total)

    def test_empty_annulus(self, ball_grid):
        ones = np.ones_like(ball_grid.r)
        assert integrate(ones, ball_grid, Region.annulus(2.0, 0.0)) == 0.0

    def test_region_beyond_L_rejected(self, ball_grid):
        with pytest.raises(DomainError, match="truncation"):
            integrate(np.ones_like(ball_grid.r), ball_grid, Region.ball(11.0))

    def test_first_order_convergence_vs_closed_form(self):
        exact = 4.0 * math.pi / 3.0 * (2.5**3 - 1.0**3)
        errors = []
        spacings = [0.02, 0.01, 0.005]
        for h in spacings:
            grid = build_grid(ObstacleSpec.ball(1.0), L=10.0, h=h, mode="radial3d")
            vol = integrate(np.ones_like(grid.r), grid, Region.ball(2.5))
            errors.append(abs(vol - exact))
        slope = np.polyfit(np.log(spacings), np.log(errors), 1)[0]
        assert slope >= 0.9


class TestSummary:
    def test_grid_summary_is_jsonable(self, ball_grid):
        import json

        summary = grid_summary(ball_grid)
        text = json.dumps(summary)
        assert "mask_histogram" in text
        assert summary["node_count"] == 901
        hist = summary["mask_histogram"]
        assert hist["obstacle"] == 1 and hist["outer"] == 1
        assert hist["interior"] + hist["boundary_adjacent"] == 899
        assert summary["star_shape"]["passed"]
