"""Discrete exterior domains: obstacles, grids, masks, and quadrature.

Two grid modes cover the simulation lanes:

* ``radial3d`` -- radially symmetric fields outside a ball in three
  dimensions, stored on nodes r_i in [rho0, L].  Volume quadrature is the
  trapezoid rule with node weight 4*pi*r_i^2*h (half weight at the two
  end nodes, which sit exactly on the obstacle surface and on the
  truncation sphere).
* ``cartesian2d`` -- a square lattice on [-L, L]^2 around a ball or
  polygon obstacle.  Nodes whose position lies strictly inside the
  obstacle are masked and forced to zero (homogeneous Dirichlet);
  unmasked cells carry weight h^2, masked cells weight 0.  The outermost
  ring of the lattice is the truncation boundary and is likewise forced
  to zero.

Region-restricted integrals sum node weights over nodes whose position
lies in the region, so ``ball(R)`` + ``exterior(R)`` partitions the
domain exactly and integration converges at first order (or better) in h
against closed-form volumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Point, Polygon

# Mask codes for grid nodes.
INTERIOR = 0
BOUNDARY_ADJACENT = 1
OBSTACLE = 2
OUTER = 3

MASK_NAMES = {
    INTERIOR: "interior",
    BOUNDARY_ADJACENT: "boundary_adjacent",
    OBSTACLE: "obstacle",
    OUTER: "outer",
}

# "<= 0" verdicts on closed-form quantities tolerate rounding noise only.
STAR_SHAPE_TOL = 1e-12


class DomainError(ValueError):
    """Invalid obstacle or grid construction request."""


@dataclass(frozen=True)
class ObstacleSpec:
    """Compact obstacle containing the origin.

    kind is 'ball' (radius rho0 > 0) or 'polygon' (simple closed
    counterclockwise vertex loop).  The origin must lie strictly inside
    the obstacle, so the exterior domain stays away from the coordinate
    singularity of the radial weights.
    """

    kind: str
    radius: float = 0.0
    vertices: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if self.kind == "ball":
            if not self.radius > 0.0:
                raise DomainError("ball obstacle needs radius > 0")
        elif self.kind == "polygon":
            if len(self.vertices) < 3:
                raise DomainError("polygon obstacle needs at least 3 vertices")
            poly = self._shapely()
            if not poly.is_valid:
                raise DomainError("polygon must be simple (non-self-intersecting)")
            if not shapely.is_ccw(poly.exterior):
                raise DomainError("polygon vertices must be counterclockwise")
            if not poly.contains(Point(0.0, 0.0)):
                raise DomainError("origin must lie strictly inside the obstacle")
        else:
            raise DomainError(f"unknown obstacle kind {self.kind!r}")

    @staticmethod
    def ball(radius: float) -> "ObstacleSpec":
        return ObstacleSpec(kind="ball", radius=float(radius))

    @staticmethod
    def polygon(vertices) -> "ObstacleSpec":
        verts = tuple((float(x), float(y)) for x, y in vertices)
        return ObstacleSpec(kind="polygon", vertices=verts)

    def _shapely(self) -> Polygon:
        return Polygon(self.vertices)

    @property
    def circumradius(self) -> float:
        """Radius rho0 of the smallest origin-centered ball covering the obstacle boundary."""
        if self.kind == "ball":
            return self.radius
        return max(math.hypot(x, y) for x, y in self.vertices)

    @property
    def inradius(self) -> float:
        """inf |x| over the exterior domain = distance from origin to the obstacle boundary."""
        if self.kind == "ball":
            return self.radius
        return float(self._shapely().exterior.distance(Point(0.0, 0.0)))

    def interior_contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorized strict-interior test for node masking."""
        if self.kind == "ball":
            return np.hypot(x, y) < self.radius
        return shapely.contains_xy(self._shapely(), x, y)

    def edges(self) -> np.ndarray:
        """Polygon edges as an array of (start, end) pairs, CCW order."""
        if self.kind != "polygon":
            raise DomainError("edges() is defined for polygon obstacles")
        v = np.asarray(self.vertices, dtype=float)
        return np.stack([v, np.roll(v, -1, axis=0)], axis=1)


@dataclass(frozen=True)
class Region:
    """Radial region of the exterior domain used by quadrature.

    Membership uses half-open radial intervals so that ball / annulus /
    exterior pieces partition the domain without double counting:
    ball(R) is |x| <= R, annulus(a, b) is a < |x| <= b, exterior(R) is
    |x| > R.
    """

    kind: str  # 'all' | 'ball' | 'exterior' | 'annulus'
    a: float = 0.0
    b: float = math.inf

    @staticmethod
    def all() -> "Region":
        return Region("all")

    @staticmethod
    def ball(radius: float) -> "Region":
        return Region("ball", b=float(radius))

    @staticmethod
    def exterior(radius: float) -> "Region":
        return Region("exterior", a=float(radius))

    @staticmethod
    def annulus(inner: float, outer: float) -> "Region":
        return Region("annulus", a=float(inner), b=float(outer))

    def membership(self, radii: np.ndarray) -> np.ndarray:
        if self.kind == "all":
            return np.ones_like(radii, dtype=bool)
        if self.kind == "ball":
            return radii <= self.b
        if self.kind == "exterior":
            return radii > self.a
        return (radii > self.a) & (radii <= self.b)

    def validate_against(self, L: float) -> None:
        tol = 1e-9 * max(1.0, L)
        for radius in (self.a, self.b):
            if math.isfinite(radius):
                if radius < 0.0:
                    raise DomainError(f"negative region radius {radius}")
                if radius > L + tol:
                    raise DomainError(
                        f"region radius {radius} exceeds truncation radius L={L}; "
                        "the grid cannot resolve it (domain-truncation misuse)"
                    )


@dataclass(frozen=True)
class Grid:
    """Discrete exterior domain with quadrature weights and boundary normals.

    ``positions`` holds node radii |x| in both modes; ``weights`` are the
    per-node volume (radial3d) or area (cartesian2d) quadrature weights,
    zero on masked cells.  ``boundary_points`` / ``boundary_normals``
    sample the obstacle boundary with unit exterior normals of the
    *domain* (pointing into the obstacle).
    """

    mode: str
    obstacle: ObstacleSpec
    h: float
    L: float
    rho0: float
    rho_min: float
    mask: np.ndarray
    weights: np.ndarray
    radii: np.ndarray
    # radial3d only: node radii as a 1-D array (same object as radii)
    r: np.ndarray | None
    # cartesian2d only: shared axis coordinates and coordinate fields
    axis: np.ndarray | None
    X: np.ndarray | None
    Y: np.ndarray | None
    boundary_points: np.ndarray
    boundary_normals: np.ndarray

    @property
    def fluid_mask(self) -> np.ndarray:
        """Nodes that carry unknowns (interior + boundary-adjacent)."""
        return (self.mask == INTERIOR) | (self.mask == BOUNDARY_ADJACENT)

    @property
    def forced_mask(self) -> np.ndarray:
        """Nodes pinned to zero (obstacle cells and the truncation boundary)."""
        return ~self.fluid_mask

    @property
    def node_count(self) -> int:
        return int(self.mask.size)

    def mask_histogram(self) -> dict[str, int]:
        return {name: int(np.count_nonzero(self.mask == code)) for code, name in MASK_NAMES.items()}


def build_grid(obstacle: ObstacleSpec, L: float, h: float, mode: str) -> Grid:
    """Build the discrete exterior domain.

    Preconditions: L > 2 * circumradius and h < (L - rho0)/100, so the
    grid resolves both the obstacle and a meaningful far field.  The
    requested L is snapped onto the lattice (radial: rho0 + n*h;
    cartesian: a multiple of h) and the snapped value is stored.
    """
    if h <= 0.0:
        raise DomainError("grid spacing h must be positive")
    rho0 = obstacle.circumradius
    if not L > 2.0 * rho0:
        raise DomainError(f"outer radius L={L} too small; need L > 2*circumradius = {2 * rho0}")
    if not h < (L - rho0) / 100.0:
        raise DomainError(f"grid spacing h={h} too coarse; need h < (L - rho0)/100")

    if mode == "radial3d":
        if obstacle.kind != "ball":
            raise DomainError("radial3d mode requires a ball obstacle")
        n = int(round((L - rho0) / h)) + 1
        L_snap = rho0 + (n - 1) * h
        r = rho0 + h * np.arange(n, dtype=float)
        r[-1] = L_snap
        weights = 4.0 * math.pi * r**2 * h
        weights[0] *= 0.5
        weights[-1] *= 0.5
        mask = np.full(n, INTERIOR, dtype=np.uint8)
        mask[0] = OBSTACLE
        mask[-1] = OUTER
        mask[1] = BOUNDARY_ADJACENT
        mask[-2] = BOUNDARY_ADJACENT
        # One representative surface sample; radial-mode boundary integrals
        # are evaluated analytically over the full sphere 4*pi*rho0^2.
        bpoints = np.array([[rho0, 0.0, 0.0]])
        bnormals = np.array([[-1.0, 0.0, 0.0]])
        return Grid(
            mode=mode, obstacle=obstacle, h=h, L=L_snap, rho0=rho0,
            rho_min=obstacle.inradius, mask=mask, weights=weights, radii=r,
            r=r, axis=None, X=None, Y=None,
            boundary_points=bpoints, boundary_normals=bnormals,
        )

    if mode == "cartesian2d":
        half = int(round(L / h))
        L_snap = half * h
        axis = h * (np.arange(2 * half + 1, dtype=float) - half)
        X, Y = np.meshgrid(axis, axis, indexing="xy")
        radii = np.hypot(X, Y)
        mask = np.full(X.shape, INTERIOR, dtype=np.uint8)
        inside = obstacle.interior_contains(X.ravel(), Y.ravel()).reshape(X.shape)
        mask[inside] = OBSTACLE
        mask[0, :] = OUTER
        mask[-1, :] = OUTER
        mask[:, 0] = OUTER
        mask[:, -1] = OUTER
        fluid = (mask == INTERIOR)
        # boundary-adjacent: fluid node with a masked stencil neighbor
        masked = ~fluid
        adj = np.zeros_like(fluid)
        adj[1:-1, 1:-1] = (
            masked[:-2, 1:-1] | masked[2:, 1:-1] | masked[1:-1, :-2] | masked[1:-1, 2:]
        )
        mask[fluid & adj] = BOUNDARY_ADJACENT
        weights = np.where((mask == INTERIOR) | (mask == BOUNDARY_ADJACENT), h * h, 0.0)
        bpoints, bnormals = _obstacle_boundary_samples(obstacle, h)
        return Grid(
            mode=mode, obstacle=obstacle, h=h, L=L_snap, rho0=rho0,
            rho_min=obstacle.inradius, mask=mask, weights=weights, radii=radii,
            r=None, axis=axis, X=X, Y=Y,
            boundary_points=bpoints, boundary_normals=bnormals,
        )

    raise DomainError(f"unknown grid mode {mode!r}")


def _obstacle_boundary_samples(obstacle: ObstacleSpec, spacing: float):
    """Sample the obstacle boundary at spacing <= given, with unit exterior
    normals of the domain (pointing into the obstacle)."""
    if obstacle.kind == "ball":
        rho = obstacle.radius
        k = max(8, int(math.ceil(2.0 * math.pi * rho / spacing)))
        theta = 2.0 * math.pi * np.arange(k) / k
        pts = rho * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        normals = -pts / rho
        return pts, normals
    pts_list = []
    nrm_list = []
    for (p, q) in obstacle.edges():
        d = q - p
        length = math.hypot(*d)
        # outward normal of the CCW polygon is (dy, -dx)/|d|; the domain's
        # exterior normal is its negation
        nu = np.array([-d[1], d[0]]) / length
        m = max(1, int(math.ceil(length / spacing)))
        s = (np.arange(m) + 0.5) / m
        pts_list.append(p + np.outer(s, d))
        nrm_list.append(np.tile(nu, (m, 1)))
    return np.concatenate(pts_list), np.concatenate(nrm_list)


@dataclass(frozen=True)
class StarShapeReport:
    """Verdict of the star-shape audit x . nu(x) <= 0 on the obstacle boundary."""

    passed: bool
    worst: float
    worst_point: tuple[float, ...]
    worst_normal: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst": self.worst,
            "worst_point": list(self.worst_point),
            "worst_normal": list(self.worst_normal),
        }


def check_star_shaped(obstacle: ObstacleSpec, spacing: float | None = None) -> StarShapeReport:
    """Audit that the obstacle is star-shaped relative to the origin.

    The criterion is x . nu(x) <= 0 on the boundary, with nu the unit
    exterior normal of the domain (pointing into the obstacle).  For a
    ball the product is -rho0 identically.  On a polygon x . nu is linear
    along each edge, so edge endpoints (checked alongside midpoint
    samples) make the audit exact.
    """
    if obstacle.kind == "ball":
        rho = obstacle.radius
        return StarShapeReport(
            passed=True, worst=-rho, worst_point=(rho, 0.0), worst_normal=(-1.0, 0.0)
        )
    if spacing is None:
        perimeter = sum(
            math.hypot(q[0] - p[0], q[1] - p[1]) for (p, q) in obstacle.edges()
        )
        spacing = perimeter / 256.0
    pts, normals = _obstacle_boundary_samples(obstacle, spacing)
    # per-edge endpoints, evaluated with that edge's normal (x . nu is
    # linear along the edge, so its maximum sits at an endpoint)
    extra_pts = []
    extra_nrm = []
    for (p, q) in obstacle.edges():
        d = q - p
        nu = np.array([-d[1], d[0]]) / math.hypot(*d)
        extra_pts.extend([p, q])
        extra_nrm.extend([nu, nu])
    pts = np.concatenate([pts, np.asarray(extra_pts)])
    normals = np.concatenate([normals, np.asarray(extra_nrm)])
    dots = np.einsum("ij,ij->i", pts, normals)
    i = int(np.argmax(dots))
    worst = float(dots[i])
    return StarShapeReport(
        passed=worst <= STAR_SHAPE_TOL,
        worst=worst,
        worst_point=tuple(pts[i]),
        worst_normal=tuple(normals[i]),
    )


def region_weights(grid: Grid, region: Region) -> np.ndarray:
    """Quadrature weights restricted to nodes whose position lies in the region."""
    region.validate_against(grid.L)
    return np.where(region.membership(grid.radii), grid.weights, 0.0)


def integrate(field: np.ndarray, grid: Grid, region: Region = Region("all")) -> float:
    """Quadrature sum of a nodal field over a radial region of the domain."""
    if field.shape != grid.radii.shape:
        raise DomainError(f"field shape {field.shape} does not match grid {grid.radii.shape}")
    w = region_weights(grid, region)
    return float(np.dot(w.ravel(), field.ravel()))


def grid_summary(grid: Grid, star_report: StarShapeReport | None = None) -> dict:
    """JSON-ready grid summary: node counts, mask histogram, star-shape audit."""
    if star_report is None:
        star_report = check_star_shaped(grid.obstacle)
    return {
        "mode": grid.mode,
        "h": grid.h,
        "L": grid.L,
        "rho0": grid.rho0,
        "rho_min": grid.rho_min,
        "node_count": grid.node_count,
        "mask_histogram": grid.mask_histogram(),
        "quadrature_total": float(np.sum(grid.weights)),
        "star_shape": star_report.to_dict(),
    }
