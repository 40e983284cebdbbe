"""Sphere nets, spherical caps, polytope machinery and affine maps.

Everything here is oracle-free: pure functions of explicit coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .tolerances import DET_FLOOR, GEOM_SLACK, MVEE_TOL, QUAD_TOL


# ---------------------------------------------------------------------------
# affine maps


@dataclass
class AffineMap:
    """Invertible map x -> offset + matrix @ x."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        d = self.offset.shape[0]
        if self.matrix.shape != (d, d):
            raise ValueError("matrix/offset shape mismatch")
        if abs(np.linalg.det(self.matrix)) <= DET_FLOOR:
            raise ValueError("affine map is numerically singular")

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def dim(self):
        return self.offset.shape[0]

    @property
    def det(self):
        return float(np.linalg.det(self.matrix))

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T + self.offset

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.offset)

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self after other: x -> self(other(x))."""
        return AffineMap(self.matrix @ other.matrix,
                         self.offset + self.matrix @ other.offset)

    def to_json(self):
        return {"T": self.matrix.tolist(), "x0": self.offset.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["T"], dtype=float), np.array(obj["x0"], dtype=float))


# ---------------------------------------------------------------------------
# balls, caps, direction sets


def ball_volume(d: int) -> float:
    """Volume of the unit ball in d dimensions."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_directions(d: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic quasi-uniform unit directions; used for probing and checks."""
    if d == 2:
        ang = (np.arange(count) + 0.5) * (2 * math.pi / count)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if d == 3:
        # Fibonacci spiral
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = i * math.pi * (3.0 - math.sqrt(5.0))
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    rng = np.random.default_rng(seed + 7 * d)
    pts = rng.standard_normal((count, d))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts


@dataclass
class SphericalCap:
    """Cap of the unit ball around a boundary direction, chordal radius r."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        n = np.linalg.norm(self.center)
        if abs(n - 1.0) > 1e-12:
            raise ValueError("cap center must be a unit vector")
        if not 0.0 < self.radius <= math.sqrt(2.0) + 1e-12:
            raise ValueError("cap radius must lie in (0, sqrt(2)]")

    @property
    def height_threshold(self):
        return 1.0 - self.radius ** 2 / 2.0


def cap_contains(cap: SphericalCap, x) -> bool | np.ndarray:
    """Point test: inside the unit ball and beyond the cap's cutting plane."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    inside = (np.linalg.norm(pts, axis=1) <= 1.0) & (pts @ cap.center > cap.height_threshold)
    return bool(inside[0]) if single else inside


def cap_volume(d: int, r: float) -> float:
    """Volume of a chordal-radius-r cap of the unit d-ball, by 1-D quadrature."""
    if not 0.0 < r <= math.sqrt(2.0) + 1e-12:
        raise ValueError("cap radius must lie in (0, sqrt(2)]")
    lo = 1.0 - r ** 2 / 2.0
    val, _ = quad(lambda x: (1.0 - x * x) ** ((d - 1) / 2.0), lo, 1.0,
                  epsabs=QUAD_TOL, epsrel=1e-13, limit=200)
    return ball_volume(d - 1) * val


# ---------------------------------------------------------------------------
# nets on spheres


@dataclass
class Net:
    """Points on a sphere with pairwise separation >= delta and certified covering."""

    dim: int
    sphere_radius: float
    delta: float
    points: np.ndarray
    covering_slack: float = 0.1

    def __len__(self):
        return len(self.points)

    def min_separation(self) -> float:
        """Exact nearest-pair distance (KD-tree accelerated)."""
        tree = cKDTree(self.points)
        dist, _ = tree.query(self.points, k=2)
        return float(dist[:, 1].min()) if len(self.points) > 1 else math.inf

    def covering_radius(self, num_probes: int = 100_000) -> float:
        """Largest probe-to-net distance over a quasi-uniform probe sample."""
        probes = sphere_directions(self.dim, num_probes) * self.sphere_radius
        tree = cKDTree(self.points)
        dist, _ = tree.query(probes)
        return float(dist.max())


def _circle_net(delta_unit: float, phase: float) -> np.ndarray:
    """Maximal equally spaced point set on the unit circle with chord >= delta_unit."""
    half = min(1.0, delta_unit / 2.0)
    m = max(1, int(math.floor(math.pi / math.asin(half))))
    while m > 1 and 2.0 * math.sin(math.pi / m) < delta_unit:
        m -= 1
    ang = phase + 2.0 * math.pi * np.arange(m) / m
    return np.column_stack([np.cos(ang), np.sin(ang)])


_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def _unit_sphere_net(d: int, delta_unit: float, shrink: float, phase: float) -> np.ndarray:
    """Separated point set on the unit sphere S_{d-1}, built from latitude rings.

    Adjacent rings are one polar step apart, so the chord between any two rings
    is at least the ring step; within a ring the construction recurses on a
    lower-dimensional sphere with the same chordal separation.
    """
    if d == 2:
        return _circle_net(delta_unit, phase)
    step = 2.0 * math.asin(min(1.0, delta_unit / 2.0)) * shrink
    n_rings = max(1, int(math.floor(math.pi / step)))
    start = (math.pi - n_rings * step) / 2.0 + step / 2.0
    blocks = []
    for k in range(n_rings):
        theta = start + k * step
        s, c = math.sin(theta), math.cos(theta)
        if 2.0 * s < delta_unit:
            ring = np.zeros((1, d - 1))
            ring[0, 0] = 1.0
        else:
            ring = _unit_sphere_net(d - 1, delta_unit / s, 1.0, phase + k * _GOLDEN_ANGLE)
        block = np.empty((len(ring), d))
        block[:, : d - 1] = s * ring
        block[:, d - 1] = c
        blocks.append(block)
    return np.vstack(blocks)


def build_delta_net(d: int, delta: float, sphere_radius: float = 1.0,
                    covering_slack: float = 0.1) -> Net:
    """Construct a delta-net of the radius-rho sphere in R^d.

    Separation >= delta holds by construction; the covering radius is verified
    against a probe sample and the construction is tightened on failure.
    """
    if not 2 <= d <= 6:
        raise ValueError("net construction supports dimensions 2..6")
    if not 0.0 < delta <= 2.0 * sphere_radius:
        raise ValueError("need 0 < delta <= 2*sphere_radius")
    delta_unit = delta / sphere_radius
    n_probes = 20_000 if d <= 3 else 60_000
    shrink = 1.0
    for _ in range(4):
        pts = _unit_sphere_net(d, delta_unit, shrink, 0.0) * sphere_radius
        net = Net(d, sphere_radius, delta, pts, covering_slack)
        if net.covering_radius(n_probes) <= delta * (1.0 + covering_slack):
            return net
        shrink *= 0.93
    raise RuntimeError("delta-net covering verification failed after retries")


# ---------------------------------------------------------------------------
# vertex polytopes


@dataclass
class VPolytope:
    """Convex polytope held by vertices, with derived facets and a triangulation."""

    dim: int
    vertices: np.ndarray
    facet_normals: np.ndarray        # unit outward normals, one row per facet plane
    facet_offsets: np.ndarray        # a . x <= b
    interior_point: np.ndarray
    simplex_indices: np.ndarray = field(repr=False)  # rows of vertex indices, d per facet simplex

    def __post_init__(self):
        self._tri_cache = None

    def contains(self, x, slack: float = GEOM_SLACK):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        ok = np.all(pts @ self.facet_normals.T <= self.facet_offsets + slack, axis=1)
        return bool(ok[0]) if single else ok

    def gauge(self, x):
        """Minkowski gauge about the origin: max_j (a_j . x) / b_j."""
        x = np.asarray(x, dtype=float)
        vals = np.atleast_2d(x) @ self.facet_normals.T / self.facet_offsets
        g = vals.max(axis=1)
        return float(g[0]) if x.ndim == 1 else g

    def _triangulation(self):
        """Per-simplex volumes for the fan triangulation from the interior point."""
        if self._tri_cache is None:
            base = self.vertices[self.simplex_indices] - self.interior_point
            vols = np.abs(np.linalg.det(base)) / math.factorial(self.dim)
            self._tri_cache = vols
        return self._tri_cache

    def volume(self) -> float:
        return float(self._triangulation().sum())

    def to_json(self):
        return {"dim": self.dim, "vertices": self.vertices.tolist()}

    @classmethod
    def from_json(cls, obj):
        return convex_hull(np.array(obj["vertices"], dtype=float))


def _dedupe_facets(normals, offsets):
    key = np.round(np.column_stack([normals, offsets]) / 1e-7).astype(np.int64)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx.sort()
    return normals[idx], offsets[idx]


def convex_hull(points, d: int | None = None) -> VPolytope:
    """Hull of a point cloud; vertices are a subset of the input."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("expected a 2-D array of points")
    if d is not None and pts.shape[1] != d:
        raise ValueError("points have wrong dimension")
    dim = pts.shape[1]
    if dim > 6:
        raise ValueError("hull computation restricted to dimensions <= 6")
    rank = np.linalg.matrix_rank(pts - pts[0], tol=1e-9)
    if rank < dim:
        raise ValueError(f"degenerate input: affine rank {rank} < dimension {dim}")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:  # pragma: no cover - rank check catches most cases
        raise ValueError(f"hull construction failed: {exc}") from exc
    verts = pts[hull.vertices]
    interior = verts.mean(axis=0)
    normals = hull.equations[:, :dim].copy()
    offsets = -hull.equations[:, dim].copy()
    normals, offsets = _dedupe_facets(normals, offsets)
    # remap simplex rows onto the vertex subset
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[hull.vertices] = np.arange(len(hull.vertices))
    simplices = remap[hull.simplices]
    return VPolytope(dim, verts, normals, offsets, interior, simplices)


def polytope_volume(P: VPolytope) -> float:
    return P.volume()


def polytope_contains(P: VPolytope, x, slack: float = GEOM_SLACK):
    return P.contains(x, slack)


def scale_polytope(P: VPolytope, lam: float) -> VPolytope:
    """Dilate about the origin; requires the origin strictly inside."""
    if lam < 1.0:
        raise ValueError("scale factor must be >= 1")
    if P.facet_offsets.min() <= DET_FLOOR:
        raise ValueError("origin is not strictly inside the polytope")
    return VPolytope(P.dim, P.vertices * lam, P.facet_normals.copy(),
                     P.facet_offsets * lam, P.interior_point * lam,
                     P.simplex_indices.copy())


def directional_width(P: VPolytope, u) -> float:
    proj = P.vertices @ np.asarray(u, dtype=float)
    return float(proj.max() - proj.min())


def transform_polytope(P: VPolytope, amap: AffineMap) -> VPolytope:
    """Affine image of a polytope: vertices mapped, facets rebuilt."""
    return convex_hull(amap.apply(P.vertices))


def _khachiyan_levels(Q, u):
    V = Q.T @ (Q * u[:, None])
    return np.einsum("ij,ij->i", Q @ np.linalg.inv(V), Q)


def _mvee_newton_polish(Q, u, tol):
    """Maximize logdet(sum u_i q_i q_i^T) over the simplex, active-set Newton.

    The first-order iteration identifies the support; Newton steps on the
    active face then close the remaining gap at quadratic rate.
    """
    n, dp = Q.shape
    dd = float(dp)
    for _ in range(12):
        act = np.flatnonzero(u > 1e-12)
        ua = u[act]
        Qa = Q[act]
        for _ in range(40):
            V = Qa.T @ (Qa * ua[:, None])
            B = Qa @ np.linalg.solve(V, Qa.T)
            g = np.diag(B).copy()
            if g.max() - g.min() <= 0.5 * tol * dd:
                break
            H = -(B * B)
            na = len(ua)
            kkt = np.zeros((na + 1, na + 1))
            kkt[:na, :na] = H - 1e-12 * np.eye(na)
            kkt[:na, na] = 1.0
            kkt[na, :na] = 1.0
            rhs = np.zeros(na + 1)
            rhs[:na] = -(g - dd)
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                break
            du = sol[:na]
            t = 1.0
            neg = du < 0.0
            if neg.any():
                t = min(1.0, float((0.999 * ua[neg] / -du[neg]).min()))
            f0 = np.linalg.slogdet(V)[1]
            improved = False
            for _ in range(25):
                u_try = ua + t * du
                if u_try.min() >= 0.0:
                    V_try = Qa.T @ (Qa * u_try[:, None])
                    sign, f_try = np.linalg.slogdet(V_try)
                    if sign > 0 and f_try >= f0 - 1e-15:
                        ua = u_try / u_try.sum()
                        improved = True
                        break
                t *= 0.5
            if not improved:
                break
        u = np.zeros(n)
        u[act] = ua
        lev = _khachiyan_levels(Q, u)
        j = int(np.argmax(lev))
        if lev[j] - dd <= dd * tol:
            return u, True
        # a dropped or never-active point still violates: bring it in
        step = (lev[j] - dd) / (dd * (lev[j] - 1.0))
        u *= 1.0 - step
        u[j] += step
    return u, False


def mvee(points, tol: float = MVEE_TOL):
    """Minimum-volume enclosing ellipsoid (Khachiyan + active-set Newton).

    Returns (center, A) with the ellipsoid {x : (x-c)^T A (x-c) <= 1}
    containing every input point.
    """
    P = np.asarray(points, dtype=float)
    n, d = P.shape
    if np.linalg.matrix_rank(P - P[0], tol=1e-12) < d:
        raise ValueError("points do not span the space")
    Q = np.column_stack([P, np.ones(n)])
    u = np.full(n, 1.0 / n)
    dd = d + 1.0
    # first-order phase with away steps: cheap support identification
    for _ in range(2000):
        lev = _khachiyan_levels(Q, u)
        j_up = int(np.argmax(lev))
        e_up = lev[j_up] - dd
        lev_act = np.where(u > 0.0, lev, np.inf)
        j_dn = int(np.argmin(lev_act))
        e_dn = dd - lev[j_dn]
        if max(e_up, e_dn) <= dd * max(tol, 1e-4):
            break
        j = j_up if e_up >= e_dn else j_dn
        lv = lev[j]
        step = (lv - dd) / (dd * (lv - 1.0))
        step = max(step, -u[j] / (1.0 - u[j]))
        u *= 1.0 - step
        u[j] += step
        u[u < 0.0] = 0.0
    u, _ = _mvee_newton_polish(Q, u, tol)
    center = u @ P
    cov = P.T @ (P * u[:, None]) - np.outer(center, center)
    A = np.linalg.inv(cov) / d
    # tighten so containment is exact for the input set
    diff = P - center
    worst = np.einsum("ij,jk,ik->i", diff, A, diff).max()
    if worst > 1.0:
        A = A / worst
    return center, A
