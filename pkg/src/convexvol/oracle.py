"""Membership oracles over analytic convex bodies, with exact query accounting.

An :class:`OracleHandle` is the only sanctioned path to a body's membership
predicate during an algorithm run: every point it evaluates charges one
membership query to its ledger.  Handles accept single points or batches
(``(n, d)`` arrays); a batch of n points charges n queries.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection

from .geometry import AffineMap, ball_volume, convex_hull
from .tolerances import DET_FLOOR, UNIT_TOL


class ContractViolation(ValueError):
    """A precondition of an oracle operation was violated."""


@dataclass
class QueryLedger:
    """Monotone counters for every kind of access an algorithm performs."""

    membership_queries: int = 0
    bit_queries: int = 0
    simulator_evaluations: int = 0
    model_quantum_queries: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge_membership(self, n: int = 1):
        with self._lock:
            self.membership_queries += int(n)

    def charge_bits(self, n: int = 1):
        with self._lock:
            self.bit_queries += int(n)

    def charge_simulator(self, n: int = 1):
        with self._lock:
            self.simulator_evaluations += int(n)

    def charge_quantum(self, n: int = 1):
        with self._lock:
            self.model_quantum_queries += int(n)

    def snapshot(self) -> dict:
        return {
            "membership_queries": self.membership_queries,
            "bit_queries": self.bit_queries,
            "simulator_evaluations": self.simulator_evaluations,
            "model_quantum_queries": self.model_quantum_queries,
        }

    @staticmethod
    def delta(after: dict, before: dict) -> dict:
        return {k: after[k] - before[k] for k in after}


# ---------------------------------------------------------------------------
# body specifications


class BodySpec:
    """Analytic description of a convex body with B_d inside and R*B_d outside."""

    kind = "abstract"
    dim: int

    # radius of a ball guaranteed to sit inside the body
    inner_radius = 1.0

    def contains(self, x):
        """Exact analytic membership; accepts (d,) or (n, d), never ledgered."""
        raise NotImplementedError

    @property
    def enclosing_radius(self) -> float:
        raise NotImplementedError

    def volume(self) -> float:
        raise NotImplementedError

    def support(self, u) -> float:
        raise NotImplementedError

    def radial(self, u):
        """Distance from the origin to the boundary along unit direction(s) u."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def _as_batch(self, x):
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ContractViolation(
                f"point dimension {pts.shape[1]} != body dimension {self.dim}")
        return pts, single


class Ball(BodySpec):
    kind = "ball"

    def __init__(self, dim: int, radius: float = 1.0):
        if dim < 2:
            raise ContractViolation("dimension must be >= 2")
        if radius < 1.0:
            raise ContractViolation("ball radius must be >= 1 so B_d fits inside")
        self.dim = int(dim)
        self.radius = float(radius)

    def contains(self, x):
        pts, single = self._as_batch(x)
        ok = np.einsum("ij,ij->i", pts, pts) <= self.radius ** 2
        return bool(ok[0]) if single else ok

    @property
    def enclosing_radius(self):
        return self.radius

    def volume(self):
        return ball_volume(self.dim) * self.radius ** self.dim

    def support(self, u):
        return self.radius

    def radial(self, u):
        u = np.asarray(u, dtype=float)
        shape = u.shape[:-1]
        return np.full(shape, self.radius) if shape else self.radius

    def to_json(self):
        return {"kind": self.kind, "dim": self.dim, "radius": self.radius}


class Ellipsoid(BodySpec):
    """{x : x^T A x <= 1} for symmetric positive definite A with eigenvalues <= 1."""

    kind = "ellipsoid"

    def __init__(self, dim: int, shape):
        A = np.asarray(shape, dtype=float)
        if A.shape != (dim, dim) or not np.allclose(A, A.T, atol=1e-12):
            raise ContractViolation("shape matrix must be symmetric d x d")
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 0:
            raise ContractViolation("shape matrix must be positive definite")
        if eig[-1] > 1.0 + 1e-12:
            raise ContractViolation("eigenvalues must be <= 1 so B_d fits inside")
        self.dim = int(dim)
        self.shape = A
        self._inv = np.linalg.inv(A)
        self._rmax = 1.0 / np.sqrt(eig[0])

    @classmethod
    def from_semi_axes(cls, axes):
        axes = np.asarray(axes, dtype=float)
        return cls(len(axes), np.diag(1.0 / axes ** 2))

    def contains(self, x):
        pts, single = self._as_batch(x)
        ok = np.einsum("ij,jk,ik->i", pts, self.shape, pts) <= 1.0
        return bool(ok[0]) if single else ok

    @property
    def enclosing_radius(self):
        return float(self._rmax)

    def volume(self):
        return ball_volume(self.dim) / np.sqrt(np.linalg.det(self.shape))

    def support(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.sqrt(u @ self._inv @ u))

    def radial(self, u):
        u = np.asarray(u, dtype=float)
        q = np.einsum("...j,jk,...k->...", u, self.shape, u)
        return 1.0 / np.sqrt(q)

    def to_json(self):
        return {"kind": self.kind, "dim": self.dim, "shape": self.shape.tolist()}


class Box(BodySpec):
    kind = "box"

    def __init__(self, dim: int, halfwidths):
        h = np.asarray(halfwidths, dtype=float)
        if h.shape != (dim,) or np.any(h < 1.0):
            raise ContractViolation("halfwidths must be d positive reals, each >= 1")
        self.dim = int(dim)
        self.halfwidths = h

    def contains(self, x):
        pts, single = self._as_batch(x)
        ok = np.all(np.abs(pts) <= self.halfwidths, axis=1)
        return bool(ok[0]) if single else ok

    @property
    def enclosing_radius(self):
        return float(np.linalg.norm(self.halfwidths))

    def volume(self):
        return float(np.prod(2.0 * self.halfwidths))

    def support(self, u):
        return float(np.abs(np.asarray(u, dtype=float)) @ self.halfwidths)

    def radial(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            t = self.halfwidths / np.abs(u)
        return np.min(t, axis=-1)

    def to_json(self):
        return {"kind": self.kind, "dim": self.dim,
                "halfwidths": self.halfwidths.tolist()}


class HPolytope(BodySpec):
    """Intersection of halfspaces a_i . x <= b_i with unit normals and b_i >= 1."""

    kind = "hpolytope"

    def __init__(self, dim: int, normals, offsets):
        A = np.asarray(normals, dtype=float)
        b = np.asarray(offsets, dtype=float)
        if A.ndim != 2 or A.shape[1] != dim or b.shape != (A.shape[0],):
            raise ContractViolation("normals must be (m, d), offsets (m,)")
        if np.any(np.abs(np.linalg.norm(A, axis=1) - 1.0) > 1e-9):
            raise ContractViolation("facet normals must be unit vectors")
        if np.any(b < 1.0):
            raise ContractViolation("offsets must be >= 1 so B_d fits inside")
        self.dim = int(dim)
        self.normals = A
        self.offsets = b
        self._radius = None
        self._vertices = None

    def contains(self, x):
        pts, single = self._as_batch(x)
        ok = np.all(pts @ self.normals.T <= self.offsets, axis=1)
        return bool(ok[0]) if single else ok

    def support(self, u):
        u = np.asarray(u, dtype=float)
        res = linprog(c=-u, A_ub=self.normals, b_ub=self.offsets,
                      bounds=[(None, None)] * self.dim, method="highs")
        if not res.success:
            raise ContractViolation("support LP failed; polytope may be unbounded")
        return float(-res.fun)

    @property
    def enclosing_radius(self):
        if self._radius is None:
            ext = [max(self.support(e), self.support(-e))
                   for e in np.eye(self.dim)]
            self._radius = float(np.linalg.norm(ext))
        return self._radius

    def _vertex_set(self):
        if self._vertices is None:
            halfspaces = np.column_stack([self.normals, -self.offsets])
            hs = HalfspaceIntersection(halfspaces, np.zeros(self.dim))
            self._vertices = hs.intersections
        return self._vertices

    def volume(self):
        return convex_hull(self._vertex_set()).volume()

    def radial(self, u):
        u = np.asarray(u, dtype=float)
        dots = u @ self.normals.T
        with np.errstate(divide="ignore"):
            t = np.where(dots > 0, self.offsets / dots, np.inf)
        return np.min(t, axis=-1)

    def to_json(self):
        return {"kind": self.kind, "dim": self.dim,
                "normals": self.normals.tolist(), "offsets": self.offsets.tolist()}


class CapBody(BodySpec):
    """Hard-instance body K_x; membership dispatches to the instance so that
    the in-cap bit lookups charge bit queries on the caller's ledger."""

    kind = "capbody"

    def __init__(self, instance):
        self.instance = instance
        self.dim = instance.dim

    @property
    def inner_radius(self):
        return self.instance.height_threshold

    def contains(self, x):
        pts, single = self._as_batch(x)
        ok = self.instance.contains_free(pts)
        return bool(ok[0]) if single else ok

    @property
    def enclosing_radius(self):
        return 1.0

    def volume(self):
        return self.instance.volume()

    def support(self, u):
        raise ContractViolation("analytic support is not offered for cap bodies")

    def radial(self, u):
        return self.instance.radial(u)

    def to_json(self):
        return {"kind": self.kind, "dim": self.dim,
                "instance": self.instance.to_manifest()}


def spec_from_json(obj) -> BodySpec:
    kind = obj["kind"]
    d = int(obj["dim"])
    if kind == "ball":
        return Ball(d, obj["radius"])
    if kind == "ellipsoid":
        return Ellipsoid(d, np.array(obj["shape"], dtype=float))
    if kind == "box":
        return Box(d, np.array(obj["halfwidths"], dtype=float))
    if kind == "hpolytope":
        return HPolytope(d, np.array(obj["normals"], dtype=float),
                         np.array(obj["offsets"], dtype=float))
    if kind == "capbody":
        from .lowerbound import CapBodyInstance
        return CapBody(CapBodyInstance.from_manifest(obj["instance"]))
    raise ContractViolation(f"unknown body kind {kind!r}")


def builtin_body(name: str, dim: int) -> BodySpec:
    """Bodies addressable by name from the CLI."""
    if name == "ball":
        return Ball(dim)
    if name == "box":
        return Box(dim, np.ones(dim))
    if name == "ellipsoid":
        axes = np.ones(dim)
        axes[-1] = 5.0
        return Ellipsoid.from_semi_axes(axes)
    raise ContractViolation(f"unknown builtin body {name!r}")


# ---------------------------------------------------------------------------
# handles


class OracleHandle:
    """Ledgered access to a body, optionally through an affine reparameterization.

    A handle with frame L answers membership for L(K): the query point is pulled
    back through L^{-1} before the analytic test.  Handles are immutable and
    may be shared across threads; the ledger takes care of atomicity.
    """

    def __init__(self, spec: BodySpec, ledger: QueryLedger | None = None,
                 frame: AffineMap | None = None):
        self.spec = spec
        self.ledger = ledger if ledger is not None else QueryLedger()
        self.frame = frame
        self._frame_inv = frame.inverse() if frame is not None else None

    @property
    def dim(self):
        return self.spec.dim

    def _pull_back(self, x):
        pts = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(pts)):
            raise ContractViolation("query points must be finite")
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ContractViolation(
                f"point dimension {pts.shape[1]} != body dimension {self.dim}")
        if self._frame_inv is not None:
            pts = self._frame_inv.apply(pts)
        return pts, single

    def membership(self, x):
        pts, single = self._pull_back(x)
        if isinstance(self.spec, CapBody):
            res = self.spec.instance.query_batch(pts, self.ledger)
        else:
            res = self.spec.contains(pts)
        self.ledger.charge_membership(len(pts))
        return bool(res[0]) if single else res

    def simulated_membership(self, x):
        """Membership evaluated by the classical simulator: charged as
        simulator work, never as model queries."""
        pts, single = self._pull_back(x)
        res = self.spec.contains(pts)
        self.ledger.charge_simulator(len(pts))
        return bool(res[0]) if single else res


def membership(handle: OracleHandle, x):
    return handle.membership(x)


def transformed_oracle(handle: OracleHandle, L: AffineMap) -> OracleHandle:
    """Handle for L(K); shares the ledger with the input handle."""
    if abs(L.det) <= DET_FLOOR:
        raise ContractViolation("reparameterization map is singular")
    frame = L if handle.frame is None else L.compose(handle.frame)
    return OracleHandle(handle.spec, handle.ledger, frame)


def analytic_volume(spec: BodySpec) -> float:
    """Ground-truth volume; accurate to quadrature tolerance where integrals occur."""
    return spec.volume()


def analytic_support(spec: BodySpec, u) -> float:
    """Ground-truth support function h_K(u) for a unit direction."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise ContractViolation("support direction must be a unit vector")
    return spec.support(u)
