"""Deterministic eps-kernel construction, outer sandwiching and quality checks.

The well-rounded construction places a net of directions on a sphere just
outside the body, projects every net point onto the body and takes the hull.
The general construction first rounds the body and works in the rounded frame;
callers pull results back through the attached map when they need original
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (AffineMap, VPolytope, build_delta_net, convex_hull,
                       scale_polytope, sphere_directions)
from .oracle import BodySpec, ContractViolation, OracleHandle
from .projection import project_batch
from .tolerances import GEOM_SLACK

PROJECT_CHUNK = 131072


@dataclass
class SandwichPair:
    """Inner polytope inside the body, outer polytope containing it."""

    inner: VPolytope
    outer: VPolytope
    shell_ratio_bound: float
    frame: AffineMap

    @property
    def shell_ratio(self) -> float:
        return self.outer.volume() / self.inner.volume() - 1.0

    def shell_volume(self) -> float:
        return self.outer.volume() - self.inner.volume()


def kernel_rounded(handle: OracleHandle, d: int, eps: float, R: float) -> VPolytope:
    """eps-kernel of a well-rounded body (B_d <= K <= R*B_d).

    Net spacing sqrt(eps/R) on the sphere of radius R+1; each net point is
    projected onto the body at tolerance eps/4 (the extra margin absorbs the
    projector's cut relaxation), and the hull of the projections is returned.
    """
    if not 0.0 < eps < 1.0:
        raise ContractViolation("kernel precision must lie in (0, 1)")
    eta = math.sqrt(eps / R)
    net = build_delta_net(d, eta, R + 1.0)
    pts = net.points
    blocks = []
    for start in range(0, len(pts), PROJECT_CHUNK):
        blocks.append(project_batch(handle, pts[start:start + PROJECT_CHUNK],
                                    eps / 4.0, R))
    return convex_hull(np.vstack(blocks), d)


def construct_kernel(handle: OracleHandle, d: int, eps: float, R: float):
    """Round the body, then build the kernel in the rounded frame.

    Returns (kernel, L); the kernel is an eps-kernel of L(K) and L^{-1} of it
    is an eps-kernel of K by affine invariance.
    """
    from .rounding import round_body

    L, r_out = round_body(handle, R)
    from .oracle import transformed_oracle

    rounded = transformed_oracle(handle, L)
    kern = kernel_rounded(rounded, d, eps, r_out)
    return kern, L, r_out


def outer_approximation(inner: VPolytope, eps: float, r_out: float,
                        frame: AffineMap | None = None) -> SandwichPair:
    """Dilate an eps-kernel into an outer approximation of the body.

    Valid when the kernel came from a body sandwiched in r_out * B_d at
    precision eps: the body lies within Hausdorff distance 2*eps*r_out of the
    kernel, so scaling by 1 + 4*eps*r_out about the origin covers it.
    """
    if eps >= 1.0 / (4.0 * r_out):
        raise ContractViolation("need eps < 1/(4 R_out) for the outer dilation")
    if inner.facet_offsets.min() < 0.5 - GEOM_SLACK:
        raise ContractViolation("kernel does not contain B_d/2; dilation invalid")
    lam = 1.0 + 4.0 * eps * r_out
    outer = scale_polytope(inner, lam)
    bound = lam ** inner.dim - 1.0
    if frame is None:
        frame = AffineMap.identity(inner.dim)
    return SandwichPair(inner, outer, bound, frame)


# ---------------------------------------------------------------------------
# quality checks


@dataclass
class WidthReport:
    eps: float
    num_dirs: int
    max_deficit: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0


def _support_batch(spec: BodySpec, U: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind == "ball":
        return np.full(len(U), spec.radius)
    if kind == "ellipsoid":
        inv = np.linalg.inv(spec.shape)
        return np.sqrt(np.einsum("ij,jk,ik->i", U, inv, U))
    if kind == "box":
        return np.abs(U) @ spec.halfwidths
    return np.array([spec.support(u) for u in U])


def kernel_width_check(P: VPolytope, spec: BodySpec, eps: float,
                       num_dirs: int = 10_000) -> WidthReport:
    """Directional-width test of the kernel inequality against analytic supports."""
    U = sphere_directions(spec.dim, num_dirs)
    proj = P.vertices @ U.T
    w_p = proj.max(axis=0) - proj.min(axis=0)
    w_k = _support_batch(spec, U) + _support_batch(spec, -U)
    deficit = (1.0 - eps) * w_k - w_p - GEOM_SLACK
    bad = np.flatnonzero(deficit > 0.0)
    return WidthReport(eps, num_dirs, float(deficit.max()),
                       [(U[i], float(deficit[i])) for i in bad[:32]])


def _project_rows_to_simplex(W: np.ndarray) -> np.ndarray:
    m, k = W.shape
    U = np.sort(W, axis=1)[:, ::-1]
    css = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(1, k + 1)
    cond = U - css / ind > 0.0
    rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(m), rho] / (rho + 1)
    return np.maximum(W - theta[:, None], 0.0)


def dist_to_polytope_upper(P: VPolytope, Y: np.ndarray, n_neighbors: int | None = None,
                           iters: int = 120) -> np.ndarray:
    """Upper bounds on dist(y, P): project onto the hull of nearby vertices.

    The result is a certified upper bound because the final point is an exact
    convex combination of polytope vertices.
    """
    d = P.dim
    k = n_neighbors or min(2 * d + 2, len(P.vertices))
    tree = cKDTree(P.vertices)
    _, idx = tree.query(Y, k=k)
    if k == 1:
        idx = idx[:, None]
    S = P.vertices[idx]                       # (m, k, d)
    W = np.full((len(Y), k), 1.0 / k)
    lip = np.einsum("mkd,mkd->m", S, S).max()
    step = 1.0 / max(lip, 1e-12)
    for _ in range(iters):
        resid = np.einsum("mk,mkd->md", W, S) - Y
        grad = np.einsum("mkd,md->mk", S, resid)
        W = _project_rows_to_simplex(W - step * grad)
    resid = np.einsum("mk,mkd->md", W, S) - Y
    return np.linalg.norm(resid, axis=1)


@dataclass
class HausdorffReport:
    bound: float
    max_distance: float
    num_samples: int

    @property
    def ok(self) -> bool:
        return self.max_distance <= self.bound


def hausdorff_check(P: VPolytope, spec: BodySpec, bound: float,
                    frame: AffineMap | None = None,
                    num_samples: int = 10_000) -> HausdorffReport:
    """Check the one-sided Hausdorff distance from the body's boundary to P.

    P must sit inside the body; if P lives in a transformed frame, pass the
    map so the boundary samples are carried into the same coordinates.
    """
    U = sphere_directions(spec.dim, num_samples)
    Y = spec.radial(U)[:, None] * U
    if frame is not None:
        Y = frame.apply(Y)
    dist = dist_to_polytope_upper(P, Y)
    return HausdorffReport(bound, float(dist.max()), num_samples)


@dataclass
class NikodymResult:
    value: float
    std_error: float
    num_samples: int


def nikodym_estimate(P: VPolytope, spec: BodySpec, samples: int,
                     rng=None) -> NikodymResult:
    """Monte Carlo estimate of Vol(K symm-diff P) / Vol(K).

    Uses only the analytic membership of the body; nothing is ledgered.
    P must be given in the body's own coordinates.
    """
    rng = np.random.default_rng(rng)
    rad = max(spec.enclosing_radius,
              float(np.linalg.norm(P.vertices, axis=1).max())) * 1.01
    box_vol = (2.0 * rad) ** spec.dim
    hits = 0
    total = 0
    chunk = 262144
    vol_k = spec.volume()
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        X = rng.uniform(-rad, rad, size=(n, spec.dim))
        diff = spec.contains(X) ^ P.contains(X)
        hits += int(diff.sum())
        total += n
        remaining -= n
    p_hat = hits / total
    value = p_hat * box_vol / vol_k
    se = math.sqrt(max(p_hat * (1.0 - p_hat), 1e-300) / total) * box_vol / vol_k
    return NikodymResult(value, se, total)
