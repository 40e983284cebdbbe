"""Approximate Euclidean projection onto a convex body through its membership oracle.

The projector maintains, per query point, a small set of outer halfspaces for
the body.  Each halfspace is a supporting hyperplane estimated at a boundary
point (found by bisection) whose normal comes from finite differences of the
radial function; the plane is relaxed outward so it remains valid for bodies
of bounded boundary curvature.  Projecting onto the halfspace model gives a
certified lower bound on the distance to the body via Lagrange duality, and
any oracle-verified feasible point gives an upper bound.  The pair certifies
the output: if p is feasible, y* the true projection of x and d_lb <= dist(x, K),
then ||p - y*||^2 <= ||x - p||^2 - d_lb^2.

All stages run vectorized over a batch of query points sharing one body; every
membership evaluation of every point is charged to the handle's ledger.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .oracle import ContractViolation, OracleHandle

# curvature allowance for cut relaxation; covers every analytic test body
CURV_BOUND = 8.0
PROBE_SAFETY = 8.0
CUT_SLOTS = 6
BISECT_TOL_FLOOR = 1e-13
# below this duality gap, float64 finite-difference normals cannot certify further
CERT_FLOOR = 6e-6


class ProjectionError(RuntimeError):
    """Nonconvergence; carries the best iterates and their certified bounds."""

    def __init__(self, message, best_points=None, certified_bounds=None):
        super().__init__(message)
        self.best_points = best_points
        self.certified_bounds = certified_bounds


def _bisect_radial(handle, U, lo, hi, steps):
    """Feasibility bisection of t -> membership(t * u), returning the feasible lo."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        ok = handle.membership(U * mid[:, None])
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def _boundary_toward(handle, targets, R, tol_b):
    """Radial boundary points in the directions of exterior targets.

    The origin is interior (B_d <= K), so the ray toward each target crosses
    the boundary once; the feasible end of the bisection is returned.
    """
    tn = np.linalg.norm(targets, axis=1)
    that = targets / tn[:, None]
    hi = np.minimum(tn, R * (1.0 + 1e-12))
    lo = np.full(len(targets), 1.0 - 1e-12)
    hi = np.maximum(hi, lo)
    steps = int(math.ceil(math.log2(max(float((hi - lo).max()) / tol_b, 2.0))))
    t = _bisect_radial(handle, that, lo, hi, min(steps, 80))
    return that * t[:, None]


def _tangent_frames(zhat):
    """Orthonormal bases of the tangent spaces at unit vectors, shape (m, d-1, d)."""
    m, d = zhat.shape
    sign = np.where(zhat[:, -1] >= 0.0, 1.0, -1.0)
    v = zhat.copy()
    v[:, -1] += sign
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    frames = np.empty((m, d - 1, d))
    for i in range(d - 1):
        frames[:, i, :] = -2.0 * v[:, i : i + 1] * v
        frames[:, i, i] += 1.0
    return frames


def _acquire_cuts(handle, Z, tau, tol_b, R, lip):
    """Relaxed supporting halfspaces at near-boundary feasible points Z."""
    m, d = Z.shape
    zn = np.linalg.norm(Z, axis=1)
    zhat = Z / zn[:, None]
    frames = _tangent_frames(zhat)
    theta = math.atan(tau)
    U = (zhat[:, None, :] + tau * frames) / math.sqrt(1.0 + tau * tau)
    flat_u = U.reshape(-1, d)
    zn_rep = np.repeat(zn, d - 1)
    w = 2.0 * lip * theta + (2.0 + 2.0 * R) * tol_b
    lo = np.maximum(1.0 - 1e-12, zn_rep - w)
    hi = np.minimum(R * (1.0 + 1e-12), zn_rep + w)
    hi = np.maximum(hi, lo)
    steps = int(math.ceil(math.log2(max(float((hi - lo).max()) / tol_b, 2.0))))
    t = _bisect_radial(handle, flat_u, lo, hi, steps).reshape(m, d - 1)
    g = (t - zn[:, None]) / theta
    nu = zhat - (g[:, :, None] * frames).sum(axis=1) / zn[:, None]
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    delta_cut = PROBE_SAFETY * (
        0.5 * CURV_BOUND * (R * theta) ** 2 + (2.0 + 2.0 * lip + 2.0 * R) * tol_b
    )
    offs = np.einsum("md,md->m", nu, Z) + delta_cut
    return nu, offs


_COMBO_CACHE: dict = {}


def _combos(k, d):
    if (k, d) not in _COMBO_CACHE:
        combos = []
        for size in range(1, d + 1):
            combos.extend(itertools.combinations(range(k), size))
        _COMBO_CACHE[(k, d)] = combos
    return _COMBO_CACHE[(k, d)]


def _model_project(G, h, X):
    """Exact projection of each x onto its halfspace model {y : G y <= h}.

    The cut count is tiny, so the KKT system is solved by enumerating active
    sets of size <= d; any candidate passing the dual and primal feasibility
    checks is the unique optimum of the strictly convex QP.  Returns the
    projections and their distances (a valid lower bound on dist(x, K) since
    the model contains the body).
    """
    m, k, d = G.shape
    slack0 = np.einsum("mkd,md->mk", G, X) - h
    best_y = X.copy()
    best_d2 = np.where(np.all(slack0 <= 1e-12, axis=1), 0.0, np.inf)
    for combo in _combos(k, d):
        idx = list(combo)
        s = len(idx)
        Gs = G[:, idx, :]
        rhs = slack0[:, idx]
        M = np.einsum("msd,mtd->mst", Gs, Gs)
        M = M + (1e-12 * np.trace(M, axis1=1, axis2=2).reshape(-1, 1, 1) + 1e-300) \
            * np.eye(s)
        lam = np.linalg.solve(M, rhs[..., None])[..., 0]
        ok = np.all(lam >= -1e-11, axis=1)
        y = X - np.einsum("msd,ms->md", Gs, lam)
        resid = np.einsum("mkd,md->mk", G, y) - h
        ok &= np.all(resid <= 1e-9, axis=1)
        d2 = np.einsum("md,md->m", X - y, X - y)
        better = ok & (d2 < best_d2)
        best_y[better] = y[better]
        best_d2[better] = d2[better]
    # safe fallback: deepest single violated halfspace always gives a bound
    single = np.maximum(slack0, 0.0).max(axis=1)
    none_found = ~np.isfinite(best_d2)
    if none_found.any():
        rows = np.flatnonzero(none_found)
        j = slack0[rows].argmax(axis=1)
        g = G[rows, j, :]
        best_y[rows] = X[rows] - single[rows, None] * g
        best_d2[rows] = single[rows] ** 2
    return best_y, np.sqrt(best_d2)


def project_batch(handle: OracleHandle, X, eps: float, R: float,
                  budget: int | None = None) -> np.ndarray:
    """eps-approximate projections of a batch of points onto the handle's body.

    Requires B_d <= K <= R*B_d.  Points already in K are returned unchanged
    (one query each).  Certified to ``max(eps, float-noise floor)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m, d = X.shape
    if eps <= 0:
        raise ContractViolation("projection tolerance must be positive")
    inside = handle.membership(X)
    P = X.copy()
    ext = np.flatnonzero(~np.atleast_1d(inside))
    if len(ext) == 0:
        return P
    Xe = X[ext]
    xn = np.linalg.norm(Xe, axis=1)
    dub = xn + R
    eps_eff = np.maximum(eps, CERT_FLOOR * (1.0 + 0.5 * dub))
    tau = float((eps_eff / (4.0 * CURV_BOUND * R * dub)).min())
    tol_b = max(BISECT_TOL_FLOOR, float((eps_eff * tau / (16.0 * dub)).min()))
    lip = R * math.sqrt(max(R * R - 1.0, 0.25))
    if budget is None:
        budget = int(math.ceil(40.0 * d * math.log(max(R * float(xn.max()) / eps, math.e))))

    # initial boundary point along each ray, then a first cut there
    xhat = Xe / xn[:, None]
    lo0 = np.full(len(ext), 1.0 - 1e-12)
    hi0 = np.maximum(np.minimum(xn, R), lo0)
    steps0 = int(math.ceil(math.log2(max(float((hi0 - lo0).max()) / tol_b, 2.0))))
    t0 = _bisect_radial(handle, xhat, lo0, hi0, steps0)
    p_best = xhat * t0[:, None]
    d_best = np.linalg.norm(Xe - p_best, axis=1)

    me = len(ext)
    G = np.zeros((me, CUT_SLOTS, d))
    hvec = np.ones((me, CUT_SLOTS))
    nu, off = _acquire_cuts(handle, p_best, tau, tol_b, R, lip)
    G[:, 0, :] = nu
    hvec[:, 0] = off
    slot = np.ones(me, dtype=np.int64)
    d_lb = np.zeros(me)
    done = np.zeros(me, dtype=bool)
    prev_gap_max = math.inf
    stalled = 0

    for _ in range(budget):
        act = np.flatnonzero(~done)
        yhat, dist_model = _model_project(G[act], hvec[act], Xe[act])
        d_lb[act] = np.maximum(d_lb[act], dist_model)
        gap2 = np.maximum(d_best ** 2 - d_lb ** 2, 0.0)
        done |= gap2 <= eps_eff ** 2
        if done.all():
            break
        keep = ~done[act]
        act = act[keep]
        yhat = yhat[keep]
        gap_now = float(gap2[act].max())
        stalled = stalled + 1 if gap_now > 0.999 * prev_gap_max else 0
        prev_gap_max = gap_now
        if stalled > 120:
            break
        yn = np.linalg.norm(yhat, axis=1)
        cap = xn[act] + 2.0 * R
        scale = np.minimum(1.0, cap / np.maximum(yn, 1e-300))
        yhat *= scale[:, None]
        feas = np.atleast_1d(handle.membership(yhat))
        fi = act[feas]
        if len(fi):
            dy = np.linalg.norm(Xe[fi] - yhat[feas], axis=1)
            upd = dy < d_best[fi]
            rows = fi[upd]
            p_best[rows] = yhat[feas][upd]
            d_best[rows] = dy[upd]
        ii = act[~feas]
        if len(ii):
            zn = _boundary_toward(handle, yhat[~feas], R, tol_b)
            dz = np.linalg.norm(Xe[ii] - zn, axis=1)
            upd = dz < d_best[ii]
            rows = ii[upd]
            p_best[rows] = zn[upd]
            d_best[rows] = dz[upd]
            nu, off = _acquire_cuts(handle, zn, tau, tol_b, R, lip)
            G[ii, slot[ii], :] = nu
            hvec[ii, slot[ii]] = off
            slot[ii] = (slot[ii] + 1) % CUT_SLOTS

    gap2 = np.maximum(d_best ** 2 - d_lb ** 2, 0.0)
    done |= gap2 <= eps_eff ** 2
    if not done.all():
        bad = int((~done).sum())
        full = X.copy()
        full[ext] = p_best
        raise ProjectionError(
            f"projection failed to certify {bad}/{m} points at eps={eps:g}",
            best_points=full, certified_bounds=np.sqrt(gap2))
    P[ext] = p_best
    return P


def approximate_projection(handle: OracleHandle, x, eps: float,
                           R: float | None = None) -> np.ndarray:
    """Feasible point within eps of the true projection of x onto the body."""
    if not 0.0 < eps < 1.0:
        raise ContractViolation("projection tolerance must lie in (0, 1)")
    if R is None:
        if handle.frame is not None:
            raise ContractViolation("pass R explicitly for reparameterized handles")
        R = handle.spec.enclosing_radius
    return project_batch(handle, x, eps, R)[0]


def radial_boundary_point(handle: OracleHandle, u, tol: float,
                          R: float | None = None) -> np.ndarray:
    """Point t*u with t in [rho(u) - tol, rho(u)], rho the radial function.

    Uses at most ceil(log2(R / tol)) + 1 queries: one to check the unit point,
    the rest for bisection on [1, R].
    """
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ContractViolation("direction must be a unit vector")
    if R is None:
        if handle.frame is not None:
            raise ContractViolation("pass R explicitly for reparameterized handles")
        R = handle.spec.enclosing_radius
    if not handle.membership(u):
        raise ContractViolation("inner-ball precondition violated: u is not in the body")
    if R <= 1.0 + tol:
        return u * 1.0
    steps = int(math.ceil(math.log2((R - 1.0) / tol)))
    steps = max(steps, 0)
    t = _bisect_radial(handle, u[None, :], np.array([1.0]), np.array([R]), steps)
    return u * t[0]
