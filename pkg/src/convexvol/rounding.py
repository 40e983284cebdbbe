"""Put a convex body into well-rounded position using only membership queries.

The map comes from a coarse kernel of the body: its vertices determine a
minimum-volume enclosing ellipsoid E, and the affine map sending a suitable
shrink of E to the unit ball places the body between B_d and R_out * B_d.
The shrink factor is searched downward from the John bound d*(1+slack) and
every claim about the output is verified by probing through the oracle, so
the returned R_out is an empirically certified sandwich radius.  The query
count depends on the input radius R but never on any downstream precision.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import AffineMap, mvee, sphere_directions
from .oracle import OracleHandle, transformed_oracle
from .projection import _bisect_radial

JOHN_SLACK = 0.05
ALPHA_PAD = 1.02
R_OUT_PAD = 1.05
N_INNER_PROBES = 96
N_RADIAL_PROBES = 128


class RoundingError(RuntimeError):
    """Sandwich verification failed; carries the violating direction."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


def _inner_ok(handle, center, minv, alpha, dirs):
    pts = center + (dirs @ minv.T) / alpha
    return bool(np.all(handle.membership(pts)))


def round_body(handle: OracleHandle, R: float, eps0: float = 0.25):
    """Affine map L with B_d <= L(K) <= R_out * B_d, R_out <= d(d+1)^2.

    Requires B_d <= K <= R * B_d.  Makes O(1) queries in any downstream
    tolerance; the dependence on R enters only through the coarse kernel.
    """
    from .kernel import kernel_rounded

    d = handle.dim
    r_cap = d * (d + 1) ** 2
    last_exc = None
    for attempt_eps in (eps0, eps0 / 2.0):
        coarse = kernel_rounded(handle, d, attempt_eps, R)
        center, shape = mvee(coarse.vertices)
        w, Q = np.linalg.eigh(shape)
        msqrt = (Q * np.sqrt(w)) @ Q.T
        minv = (Q / np.sqrt(w)) @ Q.T

        # smallest shrink alpha with the shrunk ellipsoid probe-verified inside K
        dirs = sphere_directions(d, N_INNER_PROBES)
        alpha_hi = d * (1.0 + JOHN_SLACK)
        alpha = 1.0 + JOHN_SLACK
        while alpha < alpha_hi and not _inner_ok(handle, center, minv, alpha, dirs):
            alpha *= 1.25
        alpha = min(alpha, alpha_hi)
        if not _inner_ok(handle, center, minv, alpha, dirs):
            last_exc = RoundingError("no inner shrink of the enclosing ellipsoid fits")
            continue
        lo = alpha / 1.25
        for _ in range(4):
            mid = math.sqrt(lo * alpha)
            if _inner_ok(handle, center, minv, mid, dirs):
                alpha = mid
            else:
                lo = mid
        alpha *= ALPHA_PAD

        L = AffineMap(alpha * msqrt, -alpha * (msqrt @ center))
        rounded = transformed_oracle(handle, L)

        # measure the outer radius by radial probing of L(K)
        probe_dirs = sphere_directions(d, N_RADIAL_PROBES, seed=3)
        sigma_max = alpha * float(np.sqrt(w.max()))
        r_ub = sigma_max * (R + float(np.linalg.norm(center))) * 1.01
        lo_t = np.full(N_RADIAL_PROBES, 1.0 - 1e-12)
        hi_t = np.full(N_RADIAL_PROBES, max(r_ub, 1.0))
        steps = int(math.ceil(math.log2(max(r_ub / 1e-3, 2.0))))
        t = _bisect_radial(rounded, probe_dirs, lo_t, hi_t, steps)
        r_out = float(t.max()) * R_OUT_PAD + 1e-3

        # verify both containments on fresh probes
        check_dirs = sphere_directions(d, N_INNER_PROBES, seed=11)
        inner_pts = check_dirs * (1.0 - 1e-9)
        inner_ok = np.atleast_1d(rounded.membership(inner_pts))
        if not inner_ok.all():
            bad = check_dirs[int(np.argmin(inner_ok))]
            last_exc = RoundingError("unit ball escaped the rounded body", bad)
            continue
        if r_out > r_cap:
            bad = probe_dirs[int(np.argmax(t))]
            last_exc = RoundingError(
                f"outer radius {r_out:.3f} exceeds d(d+1)^2 = {r_cap}", bad)
            continue
        return L, r_out
    raise last_exc
