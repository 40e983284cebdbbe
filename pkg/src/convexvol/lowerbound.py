"""Hard instances for volume estimation: cap bodies indexed by bitstrings.

An instance packs disjoint spherical caps on the unit sphere through a net
with separation twice the cap radius; the body keeps cap j exactly when bit
j is set.  Membership then reveals at most one bit per query, which makes
volume estimation at matching precision as hard as Hamming-weight estimation.
This module holds the instance generator, the bit-oracle algorithms it
reduces to, and the reduction itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Net, ball_volume, build_delta_net, cap_volume
from .oracle import ContractViolation, QueryLedger
from .volume import qae_distribution


@dataclass
class BitOracle:
    """Ledgered access to a bitstring; every bit read charges one bit query."""

    bits: np.ndarray
    ledger: QueryLedger = field(default_factory=QueryLedger)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    def __len__(self):
        return len(self.bits)

    def read(self, j: int) -> int:
        self.ledger.charge_bits(1)
        return int(self.bits[j])

    def read_many(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        self.ledger.charge_bits(len(idx))
        return self.bits[idx]

    def weight_simulated(self) -> int:
        """Hamming weight computed by the simulator (not charged as bit queries)."""
        self.ledger.charge_simulator(len(self.bits))
        return int(self.bits.sum())


@dataclass
class CapBodyInstance:
    """Bitstring-indexed body K_x: unit ball minus the caps with unset bits."""

    dim: int
    net: Net
    cap_radius: float
    bits: np.ndarray
    cap_vol: float
    base_volume: float

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if len(self.bits) != len(self.net.points):
            raise ContractViolation("bitstring length must equal the net size")

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def height_threshold(self) -> float:
        return 1.0 - self.cap_radius ** 2 / 2.0

    def volume(self) -> float:
        return self.base_volume + int(self.bits.sum()) * self.cap_vol

    def _cap_hits(self, pts):
        """Index of the triggered cap per point (-1 outside every cap).

        Caps are disjoint inside the ball, so at most one threshold fires;
        the maximizing net direction decides which.
        """
        dots = pts @ self.net.points.T
        j = np.argmax(dots, axis=1)
        fired = dots[np.arange(len(pts)), j] > self.height_threshold
        return np.where(fired, j, -1)

    def contains_free(self, pts) -> np.ndarray:
        """Analytic membership honoring the bits; no ledger involved."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = np.einsum("ij,ij->i", pts, pts) <= 1.0
        out = inside.copy()
        hits = np.full(len(pts), -1, dtype=np.int64)
        if inside.any():
            hits[inside] = self._cap_hits(pts[inside])
        capped = hits >= 0
        out[capped] = self.bits[hits[capped]].astype(bool)
        return out

    def query_batch(self, pts, ledger: QueryLedger) -> np.ndarray:
        """Membership with bit accounting: one bit query per in-cap point."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = np.einsum("ij,ij->i", pts, pts) <= 1.0
        out = inside.copy()
        hits = np.full(len(pts), -1, dtype=np.int64)
        if inside.any():
            hits[inside] = self._cap_hits(pts[inside])
        capped = hits >= 0
        if capped.any():
            ledger.charge_bits(int(capped.sum()))
            out[capped] = self.bits[hits[capped]].astype(bool)
        return out

    def radial(self, u):
        """Boundary distance along unit direction(s): 1 inside present caps,
        the cap's cutting plane across absent ones."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        dots = u @ self.net.points.T
        j = np.argmax(dots, axis=1)
        best = dots[np.arange(len(u)), j]
        thr = self.height_threshold
        r = np.ones(len(u))
        in_slab = best > thr
        absent = in_slab & (self.bits[j] == 0)
        r[absent] = thr / best[absent]
        return r

    def to_manifest(self) -> dict:
        return {
            "dim": self.dim,
            "delta": self.net.delta,
            "n": self.n,
            "cap_radius": self.cap_radius,
            "bits": np.packbits(self.bits).tobytes().hex(),
            "base_volume": self.base_volume,
            "cap_volume": self.cap_vol,
        }

    @classmethod
    def from_manifest(cls, obj) -> "CapBodyInstance":
        net = build_delta_net(int(obj["dim"]), float(obj["delta"]), 1.0)
        if len(net.points) != int(obj["n"]):
            raise ContractViolation("net regeneration mismatch; manifest is stale")
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(obj["bits"]),
                                           dtype=np.uint8))[: int(obj["n"])]
        return cls(int(obj["dim"]), net, float(obj["cap_radius"]), bits,
                   float(obj["cap_volume"]), float(obj["base_volume"]))


def _bits_from_source(source, n: int, seed=None) -> np.ndarray:
    if isinstance(source, str):
        if source == "random":
            rng = np.random.default_rng(seed)
            return rng.integers(0, 2, size=n).astype(np.uint8)
        if source == "balanced":
            bits = np.zeros(n, dtype=np.uint8)
            bits[: n // 2] = 1
            rng = np.random.default_rng(seed)
            rng.shuffle(bits)
            return bits
        raise ContractViolation(f"unknown bits source {source!r}")
    bits = np.asarray(source, dtype=np.uint8)
    if bits.shape != (n,):
        raise ContractViolation(f"explicit bitstring must have length {n}")
    return bits


def make_hard_instance(d: int, eps: float, bits_source="random",
                       seed=None) -> CapBodyInstance:
    """Smallest-delta cap packing whose total cap volume reaches 8 eps Gamma_d.

    Bisects on delta (rebuilding the net at each probe, since the net size
    jumps discretely) to relative tolerance 1e-3.
    """
    gamma = ball_volume(d)
    target = 8.0 * eps * gamma

    def total(delta):
        net = build_delta_net(d, delta, 1.0)
        return len(net.points) * cap_volume(d, delta / 2.0), net

    hi = 2.0
    v_hi, net_hi = total(hi)
    if v_hi < target:
        raise ContractViolation(
            f"eps={eps:g} too large: max packable cap volume {v_hi:.4g} < {target:.4g}")
    lo = 1e-4
    v_lo, _ = total(lo)
    if v_lo >= target:
        hi, net_hi = lo, build_delta_net(d, lo, 1.0)
    else:
        while (hi - lo) / hi > 1e-3:
            mid = 0.5 * (lo + hi)
            v_mid, net_mid = total(mid)
            if v_mid >= target:
                hi, net_hi = mid, net_mid
            else:
                lo = mid
    net = net_hi
    n = len(net.points)
    r = net.delta / 2.0
    cvol = cap_volume(d, r)
    bits = _bits_from_source(bits_source, n, seed)
    base = gamma - n * cvol
    return CapBodyInstance(d, net, r, bits, cvol, base)


def capbody_membership(inst: CapBodyInstance, p, bit_oracle: BitOracle):
    """Membership of K_x with the bit lookups routed through a bit oracle."""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    res = inst.query_batch(np.atleast_2d(p), bit_oracle.ledger)
    return bool(res[0]) if single else res


def capbody_volume(inst: CapBodyInstance) -> float:
    return inst.volume()


# ---------------------------------------------------------------------------
# bitstring algorithms


def recover_bitstring_deterministic(oracle: BitOracle, n: int) -> np.ndarray:
    """Read every bit; exactly n queries, exact answer."""
    return oracle.read_many(np.arange(n)).copy()


def hamming_weight_randomized(oracle: BitOracle, n: int, k: int, seed=None) -> int:
    """Sampling estimator: min(ceil(3 (n/k)^2), n) bit queries,
    P[|w - |x|| > k] <= 1/3."""
    if not 1 <= k <= n / 4:
        raise ContractViolation("need 1 <= k <= n/4")
    m = int(math.ceil(3.0 * (n / k) ** 2))
    if m >= n:
        return int(oracle.read_many(np.arange(n)).sum())
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=m)
    frac = float(oracle.read_many(idx).mean())
    return int(round(n * frac))


def hamming_weight_qae(oracle: BitOracle, n: int, k: int, seed=None) -> int:
    """Simulated quantum counting: register 2*ceil(pi n / k), 2M+1 model
    queries, success probability at least 8/pi^2."""
    if not 1 <= k <= n / 4:
        raise ContractViolation("need 1 <= k <= n/4")
    a = oracle.weight_simulated() / n
    M = 2 * int(math.ceil(math.pi * n / k))
    oracle.ledger.charge_quantum(2 * M + 1)
    rng = np.random.default_rng(seed)
    a_hat = float(qae_distribution(a, M).sample(rng))
    return int(round(n * a_hat))


def reduction_volume_to_hamming(inst: CapBodyInstance, v_est: float) -> int:
    """Recover the Hamming weight from a volume estimate of K_x."""
    w = int(round((v_est - inst.base_volume) / inst.cap_vol))
    return min(max(w, 0), inst.n)


def capbody_oracle(inst: CapBodyInstance, ledger: QueryLedger | None = None):
    """Ledgered oracle for the instance, rescaled so the unit ball fits inside.

    K_x only contains (1 - r^2/2) B_d, so the returned handle represents
    K_x / (1 - r^2/2).  Returns (handle, R, volume_scale): volume estimates of
    the handle's body times volume_scale give Vol(K_x).
    """
    from .geometry import AffineMap
    from .oracle import CapBody, OracleHandle, transformed_oracle

    ir = inst.height_threshold
    base = OracleHandle(CapBody(inst), ledger)
    L = AffineMap(np.eye(inst.dim) / ir, np.zeros(inst.dim))
    return transformed_oracle(base, L), 1.0 / ir, ir ** inst.dim
