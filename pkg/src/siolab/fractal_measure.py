"""Level measures on the generation-``m`` core balls.

``mu^m`` has density ``1 / (kappa_d r_m^2)`` on every level-``m`` core ball, so a
leaf carries mass ``r_m^{d-2}`` and the total mass is one.  Mass queries walk
the hierarchy level by level with numpy arrays: a node whose dilated ball is
inside the query ball contributes its whole mass, one that misses it
contributes nothing, and leaves cut by the query sphere use the exact
ball-ball intersection volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.special import betainc

from .cantor_geometry import ConstructionSchedule, locate_branch, node_from_path
from .sphere_kernel import ball_volume

__all__ = [
    "LevelMeasure",
    "DensityProfile",
    "GrowthScan",
    "DipRecord",
    "total_mass",
    "exact_total_mass",
    "sampled_total_mass",
    "lens_volume",
    "ball_mass",
    "ball_mass_many",
    "growth_scan",
    "sample_leaves",
    "sample_points",
    "density_profile",
    "density_dip",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class LevelMeasure:
    """``mu^m``: normalised uniform density on the level-``m`` core balls."""

    schedule: ConstructionSchedule
    level: int

    def __post_init__(self):
        if not 0 <= self.level <= self.schedule.depth:
            raise ValueError(f"level {self.level} outside 0..{self.schedule.depth}")

    @property
    def d(self) -> int:
        return self.schedule.d

    @property
    def leaf_radius(self) -> float:
        return self.schedule.radii[self.level]

    @property
    def density(self) -> float:
        return 1.0 / (self.schedule.kappa * self.leaf_radius**2)

    @property
    def leaf_mass(self) -> float:
        return self.schedule.node_mass(self.level)

    @property
    def leaf_count(self) -> int:
        return self.schedule.node_count(self.level)

    def node_mass(self, k: int) -> float:
        """Mass of any level-``k`` node (``k <= m``)."""
        if k > self.level:
            raise ValueError("node level below the measure level")
        return self.schedule.node_mass(k)

    def to_dict(self) -> dict:
        return {"schedule": self.schedule.to_dict(), "level": self.level}


# ---------------------------------------------------------------------------
# mass


def exact_total_mass(mu: LevelMeasure) -> Fraction:
    """Leaf count times leaf mass in exact rational arithmetic."""
    return mu.leaf_count * mu.schedule.exact_node_mass(mu.level)


def total_mass(mu: LevelMeasure) -> float:
    return float(exact_total_mass(mu))


def sampled_total_mass(mu: LevelMeasure) -> float:
    """Total mass recomputed in floating point, level by level.

    At every level ``k < m`` one node's mass is summed from its children
    (``n_{k+1}`` terms of ``r_{k+1}^{d-2}``) and scaled by the level-``k``
    node count; the mean over levels should equal one to rounding.
    """
    s = mu.schedule
    estimates = [
        s.node_count(k) * math.fsum([s.node_mass(k + 1)] * s.child_counts[k + 1]) for k in range(mu.level)
    ]
    if not estimates:
        return mu.leaf_count * mu.leaf_mass
    return float(np.mean(estimates))


def _cap_volume(a, h, d):
    """Volume of the cap of height ``h`` in ``[0, 2a]`` cut from a ball of radius ``a``."""
    a = np.asarray(a, dtype=float)
    h = np.clip(np.asarray(h, dtype=float), 0.0, 2.0 * a)
    full = ball_volume(d) * a**d
    small = np.minimum(h, 2.0 * a - h)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(a > 0, (2.0 * a * small - small * small) / (a * a), 0.0)
    half_cap = 0.5 * full * betainc((d + 1) / 2.0, 0.5, np.clip(z, 0.0, 1.0))
    return np.where(h <= a, half_cap, full - half_cap)


def lens_volume(a, b, dist, d: int):
    """Volume of ``B(p, a) ∩ B(q, b)`` with ``|p - q| = dist`` in ``R^d``.

    Sum of two caps cut by the radical hyperplane; the regularised incomplete
    beta function gives cap volumes in any dimension.
    """
    a, b, D = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, dist)))
    out = np.zeros(a.shape)
    kappa = ball_volume(d)
    inside = D <= np.abs(a - b)
    out = np.where(inside, kappa * np.minimum(a, b) ** d, out)
    cut = (~inside) & (D < a + b)
    if np.any(cut):
        Dc, ac, bc = D[cut], a[cut], b[cut]
        x = (Dc * Dc + ac * ac - bc * bc) / (2.0 * Dc)
        out[cut] = _cap_volume(ac, ac - x, d) + _cap_volume(bc, bc - (Dc - x), d)
    return out if out.ndim else float(out)


@dataclass
class _MassResult:
    mass: np.ndarray
    error: np.ndarray
    visited: int


def _ball_mass_batch(mu, centers, radii, max_frontier):
    s, m, d = mu.schedule, mu.level, mu.d
    nq = len(centers)
    mass = np.zeros(nq)
    err = np.zeros(nq)
    visited = 0
    q = np.arange(nq)
    nodes = np.zeros((nq, d))
    for k in range(m + 1):
        rho = s.dilated_radii[k]
        dist = np.linalg.norm(nodes - centers[q], axis=1)
        R = radii[q]
        visited += len(q)
        if k == m:
            r = s.radii[m]
            full = dist + r <= R
            cut = ~full & (dist < R + r)
            np.add.at(mass, q[full], mu.leaf_mass)
            if np.any(cut):
                vol = lens_volume(r, R[cut], dist[cut], d) * mu.density
                np.add.at(mass, q[cut], vol)
                np.add.at(err, q[cut], 8 * _EPS * mu.leaf_mass)
            break
        full = dist + rho <= R
        np.add.at(mass, q[full], s.node_mass(k))
        keep = ~full & (dist < R + rho)
        q, nodes = q[keep], nodes[keep]
        offs = s.child_offsets(k + 1)
        if len(q) * len(offs) > max_frontier:
            raise MemoryError(
                f"ball mass traversal needs {len(q) * len(offs)} level-{k + 1} nodes, above the budget {max_frontier}"
            )
        nodes = (nodes[:, None, :] + offs[None, :, :]).reshape(-1, d)
        q = np.repeat(q, len(offs))
    return _MassResult(mass, err, visited)


def ball_mass_many(
    mu: LevelMeasure, centers, radii, max_frontier: int = 4_000_000, chunk: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """``mu^m(B(c_i, r_i))`` for many balls; returns (masses, rounding-error bounds)."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    if np.any(radii <= 0):
        raise ValueError("radius must be positive")
    out_m = np.empty(len(centers))
    out_e = np.empty(len(centers))
    i = 0
    step = chunk
    while i < len(centers):
        j = min(i + step, len(centers))
        try:
            res = _ball_mass_batch(mu, centers[i:j], radii[i:j], max_frontier)
        except MemoryError:
            if j - i == 1:
                raise
            step = max(1, (j - i) // 4)
            continue
        out_m[i:j], out_e[i:j] = res.mass, res.error
        i = j
        step = chunk
    return out_m, out_e


def ball_mass(mu: LevelMeasure, center, radius: float, tolerance: float = 1e-10) -> float:
    """``mu^m(B(center, radius))`` by lazy traversal and exact lens volumes.

    Raises if the accumulated rounding bound exceeds ``tolerance`` or the
    traversal exceeds its node budget.
    """
    m, e = ball_mass_many(mu, np.asarray(center, dtype=float)[None, :], np.array([float(radius)]))
    if e[0] > tolerance:
        raise ArithmeticError(f"mass error bound {e[0]:.3g} exceeds tolerance {tolerance:.3g}")
    return float(m[0])


# ---------------------------------------------------------------------------
# sampling


def sample_leaves(mu: LevelMeasure, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Leaf paths (n, m) and points (n, d) distributed according to ``mu^m``.

    Children are chosen uniformly at every level, then a uniform point is
    drawn in the leaf core ball.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    s, d = mu.schedule, mu.d
    rng = np.random.default_rng(seed)
    paths = np.empty((n, mu.level), dtype=np.int64)
    centers = np.zeros((n, d))
    for k in range(1, mu.level + 1):
        idx = rng.integers(0, s.child_counts[k], size=n)
        paths[:, k - 1] = idx
        centers = centers + s.child_offsets(k)[idx]
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = mu.leaf_radius * rng.random(n) ** (1.0 / d)
    return paths, centers + g * rad[:, None]


def sample_points(mu: LevelMeasure, n: int, seed: int) -> np.ndarray:
    return sample_leaves(mu, n, seed)[1]


# ---------------------------------------------------------------------------
# growth and density


@dataclass
class GrowthScan:
    constant: float
    best_center: list
    best_radius: float
    n_trials: int
    level: int
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "best_center": self.best_center,
            "best_radius": self.best_radius,
            "n_trials": self.n_trials,
            "level": self.level,
        }


def growth_scan(
    mu: LevelMeasure, n_trials: int, seed: int, node_fraction: float = 0.1, keep_records: bool = False
) -> GrowthScan:
    """Empirical ``sup mu(B(x, r)) / r^{d-2}`` over seeded balls.

    Of the random balls, half the centres are ``mu``-samples and half are
    uniform in the root dilated ball, with radii log-uniform in ``[r_m, 2]``.
    A further ``node_fraction`` of the trials is centred at ancestors of
    sampled leaves with radius ``r_k``, ``rho_k`` or ``2 rho_k``: the balls
    on which the mass law pins the ratio near one.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    d, s = mu.d, mu.schedule
    rng = np.random.default_rng(seed)
    n_node = int(round(node_fraction * n_trials))
    n_rand = n_trials - n_node
    n_mu = n_rand // 2 + n_rand % 2
    n_un = n_rand - n_mu
    pts_mu = sample_points(mu, n_mu, int(rng.integers(2**31))) if n_mu else np.zeros((0, d))
    g = rng.standard_normal((n_un, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    pts_un = g * (s.dilated_radii[0] * rng.random(n_un) ** (1.0 / d))[:, None]
    lo, hi = math.log(mu.leaf_radius), math.log(2.0)
    radii = [np.exp(rng.uniform(lo, hi, size=n_rand))]
    centers = [pts_mu, pts_un]
    if n_node:
        paths, _ = sample_leaves(mu, n_node, int(rng.integers(2**31)))
        lev = rng.integers(0, mu.level + 1, size=n_node)
        kind = rng.integers(0, 3, size=n_node)
        c = np.zeros((n_node, d))
        for j in range(1, mu.level + 1):
            step = s.child_offsets(j)[paths[:, j - 1]]
            c = c + np.where((lev >= j)[:, None], step, 0.0)
        core = np.asarray(s.radii)[lev]
        dil = np.asarray(s.dilated_radii)[lev]
        centers.append(c)
        radii.append(np.choose(kind, [core, dil, 2.0 * dil]))
    centers = np.concatenate(centers)
    radii = np.concatenate(radii)
    masses, _ = ball_mass_many(mu, centers, radii)
    ratios = masses / radii ** (d - 2)
    i = int(np.argmax(ratios))
    recs = []
    if keep_records:
        recs = [{"radius": float(r), "ratio": float(q)} for r, q in zip(radii, ratios)]
    return GrowthScan(float(ratios[i]), centers[i].tolist(), float(radii[i]), n_trials, mu.level, recs)


@dataclass
class DensityProfile:
    base_point: list
    scales: list
    ratios: list

    def rows(self) -> list:
        return list(zip(self.scales, self.ratios))

    def to_csv_rows(self) -> list:
        return [["scale", "ratio"]] + [[repr(float(a)), repr(float(b))] for a, b in self.rows()]


def density_profile(mu: LevelMeasure, x, scales: Sequence[float]) -> DensityProfile:
    """``mu(B(x, r)) / r^{d-2}`` at each scale."""
    x = np.asarray(x, dtype=float)
    if len(locate_branch(x, mu.schedule, 0)) == 0 or np.linalg.norm(x) > mu.schedule.dilated_radii[0]:
        raise ValueError("base point is outside the root dilated ball")
    sc = np.asarray(list(scales), dtype=float)
    masses, _ = ball_mass_many(mu, np.repeat(x[None, :], len(sc), axis=0), sc)
    return DensityProfile(x.tolist(), sc.tolist(), (masses / sc ** (mu.d - 2)).tolist())


@dataclass
class DipRecord:
    level: int
    node_ratio: float
    dip_ratio: float
    dip_scale: float

    @property
    def relative(self) -> float:
        return self.dip_ratio / self.node_ratio


def density_dip(mu: LevelMeasure, path: Sequence[int], x, n_scales: int = 24) -> list:
    """Density dip of a ``mu``-sampled point ``x`` with leaf path ``path``, per level.

    For each level ``k = 1..m``: the node-scale ratio is
    ``mu(B(c_k, rho_k)) / rho_k^{d-2}`` at the centre of ``x``'s level-``k``
    node, and the dip is the minimum of ``mu(B(x, r)) / r^{d-2}`` over a
    log-spaced ladder ``r in [rho_k, rho_{k-1}]``.
    """
    s, d = mu.schedule, mu.d
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(1, mu.level + 1):
        node = node_from_path(s, tuple(path[:k]))
        rho = s.dilated_radii[k]
        node_ratio = ball_mass(mu, node.center_array, rho, tolerance=1e-6) / rho ** (d - 2)
        ladder = np.geomspace(rho, s.dilated_radii[k - 1], n_scales)
        prof = density_profile(mu, x, ladder)
        j = int(np.argmin(prof.ratios))
        out.append(DipRecord(k, node_ratio, prof.ratios[j], float(ladder[j])))
    return out
