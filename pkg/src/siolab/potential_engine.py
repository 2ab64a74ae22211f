"""Potentials of the level measures and of uniform balls.

The potential of ``mu^m`` at ``x`` is a sum over level-``m`` leaves of uniform
ball integrals.  ``potential_direct`` integrates every leaf; the treecode
replaces a far node by the uniform density of the same mass on its core ball
and pays for it with an explicit bound built from the kernel's sup and Hoelder
constants.  Truncated and annular integrals run the same traversal with the
ball integrals cut by a shell about the evaluation point.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._ball_quadrature import integrate_balls, monte_carlo_ball
from .cantor_geometry import ConstructionSchedule
from .fractal_measure import LevelMeasure
from .sphere_kernel import MomentMatrix, SphericalKernel, ball_volume, eval_kernel

__all__ = [
    "QuadratureSpec",
    "TreecodeConfig",
    "PotentialEstimate",
    "ball_lebesgue_integral",
    "ball_integral_estimate",
    "reflectionless_closed_form",
    "potential_direct",
    "potential_treecode",
    "truncated_sio",
    "annulus_integral",
    "annulus_uniform_oracle",
    "uniform_node_annulus",
    "kernel_deviation_bound",
    "nearest_branch",
]


@dataclass(frozen=True)
class QuadratureSpec:
    """Accuracy target for single ball integrals.

    ``max_depth`` bounds the number of resolution doublings before the Monte
    Carlo fallback (``mc_fallback_samples`` points, seeded by ``seed``).
    """

    tolerance: float = 1e-9
    max_depth: int = 4
    mc_fallback_samples: int = 400_000
    seed: int = 0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class TreecodeConfig:
    """Far-field rule: a level-``k`` node is replaced when ``dist(x, cube) >= eta * s_k``.

    ``floor`` is the deepest level traversed (default: the measure level); an
    inadmissible node at a floor above the leaves is an error.  ``safety``
    multiplies the kernel constants in the bound.

    ``bound="holder"`` charges each replaced node of mass ``M`` the a priori
    ``M * (dev(rho_dilated) + dev(r_core))``.  ``bound="refined"`` also
    compares the surrogate with point masses at the node's children,
    ``|P - V| + sum_i (M/n) dev(rho_child, |x - c_i|)``, and keeps the smaller
    of the two; both are rigorous given the kernel constants.
    """

    eta: float = 0.125
    floor: Optional[int] = None
    safety: float = 1.0
    bound: str = "refined"

    def __post_init__(self):
        if self.eta < 0.125:
            raise ValueError("eta must be at least 1/8")
        if self.safety < 1.0:
            raise ValueError("safety factor must be at least 1")
        if self.bound not in ("holder", "refined"):
            raise ValueError("bound must be 'holder' or 'refined'")


@dataclass
class PotentialEstimate:
    value: float
    error_bound: float
    kernel_evals: int
    breakdown: dict = field(default_factory=dict)
    breakdown_error: dict = field(default_factory=dict)
    statistical: bool = False
    n_surrogates: int = 0
    n_leaves: int = 0
    surrogate_bound: float = 0.0
    quadrature_error: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# uniform balls


def ball_integral_estimate(
    kernel: SphericalKernel,
    center,
    radius: float,
    x,
    spec: Optional[QuadratureSpec] = None,
    inner: float = 0.0,
    outer: float = math.inf,
) -> PotentialEstimate:
    """``int_{B(center, radius)} K(x - y) dy`` restricted to ``inner < |x - y| <= outer``.

    Resolution doubles until the coarse/fine difference is below
    ``spec.tolerance``; past ``spec.max_depth`` doublings a Monte Carlo
    estimate is returned with ``statistical=True`` and three standard errors
    as its bound.
    """
    spec = spec or QuadratureSpec()
    c = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not 0.0 <= inner < outer:
        raise ValueError("need 0 <= inner < outer")
    evals = 0
    for boost in range(spec.max_depth + 1):
        v, e, n = integrate_balls(kernel, x, c[None, :], np.array([radius]), inner, outer, boost=boost)
        evals += n
        if e[0] <= spec.tolerance:
            return PotentialEstimate(float(v[0]), float(e[0]), evals, quadrature_error=float(e[0]))
    mc, se, n = monte_carlo_ball(kernel, x, c, radius, inner, outer, spec.mc_fallback_samples, spec.seed)
    return PotentialEstimate(mc, 3 * se, evals + n, statistical=True, quadrature_error=3 * se)


def ball_lebesgue_integral(
    kernel: SphericalKernel, center, radius: float, x, spec: Optional[QuadratureSpec] = None
) -> float:
    """``int_{B(center, radius)} K(x - y) dm_d(y)``; ``x`` may lie inside the ball."""
    return ball_integral_estimate(kernel, center, radius, x, spec).value


def reflectionless_closed_form(M: MomentMatrix, x, center=None, radius: float = 1.0) -> float:
    """Ball integral of an even mean-zero kernel at a point inside the ball.

    For ``|x - c| <= R`` the integral of ``K(x - y)`` over ``B(c, R)`` equals
    ``(x - c)^T M (x - c)``, independent of ``R``; it vanishes identically
    exactly when all second moments do.
    """
    x = np.asarray(x, dtype=float)
    c = np.zeros_like(x) if center is None else np.asarray(center, dtype=float)
    u = x - c
    if np.linalg.norm(u) > radius * (1 + 1e-12):
        raise ValueError("closed form holds only inside the ball")
    return M.quadratic_form(u)


def annulus_uniform_oracle(
    kernel: SphericalKernel,
    z_rel,
    inner_rel: float,
    outer_rel: float,
    spec: Optional[QuadratureSpec] = None,
) -> float:
    """``int_{B(0,1) ∩ {inner < |z - y| <= outer}} K(z - y) dy`` for ``z`` in the unit ball."""
    z = np.asarray(z_rel, dtype=float)
    if np.linalg.norm(z) > 1.0:
        raise ValueError("z_rel must lie in the unit ball")
    if not 0 < inner_rel < outer_rel:
        raise ValueError("need 0 < inner < outer")
    return ball_integral_estimate(kernel, np.zeros(kernel.d), 1.0, z, spec, inner_rel, outer_rel).value


def uniform_node_annulus(
    kernel: SphericalKernel, schedule: ConstructionSchedule, level: int, center, z, inner: float, outer: float,
    spec: Optional[QuadratureSpec] = None,
) -> PotentialEstimate:
    """Annular integral about ``z`` of the uniform density of a level-``level`` node.

    Density ``1 / (kappa r_k^2)`` on ``B(center, r_k)``: the mass-matched
    Lebesgue surrogate of the node.
    """
    r = schedule.radii[level]
    est = ball_integral_estimate(kernel, center, r, z, spec, inner, outer)
    w = 1.0 / (schedule.kappa * r * r)
    return PotentialEstimate(est.value * w, est.error_bound * w, est.kernel_evals, statistical=est.statistical)


# ---------------------------------------------------------------------------
# far-field bound


def kernel_deviation_bound(sup: float, holder: float, alpha: float, m: int, rho, dist):
    """Upper bound for ``|K(x - y) - K(x - c)|`` over ``|y - c| <= rho``, ``|x - c| = dist > rho``.

    Splits ``K = omega(z/|z|) |z|^{-m}``: the angular change is at most
    ``min(2, 2 rho / dist)`` (chordal), the radial change is controlled by
    convexity of ``r^{-m}``.
    """
    rho = np.asarray(rho, dtype=float)
    dist = np.asarray(dist, dtype=float)
    near = dist - rho
    ang = holder * np.minimum(2.0, 2.0 * rho / dist) ** alpha * near ** (-m)
    rad = sup * (near ** (-m) - dist ** (-m))
    return ang + rad


# ---------------------------------------------------------------------------
# traversal


def nearest_branch(schedule: ConstructionSchedule, x, depth: int) -> tuple:
    """Child-index path obtained by descending to the child centre nearest ``x``."""
    x = np.asarray(x, dtype=float)
    c = np.zeros(schedule.d)
    path = []
    for k in range(1, depth + 1):
        cand = c + schedule.child_offsets(k)
        i = int(np.argmin(np.linalg.norm(cand - x, axis=1)))
        path.append(i)
        c = cand[i]
    return tuple(path)


def _cube_distance(x, centers, side):
    gap = np.maximum(np.abs(centers - x) - side / 2.0, 0.0)
    return np.linalg.norm(gap, axis=1)


def _traverse(
    kernel: SphericalKernel,
    mu: LevelMeasure,
    x: np.ndarray,
    cfg: Optional[TreecodeConfig],
    inner: float,
    outer: float,
    branch: tuple,
    exclude: Optional[tuple],
    allow_support: bool,
) -> PotentialEstimate:
    s, d, m = mu.schedule, mu.d, mu.level
    floor = m if cfg is None or cfg.floor is None else min(cfg.floor, m)
    sup, hol = kernel.bounds(1.0 if cfg is None else cfg.safety)
    hom = kernel.homogeneity

    # ball jobs: centre, radius, density, group
    job_c, job_r, job_w, job_g = [], [], [], []
    sur_jobs = []  # (first job index, count, holder bound, point-mass value, child deviation)
    n_jobs = 0
    extra_evals = 0
    n_sur = n_leaf = 0

    centers = np.zeros((1, d))
    on_branch = np.ones(1, dtype=bool)
    on_excl = np.ones(1, dtype=bool) if exclude is not None else np.zeros(1, dtype=bool)
    group = np.full(1, -1 if branch else 0)  # -1 on branch above its end, 0 = A1, k = level_k
    if not branch:
        on_branch[:] = False

    for k in range(floor + 1):
        if exclude is not None and k == len(exclude):
            keep = ~on_excl
            centers, on_branch, on_excl, group = centers[keep], on_branch[keep], on_excl[keep], group[keep]
            on_excl[:] = False
        if k == len(branch):
            group = np.where(on_branch, 0, group)
            on_branch[:] = False
        if not len(centers):
            break
        rho = s.dilated_radii[k]
        r_core = s.radii[k]
        D = np.linalg.norm(centers - x, axis=1)
        # nodes entirely outside the shell carry no mass there
        alive = (D + rho > inner) & (D - rho <= outer)
        centers, on_branch, on_excl, group, D = centers[alive], on_branch[alive], on_excl[alive], group[alive], D[alive]
        if k == m:
            if not allow_support and inner <= 0 and np.any(D < r_core):
                raise ValueError("evaluation point lies on the support of the measure")
            job_c.append(centers)
            job_r.append(np.full(len(D), r_core))
            job_w.append(np.full(len(D), mu.density))
            job_g.append(group)
            n_jobs += len(D)
            n_leaf += len(D)
            break
        inside_shell = (D - rho >= inner) & (D + rho <= outer)
        if cfg is not None:
            side = s.sides[k] if k > 0 else 2.0 * s.dilated_radii[0]
            adm = inside_shell & (_cube_distance(x, centers, side) >= cfg.eta * side) & ~on_branch & ~on_excl
        else:
            adm = np.zeros(len(D), dtype=bool)
        if np.any(adm):
            mass = s.node_mass(k)
            na = int(adm.sum())
            job_c.append(centers[adm])
            job_r.append(np.full(na, r_core))
            job_w.append(np.full(na, 1.0 / (s.kappa * r_core * r_core)))
            job_g.append(group[adm])
            holder = mass * (
                kernel_deviation_bound(sup, hol, kernel.alpha, hom, rho, D[adm])
                + kernel_deviation_bound(sup, hol, kernel.alpha, hom, r_core, D[adm])
            )
            if cfg.bound == "refined":
                offs = s.child_offsets(k + 1)
                kids = centers[adm][:, None, :] + offs[None, :, :]
                rel = (x - kids).reshape(-1, d)
                dk = np.linalg.norm(rel, axis=1)
                share = mass / len(offs)
                point = share * np.sum(eval_kernel(kernel, rel).reshape(na, -1), axis=1)
                dev = share * np.sum(
                    kernel_deviation_bound(sup, hol, kernel.alpha, hom, s.dilated_radii[k + 1], dk).reshape(na, -1),
                    axis=1,
                )
                extra_evals += rel.shape[0]
            else:
                point = dev = None
            sur_jobs.append((n_jobs, na, holder, point, dev))
            n_jobs += na
            n_sur += na
        rest = ~adm
        if k == floor:
            if np.any(rest):
                raise ValueError(f"point too close to the support for an admissible decomposition at level {floor}")
            break
        centers, on_branch, on_excl, group = centers[rest], on_branch[rest], on_excl[rest], group[rest]
        offs = s.child_offsets(k + 1)
        nc = len(offs)
        new_centers = (centers[:, None, :] + offs[None, :, :]).reshape(-1, d)
        child_idx = np.tile(np.arange(nc), len(centers))
        on_branch_c = np.repeat(on_branch, nc)
        group_c = np.repeat(group, nc)
        if k < len(branch):
            hit = child_idx == branch[k]
            group_c = np.where(on_branch_c & ~hit, k + 1, group_c)
            on_branch_c = on_branch_c & hit
        on_excl_c = np.repeat(on_excl, nc)
        if exclude is not None and k < len(exclude):
            on_excl_c = on_excl_c & (child_idx == exclude[k])
        centers, on_branch, on_excl, group = new_centers, on_branch_c, on_excl_c, group_c

    if job_c:
        C = np.concatenate(job_c)
        Rr = np.concatenate(job_r)
        W = np.concatenate(job_w)
        G = np.concatenate(job_g)
        vals, errs, n_eval = integrate_balls(kernel, x, C, Rr, inner, outer)
        contrib = vals * W
        qerr = errs * W
    else:
        G = np.zeros(0, dtype=int)
        contrib = qerr = np.zeros(0)
        n_eval = 0
    bounds = []
    for start, na, holder, point, dev in sur_jobs:
        if point is None:
            bounds.append(holder)
        else:
            v = contrib[start : start + na]
            refined = np.abs(point - v) + dev + qerr[start : start + na]
            bounds.append(np.minimum(holder, refined))
    sb = np.concatenate(bounds) if bounds else np.zeros(0)
    value = math.fsum(contrib)
    sur_err = np.zeros(len(contrib))
    for (start, na, *_), b in zip(sur_jobs, bounds):
        sur_err[start : start + na] = b
    breakdown, breakdown_error = {}, {}
    for gid in sorted(set(G.tolist())):
        key = "A1" if gid == 0 else f"level_{gid}"
        sel = G == gid
        breakdown[key] = math.fsum(contrib[sel])
        breakdown_error[key] = float(np.sum(qerr[sel]) + np.sum(sur_err[sel]))
    q_total = float(np.sum(qerr))
    s_total = float(np.sum(sb))
    return PotentialEstimate(
        value=value,
        error_bound=q_total + s_total,
        kernel_evals=int(n_eval + extra_evals),
        breakdown=breakdown,
        breakdown_error=breakdown_error,
        n_surrogates=n_sur,
        n_leaves=n_leaf,
        surrogate_bound=s_total,
        quadrature_error=q_total,
    )


def _branch_for(mu, x, eps, branch):
    if branch is not None:
        return tuple(int(b) for b in branch)
    if eps is None:
        return ()
    n = next((k for k, r in enumerate(mu.schedule.radii[: mu.level + 1]) if r <= eps), mu.level)
    return nearest_branch(mu.schedule, x, n)


def potential_direct(
    kernel: SphericalKernel,
    mu: LevelMeasure,
    x,
    spec: Optional[QuadratureSpec] = None,
    *,
    eps: Optional[float] = None,
    branch: Optional[Sequence[int]] = None,
    exclude: Optional[Sequence[int]] = None,
    max_leaves: int = 300_000,
) -> PotentialEstimate:
    """``int K(x - y) dmu^m(y)`` summed leaf by leaf.

    ``eps`` (or an explicit ``branch``) selects the near/far breakdown: ``A1``
    is the mass of the branch node at the first level with ``r_n <= eps`` and
    ``level_k`` collects the siblings leaving the branch at level ``k``.
    ``exclude`` drops the subtree at that path.
    """
    if mu.leaf_count > max_leaves:
        raise MemoryError(f"{mu.leaf_count} leaves exceed the direct budget {max_leaves}; use the treecode")
    x = np.asarray(x, dtype=float)
    excl = None if exclude is None else tuple(int(v) for v in exclude)
    return _traverse(kernel, mu, x, None, 0.0, math.inf, _branch_for(mu, x, eps, branch), excl, False)


def potential_treecode(
    kernel: SphericalKernel,
    mu: LevelMeasure,
    x,
    cfg: Optional[TreecodeConfig] = None,
    spec: Optional[QuadratureSpec] = None,
    *,
    eps: Optional[float] = None,
    branch: Optional[Sequence[int]] = None,
    exclude: Optional[Sequence[int]] = None,
) -> PotentialEstimate:
    """Hierarchical potential with far nodes replaced by mass-matched uniform balls.

    ``error_bound`` adds, per replaced node of mass ``M``,
    ``M * (bound(rho_dilated) + bound(r_core))`` from
    :func:`kernel_deviation_bound`, plus the quadrature estimates.
    """
    x = np.asarray(x, dtype=float)
    excl = None if exclude is None else tuple(int(v) for v in exclude)
    return _traverse(
        kernel, mu, x, cfg or TreecodeConfig(), 0.0, math.inf, _branch_for(mu, x, eps, branch), excl, False
    )


def truncated_sio(
    kernel: SphericalKernel,
    mu: LevelMeasure,
    x,
    eps: float,
    spec: Optional[QuadratureSpec] = None,
    cfg: Optional[TreecodeConfig] = None,
) -> PotentialEstimate:
    """``int_{|x - y| > eps} K(x - y) dmu^m(y)``; ``x`` may lie on the support.

    Exact leaf traversal when ``cfg`` is None, otherwise the treecode rule for
    nodes wholly outside ``B(x, eps)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    return _traverse(kernel, mu, x, cfg, float(eps), math.inf, (), None, True)


def annulus_integral(
    kernel: SphericalKernel,
    mu: LevelMeasure,
    z,
    inner: float,
    outer: float,
    spec: Optional[QuadratureSpec] = None,
    cfg: Optional[TreecodeConfig] = None,
) -> PotentialEstimate:
    """``int_{inner < |z - y| <= outer} K(z - y) dmu^m(y)`` by restricted traversal."""
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    z = np.asarray(z, dtype=float)
    return _traverse(kernel, mu, z, cfg, float(inner), float(outer), (), None, True)
