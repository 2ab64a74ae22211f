"""Vectorised integrals of ``K(x - y)`` over balls, optionally cut by a shell about ``x``.

In polar coordinates about ``x`` (``y = x + rho * zeta``) the integral of the
``(d-2)``-homogeneous kernel over ``B(c, R) ∩ {inner < |x - y| <= outer}`` is

    int_S omega(-zeta) * (hi(zeta)^2 - lo(zeta)^2)_+ / 2  dsigma(zeta),

with ``lo, hi`` the ends of the ray segment inside both the ball and the
shell.  Writing ``zeta = t e + sqrt(1 - t^2) eta`` with ``e`` the unit vector
towards ``c`` reduces this to a one-dimensional integral in ``t`` of a
piecewise smooth radial factor times the ``S^{d-2}`` average of ``omega``.

Two schemes:

* ``psi``: whole balls seen from outside (``R / D <= 1/2``).  The substitution
  ``sin(theta) = (R/D) sin(psi)`` removes the square-root edge of the cone.
* ``t``: everything else.  The ``t`` range is split at kinks (shell
  crossings, cone edge) with extra graded breakpoints where the radial factor
  varies on a small scale, and each piece uses Gauss-Legendre nodes after the
  endpoint-flattening map ``t = p + (q - p)(3u^2 - 2u^3)``.

Every ball is integrated at a coarse and a fine resolution; the fine value is
returned and ``|fine - coarse|`` serves as its error estimate.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .sphere_kernel import SphericalKernel, product_sphere_rule

# (lambda threshold, coarse (n_radial, n_sphere), fine (n_radial, n_sphere))
PSI_TIERS = (
    (1.0 / 32, (4, 4), (8, 8)),
    (1.0 / 4, (8, 8), (16, 16)),
    (1.0 / 2, (16, 16), (32, 32)),
)
T_TIERS = (
    (1.0 / 32, (4, 4), (8, 8)),
    (1.0 / 4, (8, 8), (16, 16)),
    (math.inf, (12, 16), (24, 32)),
)
_GRADE_STEPS = 8
_CHUNK = 1_500_000  # quadrature points per vectorised block


@lru_cache(maxsize=64)
def _legendre01(n: int):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=64)
def _legendre_psi(n: int):
    u, w = _legendre01(n)
    return 0.5 * np.pi * u, 0.5 * np.pi * w


def orthonormal_frames(e: np.ndarray) -> np.ndarray:
    """(B, d, d-1) orthonormal bases of the complements of the unit vectors ``e``.

    Householder reflection taking ``e_d`` to ``-+e``; its first ``d - 1``
    columns span ``e^perp``.
    """
    B, d = e.shape
    sgn = np.where(e[:, -1] >= 0, 1.0, -1.0)
    v = e.copy()
    v[:, -1] += sgn
    vv = np.einsum("bi,bi->b", v, v)
    H = np.eye(d)[None, :, :] - 2.0 * v[:, :, None] * v[:, None, :] / vv[:, None, None]
    return H[:, :, : d - 1]


def _sphere_average(kernel, e, Q, t, sin_t, eta, w_eta):
    """``sum_j w_j omega(-(t e + sin_t Q eta_j))`` for broadcastable ``t``.

    ``e``: (P, d); ``Q``: (P, d, d-1); ``t``, ``sin_t``: (P, n).
    Returns (P, n) and the number of omega evaluations.
    """
    perp = np.einsum("pij,kj->pki", Q, eta)  # (P, K, d)
    zeta = t[:, :, None, None] * e[:, None, None, :] + sin_t[:, :, None, None] * perp[:, None, :, :]
    vals = kernel.omega(-zeta.reshape(-1, e.shape[1])).reshape(zeta.shape[:3])
    return vals @ w_eta, vals.size


def _psi_integrals(kernel, e, Q, D, R, n_psi, n_eta):
    d = e.shape[1]
    psi, w_psi = _legendre_psi(n_psi)
    eta, w_eta = product_sphere_rule(d - 1, n_eta)
    lam = (R / D)[:, None]
    sin_th = lam * np.sin(psi)[None, :]
    t = np.sqrt(1.0 - sin_th * sin_th)
    g, n_eval = _sphere_average(kernel, e, Q, t, sin_th, eta, w_eta)
    weight = 2.0 * (R * R)[:, None] * np.cos(psi)[None, :] ** 2 * sin_th ** (d - 2) * w_psi[None, :]
    return np.sum(weight * g, axis=1), n_eval


def _breakpoints(D, R, inner, outer):
    """(B, C) sorted candidate breakpoints in ``[t_lo, 1]`` (NaN where unused)."""
    B = len(D)
    with np.errstate(divide="ignore", invalid="ignore"):
        outside = D > R
        t_star = np.where(outside, np.sqrt(np.clip(1.0 - (R / D) ** 2, 0.0, 1.0)), -1.0)
        cols = [t_star, np.ones(B)]
        for v in (inner, outer):
            ok = (v > 0) & np.isfinite(v) & (D > 0)
            cols.append(np.where(ok, (v * v + D * D - R * R) / (2 * v * D), np.nan))
        # inside near the sphere: radial factor varies on the scale a around t = 0
        a = np.where((~outside) & (D > 0), np.sqrt(np.clip(R * R - D * D, 0, None)) / np.where(D > 0, D, 1), np.nan)
        a = np.where(a < 1.0, a, np.nan)
        cols.append(np.where(np.isfinite(a), 0.0, np.nan))
        for j in range(_GRADE_STEPS):
            cols.append(a * 4.0**j)
            cols.append(-a * 4.0**j)
        # outside near the sphere: square-root edge at t* with curvature scale t*
        ts = np.where(outside & (t_star < 0.5), t_star, np.nan)
        for j in range(_GRADE_STEPS):
            cols.append(ts * (1.0 + 0.25 * 4.0**j))
    P = np.stack(cols, axis=1)
    lo = t_star[:, None]
    P = np.where((P > lo) & (P < 1.0), P, np.nan)
    P[:, 0] = t_star
    P[:, 1] = 1.0
    return np.sort(P, axis=1)


def _t_integrals(kernel, e, Q, D, R, inner, outer, n_t, n_eta):
    d = e.shape[1]
    bp = _breakpoints(D, R, inner, outer)
    p, q = bp[:, :-1], bp[:, 1:]
    ok = np.isfinite(p) & np.isfinite(q) & (q - p > 1e-15)
    ball, col = np.nonzero(ok)
    p, q = p[ball, col], q[ball, col]
    u, wu = _legendre01(n_t)
    eta, w_eta = product_sphere_rule(d - 1, n_eta)
    out = np.zeros(len(D))
    n_eval = 0
    per_piece = n_t * len(w_eta)
    step = max(1, _CHUNK // per_piece)
    for i in range(0, len(ball), step):
        b = ball[i : i + step]
        pp, qq = p[i : i + step, None], q[i : i + step, None]
        t = pp + (qq - pp) * (3 * u**2 - 2 * u**3)[None, :]
        jac = (qq - pp) * (6 * u * (1 - u) * wu)[None, :]
        Db, Rb = D[b, None], R[b, None]
        root = np.sqrt(np.clip(Rb * Rb - Db * Db + Db * Db * t * t, 0.0, None))
        lo = np.maximum(np.maximum(Db * t - root, 0.0), inner[b, None])
        hi = np.minimum(Db * t + root, outer[b, None])
        F = 0.5 * np.clip(hi * hi - lo * lo, 0.0, None) * (hi > lo)
        one_m = np.clip(1.0 - t * t, 0.0, None)
        w = one_m ** ((d - 3) / 2.0) if d > 3 else 1.0
        g, ne = _sphere_average(kernel, e[b], Q[b], t, np.sqrt(one_m), eta, w_eta)
        n_eval += ne
        np.add.at(out, b, np.sum(jac * F * w * g, axis=1))
    return out, n_eval


def _tier_index(lam, tiers):
    idx = np.full(lam.shape, len(tiers) - 1)
    for i in range(len(tiers) - 1, -1, -1):
        idx = np.where(lam <= tiers[i][0], i, idx)
    return idx


def integrate_balls(
    kernel: SphericalKernel,
    x: np.ndarray,
    centers: np.ndarray,
    radii: np.ndarray,
    inner=None,
    outer=None,
    boost: int = 0,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Lebesgue integrals of ``K(x - y)`` over ``B(c_i, R_i)`` cut by the shell.

    ``x`` is a single point or one point per ball.  Returns (fine values,
    ``|fine - coarse|``, number of omega evaluations).  ``boost`` doubles both
    resolutions ``boost`` times.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    B, d = centers.shape
    x = np.broadcast_to(np.asarray(x, dtype=float), (B, d))
    R = np.broadcast_to(np.asarray(radii, dtype=float), (B,)).copy()
    inner = np.zeros(B) if inner is None else np.broadcast_to(np.asarray(inner, dtype=float), (B,)).copy()
    outer = np.full(B, np.inf) if outer is None else np.broadcast_to(np.asarray(outer, dtype=float), (B,)).copy()
    rel = centers - x
    D = np.linalg.norm(rel, axis=1)
    e = np.zeros((B, d))
    e[:, 0] = 1.0
    pos = D > 0
    e[pos] = rel[pos] / D[pos, None]
    Q = orthonormal_frames(e)

    value = np.zeros(B)
    err = np.zeros(B)
    n_eval = 0
    empty = (outer <= np.maximum(D - R, 0.0)) | (inner >= D + R) | (outer <= inner)
    whole = (inner <= D - R) & (outer >= D + R)
    lam = np.where(D > R, R / np.where(D > 0, D, 1.0), np.inf)
    use_psi = ~empty & whole & (lam <= PSI_TIERS[-1][0])
    use_t = ~empty & ~use_psi
    scale = 2**boost

    tier = _tier_index(lam, PSI_TIERS)
    for i, (_, coarse, fine) in enumerate(PSI_TIERS):
        sel = np.nonzero(use_psi & (tier == i))[0]
        if not len(sel):
            continue
        vals = []
        for n_r, n_s in (coarse, fine):
            v, ne = _psi_integrals(kernel, e[sel], Q[sel], D[sel], R[sel], n_r * scale, n_s * scale)
            vals.append(v)
            n_eval += ne
        value[sel] = vals[1]
        err[sel] = np.abs(vals[1] - vals[0])

    tier = _tier_index(lam, T_TIERS)
    for i, (_, coarse, fine) in enumerate(T_TIERS):
        sel = np.nonzero(use_t & (tier == i))[0]
        if not len(sel):
            continue
        vals = []
        for n_r, n_s in (coarse, fine):
            v, ne = _t_integrals(
                kernel, e[sel], Q[sel], D[sel], R[sel], inner[sel], outer[sel], n_r * scale, n_s * scale
            )
            vals.append(v)
            n_eval += ne
        value[sel] = vals[1]
        err[sel] = np.abs(vals[1] - vals[0])
    return value, err, n_eval


def monte_carlo_ball(kernel, x, center, radius, inner, outer, n, seed):
    """Plain Monte Carlo estimate and standard error of the shell-cut ball integral."""
    rng = np.random.default_rng(seed)
    d = len(center)
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    y = center + g * (radius * rng.random(n) ** (1.0 / d))[:, None]
    z = x - y
    r = np.linalg.norm(z, axis=1)
    keep = (r > inner) & (r <= outer) & (r > 0)
    f = np.zeros(n)
    f[keep] = kernel.omega(z[keep] / r[keep, None]) * r[keep] ** (-(d - 2))
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius**d
    return vol * float(f.mean()), vol * float(f.std(ddof=1) / math.sqrt(n)), n
