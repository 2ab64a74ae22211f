"""Cube packing and the generation-by-generation ball hierarchy.

Every generation-``k`` ball of radius ``r_{k-1}`` is replaced by ``n_k`` balls
of radius ``r_k`` centred in cubes of side ``s_k`` taken from a grid anchored at
the parent centre.  The child pattern (integer grid indices) only depends on
the ratio ``r_{k-1}/r_k`` and the dimension, so it is computed once per level
and shared by every parent; a node centre is the sum of its ancestors' offsets
``index * s_j`` accumulated in path order, which makes it bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .sphere_kernel import ball_volume

__all__ = [
    "ConstructionSchedule",
    "HierarchyNode",
    "LevelGeometry",
    "GeometryReport",
    "ScheduleFailure",
    "ScheduleReport",
    "default_schedule",
    "validate_schedule",
    "pack_cubes",
    "packing_indices",
    "root_node",
    "node_from_path",
    "expand_children",
    "locate_branch",
    "level_centers",
    "verify_geometry",
]

_REL = 1e-12


def _is_integer(v: float, tol: float = 1e-9) -> bool:
    return abs(v - round(v)) <= tol * max(1.0, abs(v))


@dataclass(frozen=True)
class ConstructionSchedule:
    """Dimension and radii ``r_0 = 1 > r_1 > ... > r_K`` with derived per-level data.

    Level-indexed tuples (``sides``, ``deltas``, ``child_counts``) carry a
    placeholder at index 0 so that entry ``k`` belongs to level ``k``.
    """

    d: int
    radii: tuple

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if self.d < 3:
            raise ValueError("dimension must be at least 3")
        if not radii or radii[0] != 1.0:
            raise ValueError("radii must start with r_0 = 1")
        if any(b >= a or b <= 0 for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be positive and strictly decreasing")

    @classmethod
    def from_ratios(cls, d: int, first_ratio: int, ratio_growth: int = 1, depth: int = 1):
        """Radii with ``r_{k-1}/r_k = first_ratio * ratio_growth**(k-1)``."""
        radii = [1.0]
        q = first_ratio
        for _ in range(depth):
            radii.append(radii[-1] / q)
            q *= ratio_growth
        return cls(d, tuple(radii))

    @property
    def depth(self) -> int:
        return len(self.radii) - 1

    @cached_property
    def kappa(self) -> float:
        return ball_volume(self.d)

    @cached_property
    def A(self) -> float:
        return math.sqrt(self.d) * self.kappa ** (1.0 / self.d)

    @cached_property
    def ratios(self) -> tuple:
        """``r_{k-1}/r_k`` for k = 1..K (index 0 unused, set to 1)."""
        return (1.0,) + tuple(a / b for a, b in zip(self.radii, self.radii[1:]))

    @cached_property
    def child_counts(self) -> tuple:
        """``n_k = (r_{k-1}/r_k)^{d-2}`` rounded to the nearest integer."""
        return (1,) + tuple(int(round(q ** (self.d - 2))) for q in self.ratios[1:])

    @cached_property
    def sides(self) -> tuple:
        """Cube side ``s_k = (kappa r_k^{d-2} r_{k-1}^2)^{1/d}``; ``s_0 = inf``."""
        d, r = self.d, self.radii
        return (math.inf,) + tuple(
            (self.kappa * r[k] ** (d - 2) * r[k - 1] ** 2) ** (1.0 / d) for k in range(1, len(r))
        )

    @cached_property
    def deltas(self) -> tuple:
        """``delta_k = A (r_k/r_{k-1})^{(d-2)/d}`` for k = 1..K, and ``delta_{K+1} = 0``."""
        d, r = self.d, self.radii
        out = [0.0]
        out += [self.A * (r[k] / r[k - 1]) ** ((d - 2) / d) for k in range(1, len(r))]
        out.append(0.0)
        return tuple(out)

    @cached_property
    def dilated_radii(self) -> tuple:
        """``(1 + delta_{k+1}) r_k`` for k = 0..K."""
        return tuple((1.0 + self.deltas[k + 1]) * self.radii[k] for k in range(len(self.radii)))

    def node_count(self, k: int) -> int:
        return math.prod(self.child_counts[1 : k + 1])

    def node_mass(self, k: int) -> float:
        return self.radii[k] ** (self.d - 2)

    def exact_node_mass(self, k: int) -> Fraction:
        return Fraction(self.radii[k]) ** (self.d - 2)

    def child_indices(self, k: int) -> np.ndarray:
        """Integer grid indices (n_k, d) of the children of any level-(k-1) node."""
        if not 1 <= k <= self.depth:
            raise ValueError(f"level {k} has no parent level in this schedule")
        return packing_indices(self.d, self.ratios[k])

    @cached_property
    def _offsets(self) -> tuple:
        offs = [np.zeros((1, self.d))]
        for k in range(1, self.depth + 1):
            o = self.child_indices(k) * self.sides[k]
            o.setflags(write=False)
            offs.append(o)
        return tuple(offs)

    def child_offsets(self, k: int) -> np.ndarray:
        """Child centre offsets ``index * s_k`` relative to the parent centre."""
        return self._offsets[k]

    @cached_property
    def _index_lookup(self) -> tuple:
        tables = [{}]
        for k in range(1, self.depth + 1):
            tables.append({tuple(int(v) for v in row): i for i, row in enumerate(self.child_indices(k))})
        return tuple(tables)

    def to_dict(self) -> dict:
        return {"d": self.d, "radii": list(self.radii)}


def default_schedule(d: int = 3) -> ConstructionSchedule:
    """Radii (1, 2^-6, 2^-13, 2^-21): ratios 64, 128, 256."""
    return ConstructionSchedule(d, (1.0, 2.0**-6, 2.0**-13, 2.0**-21))


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ScheduleFailure:
    level: int
    name: str
    lhs: float
    rhs: float
    message: str


@dataclass
class ScheduleReport:
    ok: bool
    failures: list
    deltas: list
    sides: list
    delta_power_partial_sums: list
    delta_decreasing: bool

    @property
    def first_failure(self) -> Optional[ScheduleFailure]:
        return self.failures[0] if self.failures else None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "failures": [f.__dict__ for f in self.failures],
            "deltas": self.deltas,
            "sides": [None if math.isinf(s) else s for s in self.sides],
            "delta_power_partial_sums": self.delta_power_partial_sums,
            "delta_decreasing": self.delta_decreasing,
        }


def validate_schedule(schedule: ConstructionSchedule, alpha: float = 1.0) -> ScheduleReport:
    """Check integrality and the feasibility inequality ``(1 + delta_{k+1}) r_k <= s_k / 4``.

    The feasibility inequality at level ``k >= 1`` gives the quarter-side margin
    between each dilated ball and its cube, and the quarter-side gap between
    siblings.  Also reports partial sums of ``delta_k^{2 alpha / d}`` and
    whether the dilations decrease.
    """
    s, r, d = schedule, schedule.radii, schedule.d
    failures = []
    for k in range(1, s.depth + 1):
        inv = 1.0 / r[k]
        if not _is_integer(inv):
            failures.append(ScheduleFailure(k, "integral_inverse_radius", inv, round(inv), f"1/r_{k} = {inv:g} is not an integer"))
        q = s.ratios[k]
        if not _is_integer(q):
            failures.append(ScheduleFailure(k, "integral_ratio", q, round(q), f"r_{k-1}/r_{k} = {q:g} is not an integer"))
        nk = q ** (d - 2)
        if not _is_integer(nk):
            failures.append(ScheduleFailure(k, "integral_child_count", nk, round(nk), f"n_{k} = {nk:g} is not an integer"))
        lhs = s.dilated_radii[k]
        rhs = s.sides[k] / 4.0
        if lhs > rhs * (1 + _REL):
            failures.append(
                ScheduleFailure(
                    k,
                    "feasibility",
                    lhs,
                    rhs,
                    f"(1 + delta_{k+1}) r_{k} = {lhs:.6g} exceeds s_{k}/4 = {rhs:.6g}",
                )
            )
    deltas = list(s.deltas[1 : s.depth + 1])
    sums, acc = [], 0.0
    for dk in deltas:
        acc += dk ** (2 * alpha / d)
        sums.append(acc)
    decreasing = all(b < a for a, b in zip(deltas, deltas[1:]))
    failures.sort(key=lambda f: f.level)
    return ScheduleReport(not failures, failures, deltas, list(s.sides[: s.depth + 1]), sums, decreasing)


# ---------------------------------------------------------------------------
# packing


@lru_cache(maxsize=128)
def packing_indices(d: int, ratio: float) -> np.ndarray:
    """Grid indices of the ``ceil(ratio^{d-2})`` selected cubes for ``R/r = ratio``.

    The grid of mesh ``s = (kappa r^{d-2} R^2)^{1/d}`` has one cube centred at the
    ball centre.  Among cubes meeting the open ball ``B(0, R)`` the ones closest
    to the centre are kept, ties broken by lexicographic grid index.
    """
    if ratio <= 1.0:
        raise ValueError("need r < R")
    n = int(math.ceil(ratio ** (d - 2) - 1e-9))
    side = (ball_volume(d) * ratio ** (-(d - 2))) ** (1.0 / d)  # with R = 1
    m = int(math.ceil(1.0 / side + 0.5))
    axis = np.arange(-m, m + 1)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    # distance from the origin to the closed cube [i s - s/2, i s + s/2]
    gap = np.maximum(np.abs(grid) * side - side / 2, 0.0)
    meets = np.sum(gap * gap, axis=1) < 1.0
    cand = grid[meets]
    if len(cand) < n:
        raise AssertionError(f"only {len(cand)} grid cubes meet the ball, need {n}")
    sq = np.sum(cand * cand, axis=1)
    order = np.lexsort(tuple(cand[:, c] for c in range(d - 1, -1, -1)) + (sq,))
    out = cand[order[:n]].astype(np.int64)
    out.setflags(write=False)
    return out


def pack_cubes(center, R: float, r: float, d: int) -> np.ndarray:
    """Centres of ``(R/r)^{d-2}`` grid cubes of side ``(kappa r^{d-2} R^2)^{1/d}`` meeting ``B(center, R)``."""
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    center = np.asarray(center, dtype=float)
    if center.shape != (d,):
        raise ValueError("center has the wrong dimension")
    side = (ball_volume(d) * r ** (d - 2) * R * R) ** (1.0 / d)
    return center + packing_indices(d, R / r) * side


# ---------------------------------------------------------------------------
# nodes


@dataclass(frozen=True)
class HierarchyNode:
    level: int
    path: tuple
    center: tuple
    core_radius: float
    dilated_radius: float
    cube_side: float

    @property
    def center_array(self) -> np.ndarray:
        return np.array(self.center)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "path": list(self.path),
            "center": list(self.center),
            "core_radius": self.core_radius,
            "dilated_radius": self.dilated_radius,
            "cube_side": None if math.isinf(self.cube_side) else self.cube_side,
        }


def _make_node(schedule, path, center):
    k = len(path)
    return HierarchyNode(
        k,
        tuple(int(p) for p in path),
        tuple(float(c) for c in center),
        schedule.radii[k],
        schedule.dilated_radii[k],
        schedule.sides[k],
    )


def root_node(schedule: ConstructionSchedule) -> HierarchyNode:
    return _make_node(schedule, (), np.zeros(schedule.d))


def node_from_path(schedule: ConstructionSchedule, path: Sequence[int]) -> HierarchyNode:
    """Rebuild a node from its child-index path (deterministic centre arithmetic)."""
    if len(path) > schedule.depth:
        raise ValueError("path is deeper than the schedule")
    center = np.zeros(schedule.d)
    for k, p in enumerate(path, start=1):
        if not 0 <= p < schedule.child_counts[k]:
            raise ValueError(f"child index {p} out of range at level {k}")
        center = center + schedule.child_offsets(k)[p]
    return _make_node(schedule, path, center)


def expand_children(node: HierarchyNode, schedule: ConstructionSchedule) -> list:
    """The ``n_{k+1}`` children of ``node``; identical output on every call."""
    return list(_children(node, schedule))


@lru_cache(maxsize=4096)
def _children(node, schedule):
    k = node.level
    if k >= schedule.depth:
        raise ValueError("node is at the deepest level of the schedule")
    centers = np.asarray(node.center) + schedule.child_offsets(k + 1)
    return tuple(_make_node(schedule, node.path + (i,), c) for i, c in enumerate(centers))


def level_centers(schedule: ConstructionSchedule, k: int, max_nodes: int = 5_000_000) -> np.ndarray:
    """All level-``k`` centres, in path-lexicographic order."""
    if schedule.node_count(k) > max_nodes:
        raise MemoryError(f"level {k} has {schedule.node_count(k)} nodes, above the budget {max_nodes}")
    c = np.zeros((1, schedule.d))
    for j in range(1, k + 1):
        c = (c[:, None, :] + schedule.child_offsets(j)[None, :, :]).reshape(-1, schedule.d)
    return c


def locate_branch(x, schedule: ConstructionSchedule, max_level: Optional[int] = None, by: str = "ball") -> list:
    """Chain of nodes containing ``x`` from the root down to ``max_level``.

    At each level the only candidate child is the one whose grid cube contains
    ``x``.  With ``by="ball"`` the chain stops at the first level where ``x`` is
    outside that child's dilated ball (``x`` has left ``E^k``); with
    ``by="cube"`` it stops when the containing cube is not a selected child.
    The root is always returned.
    """
    x = np.asarray(x, dtype=float)
    max_level = schedule.depth if max_level is None else min(max_level, schedule.depth)
    node = root_node(schedule)
    chain = [node]
    if by == "ball" and np.linalg.norm(x - node.center_array) > node.dilated_radius:
        return chain
    for k in range(1, max_level + 1):
        rel = (x - node.center_array) / schedule.sides[k]
        idx = tuple(int(v) for v in np.rint(rel))
        pos = schedule._index_lookup[k].get(idx)
        if pos is None:
            break
        child = _make_node(schedule, node.path + (pos,), node.center_array + schedule.child_offsets(k)[pos])
        if by == "ball" and np.linalg.norm(x - child.center_array) > child.dilated_radius:
            break
        chain.append(child)
        node = child
    return chain


# ---------------------------------------------------------------------------
# verification


@dataclass
class LevelGeometry:
    level: int
    nodes_checked: int
    groups_checked: int
    expected_children: int
    count_ok: bool
    max_containment_excess: float
    min_margin: float
    min_gap: float
    quarter_side: float
    pass_i: bool
    pass_ii: bool
    pass_iii: bool
    enumerated: bool

    @property
    def ok(self) -> bool:
        return self.count_ok and self.pass_i and self.pass_ii and self.pass_iii


@dataclass
class GeometryReport:
    d: int
    radii: list
    levels: list = field(default_factory=list)
    determinism_ok: bool = True

    @property
    def ok(self) -> bool:
        return self.determinism_ok and all(lv.ok for lv in self.levels)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "radii": self.radii,
            "ok": self.ok,
            "determinism_ok": self.determinism_ok,
            "levels": [dict(lv.__dict__, ok=lv.ok) for lv in self.levels],
        }


def _sample_paths(schedule, k, n, rng):
    cols = [rng.integers(0, schedule.child_counts[j], size=n) for j in range(1, k + 1)]
    if not cols:
        return np.zeros((1, 0), dtype=np.int64)
    return np.unique(np.stack(cols, axis=1), axis=0)


def _centers_from_paths(schedule, paths):
    c = np.zeros((len(paths), schedule.d))
    for j in range(paths.shape[1]):
        c = c + schedule.child_offsets(j + 1)[paths[:, j]]
    return c


def verify_geometry(
    schedule: ConstructionSchedule,
    n_samples: int = 10_000,
    seed: int = 0,
    enumerate_limit: int = 100_000,
) -> GeometryReport:
    """Check child counts and properties (i)-(iii) level by level.

    Parent groups are fully enumerated when the child level has at most
    ``enumerate_limit`` nodes or there are no more than ``n_samples`` parents;
    otherwise ``n_samples`` random parents are drawn.
    Checked: every child cube lies in the parent's dilated ball (i); every
    dilated ball keeps a margin of ``s_k/4`` from its cube boundary (ii); any
    two checked same-level dilated balls are ``s_k/4`` apart (iii).  A slack of
    1e-12 relative is allowed for rounding.
    """
    rng = np.random.default_rng(seed)
    report = GeometryReport(schedule.d, list(schedule.radii))
    d = schedule.d
    for k in range(1, schedule.depth + 1):
        n_k = schedule.child_counts[k]
        enumerated = (
            schedule.node_count(k) <= enumerate_limit or schedule.node_count(k - 1) <= n_samples
        )
        if enumerated:
            parents = level_centers(schedule, k - 1)
            ppaths = None
        else:
            ppaths = _sample_paths(schedule, k - 1, n_samples, rng)
            parents = _centers_from_paths(schedule, ppaths)
        idx = schedule.child_indices(k)
        offs = schedule.child_offsets(k)
        children = parents[:, None, :] + offs[None, :, :]  # (P, n_k, d)
        side = schedule.sides[k]
        rho_k = schedule.dilated_radii[k]
        rho_parent = schedule.dilated_radii[k - 1]
        count_ok = idx.shape[0] == n_k and len(np.unique(idx, axis=0)) == n_k

        # (i) farthest cube corner from the parent centre
        rel = children - parents[:, None, :]
        corner = np.linalg.norm(np.abs(rel) + side / 2, axis=2)
        excess = float(np.max(corner - rho_parent))
        # (ii) cube centres recomputed independently from parent + index * side
        cube_centers = parents[:, None, :] + idx[None, :, :].astype(float) * side
        to_face = side / 2 - np.max(np.abs(children - cube_centers), axis=2)
        margin = float(np.min(to_face - rho_k))
        # (iii) nearest neighbour among all checked same-level centres
        flat = children.reshape(-1, d)
        if len(flat) > 1:
            dist, _ = cKDTree(flat).query(flat, k=2)
            gap = float(np.min(dist[:, 1]) - 2 * rho_k)
        else:
            gap = math.inf
        q = side / 4
        report.levels.append(
            LevelGeometry(
                level=k,
                nodes_checked=int(flat.shape[0]),
                groups_checked=int(parents.shape[0]),
                expected_children=n_k,
                count_ok=bool(count_ok),
                max_containment_excess=excess,
                min_margin=margin,
                min_gap=gap,
                quarter_side=q,
                pass_i=excess <= _REL * rho_parent if math.isfinite(rho_parent) else True,
                pass_ii=margin >= q * (1 - _REL),
                pass_iii=gap >= q * (1 - _REL),
                enumerated=enumerated,
            )
        )
        # determinism: rebuild a few children from their paths, bit for bit
        picks = rng.integers(0, parents.shape[0], size=min(5, parents.shape[0]))
        for p in picks:
            c = int(rng.integers(0, n_k))
            if ppaths is None:
                ppath = np.unravel_index(p, schedule.child_counts[1:k]) if k > 1 else ()
            else:
                ppath = ppaths[p]
            node = node_from_path(schedule, tuple(int(v) for v in ppath) + (c,))
            if node.center != tuple(float(v) for v in children[p, c]):
                report.determinism_ok = False
    return report
