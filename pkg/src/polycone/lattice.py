"""Integer geometry on Z^{d+1}: cones, cone points, irreducible pieces, diamonds.

A site is split into a transverse part ``perp`` in Z^d and a longitudinal
part ``par`` in Z.  Cones have a rational half-aperture ``p/q`` so every
membership test is an exact integer comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, order=True)
class LatticePoint:
    perp: tuple[int, ...]
    par: int

    def __post_init__(self):
        object.__setattr__(self, "perp", tuple(int(c) for c in self.perp))
        object.__setattr__(self, "par", int(self.par))

    @property
    def d(self) -> int:
        return len(self.perp)

    def coords(self) -> tuple[int, ...]:
        return self.perp + (self.par,)

    def __add__(self, other: "LatticePoint") -> "LatticePoint":
        return LatticePoint(tuple(a + b for a, b in zip(self.perp, other.perp)), self.par + other.par)

    def __sub__(self, other: "LatticePoint") -> "LatticePoint":
        return LatticePoint(tuple(a - b for a, b in zip(self.perp, other.perp)), self.par - other.par)

    def __neg__(self) -> "LatticePoint":
        return LatticePoint(tuple(-a for a in self.perp), -self.par)


def point(*coords: int) -> LatticePoint:
    """Build a point from its coordinates, longitudinal coordinate last."""
    if len(coords) < 2:
        raise ValueError("need at least one transverse and one longitudinal coordinate")
    return LatticePoint(tuple(coords[:-1]), coords[-1])


def join(perp: Sequence[int], par: int) -> LatticePoint:
    return LatticePoint(tuple(perp), par)


def origin(d: int) -> LatticePoint:
    return LatticePoint((0,) * d, 0)


def unit_steps(d: int) -> list[LatticePoint]:
    """The 2d+2 nearest-neighbour steps; the up step comes first."""
    steps = [LatticePoint((0,) * d, 1), LatticePoint((0,) * d, -1)]
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            steps.append(LatticePoint(tuple(e), 0))
    return steps


def l1_norm(x: LatticePoint) -> int:
    return sum(abs(c) for c in x.perp) + abs(x.par)


@dataclass(frozen=True)
class ConeAperture:
    """Half-aperture delta = p/q of the cone ||x_perp|| < delta * x_par."""

    p: int = 2
    q: int = 1

    def __post_init__(self):
        if int(self.p) != self.p or int(self.q) != self.q or self.p <= 0 or self.q <= 0:
            raise ValueError("aperture p and q must be positive integers")

    @property
    def delta(self) -> Fraction:
        return Fraction(self.p, self.q)

    def __le__(self, other: "ConeAperture") -> bool:
        return self.p * other.q <= other.p * self.q


def _strictly_inside(dperp: Iterable[int], dpar: int, aperture: ConeAperture) -> bool:
    # q^2 |dperp|^2 < p^2 dpar^2 with dpar > 0
    if dpar <= 0:
        return False
    n2 = sum(c * c for c in dperp)
    return aperture.q * aperture.q * n2 < aperture.p * aperture.p * dpar * dpar


def in_cone(x: LatticePoint, apex: LatticePoint, aperture: ConeAperture = ConeAperture()) -> bool:
    """Membership of ``x`` in the forward cone at ``apex``; the apex itself belongs."""
    if x == apex:
        return True
    return _strictly_inside((a - b for a, b in zip(x.perp, apex.perp)), x.par - apex.par, aperture)


def in_backward_cone(x: LatticePoint, apex: LatticePoint, aperture: ConeAperture = ConeAperture()) -> bool:
    if x == apex:
        return True
    return _strictly_inside((a - b for a, b in zip(x.perp, apex.perp)), apex.par - x.par, aperture)


@dataclass(frozen=True)
class LatticePath:
    points: tuple[LatticePoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        for a, b in zip(pts, pts[1:]):
            if l1_norm(b - a) != 1:
                raise ValueError(f"consecutive points {a} and {b} are not nearest neighbours")

    @classmethod
    def from_coords(cls, coords: Iterable[Sequence[int]]) -> "LatticePath":
        return cls(tuple(point(*c) for c in coords))

    @property
    def n(self) -> int:
        return max(len(self.points) - 1, 0)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, k):
        return self.points[k]

    def sub(self, i: int, j: int) -> "LatticePath":
        return LatticePath(self.points[i : j + 1])

    def as_array(self) -> np.ndarray:
        return np.array([p.coords() for p in self.points], dtype=np.int64)


def concatenate(paths: Sequence[LatticePath]) -> LatticePath:
    """Join paths sharing endpoints; empty paths are skipped."""
    out: list[LatticePoint] = []
    for path in paths:
        if not path.points:
            continue
        if out:
            if out[-1] != path.points[0]:
                raise ValueError("paths do not share an endpoint")
            out.extend(path.points[1:])
        else:
            out.extend(path.points)
    return LatticePath(tuple(out))


def is_cone_confined(path: LatticePath, aperture: ConeAperture = ConeAperture()) -> bool:
    """Every later point sits strictly inside the forward cone of the start and every
    earlier point strictly inside the backward cone of the end.

    The apex is adjoined only at its own index, so a confined path never revisits
    its first or its last site.
    """
    pts = path.points
    if not pts:
        return True
    first, last = pts[0], pts[-1]
    for i, x in enumerate(pts):
        if i > 0 and not _strictly_inside(_diff(x, first), x.par - first.par, aperture):
            return False
        if i < len(pts) - 1 and not _strictly_inside(_diff(x, last), last.par - x.par, aperture):
            return False
    return True


def _diff(a: LatticePoint, b: LatticePoint) -> tuple[int, ...]:
    return tuple(u - v for u, v in zip(a.perp, b.perp))


def cone_points(path: LatticePath, aperture: ConeAperture = ConeAperture()) -> list[int]:
    """Indices 1 <= k < n at which the path splits into a piece strictly inside the
    backward cone of gamma(k) followed by a piece strictly inside its forward cone.

    Heights must satisfy gamma(0).par < gamma(k).par < gamma(n).par.  A site that
    the path visits twice is never a cone point.
    """
    pts = path.points
    n = len(pts) - 1
    if n < 2 or pts[-1].par <= pts[0].par:
        return []
    arr = path.as_array()
    return [int(k) for k in _cone_points_array(arr, aperture.p, aperture.q)]


def _cone_points_array(arr: np.ndarray, p: int, q: int) -> list[int]:
    n = arr.shape[0] - 1
    h = arr[:, -1]
    out = []
    for k in range(1, n):
        if not (h[0] < h[k] < h[n]):
            continue
        dh = h - h[k]
        dperp = arr[:, :-1] - arr[k, :-1]
        n2 = (dperp * dperp).sum(axis=1)
        before = slice(0, k)
        after = slice(k + 1, n + 1)
        if np.any(dh[before] >= 0) or np.any(dh[after] <= 0):
            continue
        inside = q * q * n2 < p * p * dh * dh
        inside[k] = True
        if np.all(inside):
            out.append(k)
    return out


def irreducible_decompose(
    path: LatticePath, aperture: ConeAperture = ConeAperture()
) -> tuple[LatticePath, list[LatticePath], LatticePath]:
    """Split at every cone point into (prefix, interior pieces, suffix).

    Paths with fewer than two cone points come back whole as the prefix.
    """
    cps = cone_points(path, aperture)
    empty = LatticePath(())
    if len(cps) < 2:
        return path, [], empty
    prefix = path.sub(0, cps[0])
    pieces = [path.sub(a, b) for a, b in zip(cps, cps[1:])]
    suffix = path.sub(cps[-1], path.n)
    return prefix, pieces, suffix


@dataclass(frozen=True)
class Diamond:
    """D(base, tip) = (base + Y) intersected with (tip - Y), as an open set."""

    base: LatticePoint
    tip: LatticePoint
    aperture: ConeAperture = ConeAperture()

    @property
    def degenerate(self) -> bool:
        return self.base == self.tip

    def contains(self, x: LatticePoint) -> bool:
        if self.degenerate:
            return x == self.base
        return in_cone(x, self.base, self.aperture) and in_backward_cone(x, self.tip, self.aperture)


def diamonds_intersect(a: Diamond, b: Diamond) -> bool:
    """Whether two diamonds share a real point.

    The common part of two diamonds is convex, so the heights at which their
    cross-sections meet form an open interval.  A fast pass tests the
    half-integer heights of the common range exactly (a section is the lens of
    two open balls, so each height is a four-ball test in rational arithmetic).
    When that finds nothing the largest common slack is computed: exactly by a
    rational linear program for d = 1, and for d >= 2 by a convex solve whose
    optimal height seeds exact four-ball tests at nearby rational heights.
    A single-point diamond meets another one when the point lies in it.
    """
    if a.degenerate or b.degenerate:
        if a.degenerate and b.degenerate:
            return a.base == b.base
        pt, other = (a.base, b) if a.degenerate else (b.base, a)
        return other.contains(pt)
    if a.aperture != b.aperture:
        raise ValueError("diamonds must share the aperture")
    lo = max(a.base.par, b.base.par)
    hi = min(a.tip.par, b.tip.par)
    if lo >= hi:
        return False
    p, q = a.aperture.p, a.aperture.q
    if not _pairs_compatible(a, b, p, q):
        return False
    verts = (a.base, a.tip, b.base, b.tip)
    signs = (1, -1, 1, -1)
    for h2 in range(2 * lo + 1, 2 * hi):
        if _sections_meet(verts, signs, p, q, Fraction(h2, 2)):
            return True
    if a.base.d == 1:
        return _max_slack_1d(verts, signs, p, q) > 0
    s_star, slack = _max_slack_numeric(verts, signs, p, q, lo, hi)
    if slack <= 1e-12:
        return False
    for den in (2 ** k for k in range(1, 31)):
        h = Fraction(s_star).limit_denominator(den)
        if lo < h < hi and _sections_meet(verts, signs, p, q, h):
            return True
    return True  # positive slack but no certificate found within 2^30


def _sqrt_sum_less(m: int, n: int, K: int) -> bool:
    """sqrt(m) + sqrt(n) < K for nonnegative integers, exactly."""
    if K <= 0:
        return False
    r = K * K - m - n
    return r > 0 and 4 * m * n < r * r


def _pairs_compatible(a: Diamond, b: Diamond, p: int, q: int) -> bool:
    # necessary conditions from pairs of cones: each base strictly below the other
    # tip's backward cone, and a height where both base balls and both tip balls meet
    def n2(u, v):
        return sum((x - y) ** 2 for x, y in zip(u.perp, v.perp))

    if not in_backward_cone(a.base, b.tip, a.aperture) or not in_backward_cone(b.base, a.tip, a.aperture):
        return False
    # q |db| + q |dt| < p (a.tip + b.tip - a.base - b.base), with q|.| = sqrt(q^2 |.|^2)
    K = p * (a.tip.par + b.tip.par - a.base.par - b.base.par)
    return _sqrt_sum_less(q * q * n2(a.base, b.base), q * q * n2(a.tip, b.tip), K)


def _sections_meet(verts, signs, p, q, h: Fraction) -> bool:
    # section at height h of the cone with apex v: open ball of radius
    # delta * sign * (h - v.par) around v.perp; scaled by q * den to integers
    den = h.denominator
    num = h.numerator
    centers = [tuple(q * den * c for c in v.perp) for v in verts]
    radii = [p * s * (num - den * v.par) for s, v in zip(signs, verts)]
    if min(radii) <= 0:
        return False
    if len(centers[0]) == 1:
        return max(c[0] - r for c, r in zip(centers, radii)) < min(c[0] + r for c, r in zip(centers, radii))
    return balls_have_common_point(centers, radii)


def _max_slack_1d(verts, signs, p, q) -> Fraction:
    """max t over (x, s) with q|x - c_i| + q t <= p sign_i (s - a_i), by vertex enumeration."""
    rows = []
    for s, v in zip(signs, verts):
        c, a = v.perp[0], v.par
        for e in (1, -1):
            # e q x - p s sign + q t <= e q c - p sign a
            rows.append(((e * q, -p * s, q), e * q * c - p * s * a))
    best = None
    for trio in combinations(rows, 3):
        sol = _gauss([[Fraction(x) for x in r[0]] for r in trio], [Fraction(r[1]) for r in trio])
        if sol is None:
            continue
        if all(sum(x * y for x, y in zip(r[0], sol)) <= r[1] for r in rows):
            if best is None or sol[2] > best:
                best = sol[2]
    return best if best is not None else Fraction(-1)


def _max_slack_numeric(verts, signs, p, q, lo, hi):
    """Largest t with |w - c_i| + t <= delta sign_i (s - a_i) for all four cones."""
    from scipy.optimize import minimize

    d = verts[0].d
    C = np.array([v.perp for v in verts], dtype=np.float64)
    A = np.array([v.par for v in verts], dtype=np.float64)
    S = np.array(signs, dtype=np.float64)
    delta = p / q
    s0 = 0.5 * (lo + hi)
    w0 = C.mean(axis=0)
    t0 = float(np.min(delta * S * (s0 - A) - np.linalg.norm(C - w0, axis=1))) - 1.0

    def lin(x):
        return delta * S * (x[d] - A) - x[d + 1]

    def sq(x):
        e = lin(x)
        return e * e - ((C - x[:d]) ** 2).sum(axis=1)

    cons = [{"type": "ineq", "fun": lin}, {"type": "ineq", "fun": sq}]
    x0 = np.concatenate([w0, [s0, t0]])
    res = minimize(lambda x: -x[d + 1], x0, method="SLSQP", constraints=cons,
                   bounds=[(None, None)] * d + [(lo, hi), (None, None)],
                   options={"ftol": 1e-14, "maxiter": 500})
    x = res.x
    # report the slack actually certified by the returned point
    slack = float(np.min(delta * S * (x[d] - A) - np.linalg.norm(C - x[:d], axis=1)))
    return float(x[d]), slack


def balls_have_common_point(centers: Sequence[Sequence[int]], radii: Sequence[int]) -> bool:
    """Exact test for a common point of open Euclidean balls with integer data.

    Minimises max_i |z - c_i|^2 - r_i^2 over z; the balls meet iff the minimum
    is negative.  The minimiser is a convex combination of the centres of an
    active set, found by enumerating candidate sets.
    """
    m = len(centers)
    for i, j in combinations(range(m), 2):
        dist2 = sum((x - y) ** 2 for x, y in zip(centers[i], centers[j]))
        if dist2 >= (radii[i] + radii[j]) ** 2:
            return False
    value = _power_minimum(centers, radii)
    return value < 0


def _power_minimum(centers, radii) -> Fraction:
    m = len(centers)
    C = [[Fraction(c) for c in cen] for cen in centers]
    K = [sum(c * c for c in C[i]) - Fraction(radii[i]) ** 2 for i in range(m)]

    def g(i, z):
        return sum((zz - cc) ** 2 for zz, cc in zip(z, C[i])) - Fraction(radii[i]) ** 2

    best = None
    for size in range(1, m + 1):
        for S in combinations(range(m), size):
            lam = _solve_active(S, C, K)
            if lam is None or any(x < 0 for x in lam):
                continue
            z = [sum(lam[k] * C[S[k]][j] for k in range(size)) for j in range(len(C[0]))]
            val = g(S[0], z)
            if all(g(i, z) <= val for i in range(m) if i not in S):
                if best is None or val < best:
                    best = val
        if best is not None:
            return best
    raise ArithmeticError("no active set found")


def _solve_active(S, C, K):
    size = len(S)
    if size == 1:
        return [Fraction(1)]
    i0 = S[0]
    rows = []
    rhs = []
    for i in S[1:]:
        # g_i(z) - g_i0(z) = -2 (c_i - c_i0).z + K_i - K_i0 = 0 with z = sum lam_k c_k
        diff = [a - b for a, b in zip(C[i], C[i0])]
        rows.append([-2 * sum(dj * cj for dj, cj in zip(diff, C[k])) for k in S])
        rhs.append(K[i0] - K[i])
    rows.append([Fraction(1)] * size)
    rhs.append(Fraction(1))
    return _gauss(rows, rhs)


def _gauss(A, b):
    n = len(A)
    M = [row[:] + [bb] for row, bb in zip(A, b)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            return None
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col] / M[col][col]
                M[r] = [x - f * y for x, y in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]
