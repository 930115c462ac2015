"""Seed-addressed i.i.d. potentials on Z^{d+1}.

A site value is a pure function of (spec, seed, absolute coordinates): the
coordinates are hashed together with the seed into a 53-bit uniform which is
then pushed through the inverse distribution function of the family.  Traps
are ``numpy.inf``.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .lattice import LatticePath, LatticePoint, origin, unit_steps

FAMILIES = ("two_point", "bernoulli_trap", "exp_trap", "constant_zero")

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser, elementwise on uint64 arrays (wraps mod 2^64)
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, coords: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) addressed by (seed, coordinates); ``coords`` has shape (..., k)."""
    coords = np.asarray(coords, dtype=np.int64)
    with np.errstate(over="ignore"):
        h = np.full(coords.shape[:-1], np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
        h = _mix64(h + _GOLDEN * np.uint64(coords.shape[-1]))
        for j in range(coords.shape[-1]):
            h = _mix64((h + _GOLDEN) ^ np.ascontiguousarray(coords[..., j]).view(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class PotentialSpec:
    family: str
    p: float = 0.0
    v: float = 1.0
    rho: float = 0.0
    rate: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError("trap probability p must lie in [0, 1)")
        if self.v < 0 or self.rho < 0 or self.rate <= 0:
            raise ValueError("potential parameters must be nonnegative (rate positive)")
        if self.family == "two_point":
            if self.rho + self.p > 1.0:
                raise ValueError("rho + p exceeds 1")
            if self.rho + self.p == 1.0 and self.v > 0:
                raise ValueError("finite support must contain 0")
        if self.family == "constant_zero" and self.p != 0:
            raise ValueError("constant_zero has no traps")

    def to_dict(self) -> dict:
        return {"family": self.family, "p": self.p, "v": self.v, "rho": self.rho, "rate": self.rate}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PotentialSpec":
        return cls(**dict(data))

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Inverse distribution function applied to uniforms."""
        u = np.asarray(u, dtype=np.float64)
        out = np.zeros_like(u)
        if self.family == "constant_zero":
            return out
        trap = u < self.p
        if self.family == "two_point":
            out[(u >= self.p) & (u < self.p + self.rho)] = self.v
        elif self.family == "exp_trap":
            rest = ~trap
            w = (u[rest] - self.p) / (1.0 - self.p)
            out[rest] = -np.log1p(-w) / self.rate
        out[trap] = np.inf
        return out


@dataclass(frozen=True)
class Environment:
    spec: PotentialSpec
    seed: int
    origin_shift: tuple[int, ...] = ()

    def shift(self, x: LatticePoint | tuple[int, ...]) -> "Environment":
        c = x.coords() if isinstance(x, LatticePoint) else tuple(x)
        base = self.origin_shift or (0,) * len(c)
        return Environment(self.spec, self.seed, tuple(a + b for a, b in zip(base, c)))

    def values(self, coords: np.ndarray) -> np.ndarray:
        """Potential at an array of relative coordinates of shape (..., d+1)."""
        coords = np.asarray(coords, dtype=np.int64)
        if self.origin_shift:
            coords = coords + np.asarray(self.origin_shift, dtype=np.int64)
        return self.spec.transform(site_uniforms(self.seed, coords))

    def box(self, lo: tuple[int, ...], shape: tuple[int, ...]) -> np.ndarray:
        """Potential on the box lo + [0, shape), indexed [perp..., par]."""
        grids = np.meshgrid(*[np.arange(a, a + n) for a, n in zip(lo, shape)], indexing="ij")
        return self.values(np.stack(grids, axis=-1))


@dataclass(frozen=True)
class FixtureEnvironment:
    """Wraps an environment and pins values: at listed sites, or where ``rule``
    returns a non-NaN value.  Both act on absolute coordinates."""

    base: Environment
    pinned: Mapping[tuple[int, ...], float] = field(default_factory=dict)
    rule: Callable[[np.ndarray], np.ndarray] | None = None
    origin_shift: tuple[int, ...] = ()

    @property
    def spec(self) -> PotentialSpec:
        return self.base.spec

    @property
    def seed(self) -> int:
        return self.base.seed

    def shift(self, x: LatticePoint | tuple[int, ...]) -> "FixtureEnvironment":
        c = x.coords() if isinstance(x, LatticePoint) else tuple(x)
        base = self.origin_shift or (0,) * len(c)
        return FixtureEnvironment(self.base, self.pinned, self.rule, tuple(a + b for a, b in zip(base, c)))

    def values(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64)
        if self.origin_shift:
            coords = coords + np.asarray(self.origin_shift, dtype=np.int64)
        out = self.base.values(coords)
        if self.rule is not None:
            ruled = np.asarray(self.rule(coords), dtype=np.float64)
            mask = ~np.isnan(ruled)
            out = np.where(mask, ruled, out)
        if self.pinned:
            flat = coords.reshape(-1, coords.shape[-1])
            vals = out.reshape(-1)
            for i, c in enumerate(map(tuple, flat.tolist())):
                if c in self.pinned:
                    vals[i] = self.pinned[c]
            out = vals.reshape(out.shape)
        return out

    def box(self, lo, shape):
        grids = np.meshgrid(*[np.arange(a, a + n) for a, n in zip(lo, shape)], indexing="ij")
        return self.values(np.stack(grids, axis=-1))


def column_fixture(d: int, seed: int = 0) -> FixtureEnvironment:
    """V = 0 on the longitudinal axis and a trap everywhere else."""

    def rule(coords):
        on_axis = np.all(coords[..., :-1] == 0, axis=-1)
        return np.where(on_axis, 0.0, np.inf)

    return FixtureEnvironment(Environment(PotentialSpec("constant_zero"), seed), rule=rule)


def trap_shell_fixture(d: int, seed: int = 0, radius: int = 1) -> FixtureEnvironment:
    """Traps on the L-infinity sphere of the given radius around the origin, zero elsewhere."""

    def rule(coords):
        r = np.abs(coords).max(axis=-1)
        return np.where(r == radius, np.inf, 0.0)

    return FixtureEnvironment(Environment(PotentialSpec("constant_zero"), seed), rule=rule)


def potential_at(env, x: LatticePoint) -> float:
    return float(env.values(np.array([x.coords()]))[0])


def phi_beta(ell: int, beta: float, spec: PotentialSpec) -> float:
    """-log E exp(-beta * ell * V); traps are invisible at beta = 0."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if ell < 0:
        raise ValueError("local time must be nonnegative")
    if beta == 0 or ell == 0:
        return 0.0
    fam = spec.family
    if fam == "constant_zero":
        return 0.0
    if fam == "bernoulli_trap":
        return -math.log1p(-spec.p)
    if fam == "two_point":
        return -math.log((1.0 - spec.rho - spec.p) + spec.rho * math.exp(-beta * ell * spec.v))
    # exp_trap
    return -math.log((1.0 - spec.p) * spec.rate / (spec.rate + beta * ell))


def phi_table(spec: PotentialSpec, beta: float, max_ell: int) -> np.ndarray:
    return np.array([phi_beta(ell, beta, spec) for ell in range(max_ell + 1)])


def local_times(path) -> Counter:
    """Visits per site, the starting site excluded."""
    return Counter(path.points[1:])


def degenerate(spec: PotentialSpec, beta: float) -> bool:
    """True when exp(-beta V) is almost surely constant."""
    if beta == 0 or spec.family == "constant_zero":
        return True
    if spec.family == "two_point":
        return spec.p == 0 and (spec.rho == 0 or spec.v == 0)
    if spec.family == "bernoulli_trap":
        return spec.p == 0
    return False


def attractiveness_gap(path1, path2, beta: float, spec: PotentialSpec) -> float:
    """log E[W1 W2] - log(E[W1] E[W2]) for two paths.

    Length terms and sites visited by one path only cancel, leaving
    sum over shared sites of phi(a) + phi(b) - phi(a + b) >= 0.
    """
    l1 = local_times(path1)
    l2 = local_times(path2)
    terms = [phi_beta(a, beta, spec) + phi_beta(l2[x], beta, spec) - phi_beta(a + l2[x], beta, spec)
             for x, a in l1.items() if x in l2]
    return math.fsum(terms)


def attractiveness_check(spec: PotentialSpec, beta: float, d: int, pairs: int, seed: int,
                         max_len: int = 4) -> dict:
    """Gaps on random pairs drawn from all nearest-neighbour paths of length
    1..max_len from the origin.  Counts violations (gap < 0) and shared-site
    pairs whose gap is not strictly positive under a non-degenerate spec."""
    steps = unit_steps(d)
    paths = []
    for n in range(1, max_len + 1):
        for seq in itertools.product(steps, repeat=n):
            pts = [origin(d)]
            for s in seq:
                pts.append(pts[-1] + s)
            paths.append(LatticePath(tuple(pts)))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(paths), size=(pairs, 2))
    strict = not degenerate(spec, beta)
    violations = 0
    not_strict = 0
    shared = 0
    min_shared_gap = math.inf
    for i, j in idx.tolist():
        a, b = paths[i], paths[j]
        gap = attractiveness_gap(a, b, beta, spec)
        if gap < 0:
            violations += 1
        if set(a.points[1:]) & set(b.points[1:]):
            shared += 1
            min_shared_gap = min(min_shared_gap, gap)
            if strict and not gap > 0:
                not_strict += 1
    return {"pairs": pairs, "paths": len(paths), "violations": violations, "shared": shared,
            "not_strict": not_strict, "strict_expected": strict, "min_shared_gap": min_shared_gap}


class ClusterProbe(enum.Enum):
    CONNECTED_BEYOND_PROBE = "connected_beyond_probe"
    BLOCKED = "blocked"
    TRAPPED_SITE = "trapped_site"


def in_infinite_cluster(env, x: LatticePoint, probe_radius: int) -> ClusterProbe:
    """Breadth-first search over finite-potential sites inside the L-infinity ball."""
    if probe_radius < 1:
        raise ValueError("probe_radius must be at least 1")
    D = x.d + 1
    R = probe_radius
    lo = tuple(c - R for c in x.coords())
    field_ = env.box(lo, (2 * R + 1,) * D)
    open_ = np.isfinite(field_)
    start = (R,) * D
    if not open_[start]:
        return ClusterProbe.TRAPPED_SITE
    seen = np.zeros_like(open_)
    seen[start] = True
    queue = deque([start])
    while queue:
        s = queue.popleft()
        if any(c == 0 or c == 2 * R for c in s):
            return ClusterProbe.CONNECTED_BEYOND_PROBE
        for axis in range(D):
            for step in (1, -1):
                t = list(s)
                t[axis] += step
                t = tuple(t)
                if open_[t] and not seen[t]:
                    seen[t] = True
                    queue.append(t)
    return ClusterProbe.BLOCKED
