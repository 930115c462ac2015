"""Quenched partition functions over crossing and cone-restricted path families.

Two engines:

* a layered Neumann sweep on a padded box for the crossing family ``D``
  (paths that stay strictly below height N and first arrive there on the
  last step), with a rigorous bound on truncated mass;
* an exhaustive depth-first enumeration, truncated by excess (length minus
  height gain), for every family.  Excess is additive under concatenation,
  so renewal identities hold exactly between excess-truncated tables.

Families: ``D`` first-arrival crossings; ``T`` cone-confined paths; ``T0``
cone-confined with no cone point; ``Tl`` strictly inside the backward cone
of the end, no cone point; ``Tr`` strictly inside the forward cone of the
start, first arrival at the top, no cone point.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import BudgetExceeded, NonConvergence
from .lattice import ConeAperture, LatticePoint, origin

KINDS = ("D", "T", "T0", "Tl", "Tr")
# (forward cone at the start, backward cone at the end, no cone points)
_FLAGS = {
    "D": (False, False, False),
    "T": (True, True, False),
    "T0": (True, True, True),
    "Tl": (False, True, True),
    "Tr": (True, False, True),
}
DEFAULT_BUDGET = 2_000_000_000


@dataclass(frozen=True)
class ModelParams:
    d: int
    lam: float
    beta: float = 0.0
    aperture: ConeAperture = ConeAperture()

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be a positive integer")
        if not self.lam > self.lam0:
            raise ValueError(f"lambda must exceed log(2d+2) = {self.lam0:.6f}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def lam0(self) -> float:
        return math.log(2 * self.d + 2)

    @property
    def contraction(self) -> float:
        return (2 * self.d + 2) * math.exp(-self.lam)

    def with_(self, **kw) -> "ModelParams":
        data = dict(d=self.d, lam=self.lam, beta=self.beta, aperture=self.aperture)
        data.update(kw)
        return ModelParams(**data)


@dataclass(frozen=True)
class PathEnsembleSpec:
    kind: str
    N: int
    endpoint: LatticePoint | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.N < 0:
            raise ValueError("N must be nonnegative")


def free_first_passage(d: int, lam: float) -> float:
    """Total weight of first-passage paths one level up at zero disorder."""
    a = math.exp(-lam)
    b = 1.0 - 2 * d * a
    disc = b * b - 4 * a * a
    if disc < 0 or b <= 0:
        raise ValueError("no contraction at this lambda")
    # smaller root of a F^2 + (2 d a - 1) F + a = 0, in a cancellation-free form
    return 2 * a / (b + math.sqrt(disc))


def column_first_passage(lam: float) -> float:
    a = math.exp(-lam)
    return 2 * a / (1.0 + math.sqrt(1.0 - 4 * a * a))


def site_factors(values: np.ndarray, beta: float) -> np.ndarray:
    """exp(-beta V) with traps mapped to 0 (to 1 at beta = 0, where traps are invisible)."""
    values = np.asarray(values, dtype=np.float64)
    if beta == 0:
        return np.ones_like(values)
    out = np.zeros_like(values)
    finite = np.isfinite(values)
    out[finite] = np.exp(-beta * values[finite])
    return out


# ---------------------------------------------------------------- layered sweep


@dataclass
class SlabGreen:
    """Result of the layered sweep towards height N."""

    N: int
    box_halfwidth: int
    depth: int
    value: float
    arrival: np.ndarray  # arrival mass on L_N, indexed by transverse offset + halfwidth
    error_bound: float  # escaped plus unfinished mass times the free continuation
    tail_bound: float  # r^(L+1) / (1 - r) after L sweeps, r the contraction
    sweeps: int
    escaped: float = 0.0
    unfinished: float = 0.0
    escaped_side: float = 0.0
    escaped_floor: float = 0.0
    values: np.ndarray | None = None  # accumulated Green function on the box, if kept

    def endpoint_measure(self) -> np.ndarray:
        total = self.arrival.sum()
        if total <= 0:
            return np.zeros_like(self.arrival)
        return self.arrival / total


def slab_green(env, params: ModelParams, N: int, tol: float, halfwidth: int | None = None,
               depth: int | None = None, keep_values: bool = False, max_sweeps: int = 100_000) -> SlabGreen:
    """Layered Neumann sweep with absorbing sides and floor.

    Site factors never exceed 1, so a box whose escaped mass is below tol / 2
    for free weights is large enough for every environment; the box is
    planned once per (d, lambda, N, tol) on free weights.  Sweeps stop once
    the unfinished mass bound is below tol / 2.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if halfwidth is None or depth is None:
        w, B = plan_box(params.d, params.lam, N, tol)
        halfwidth = w if halfwidth is None else halfwidth
        depth = B if depth is None else depth
    return _sweep(env, params, N, tol, halfwidth, depth, keep_values, max_sweeps)


class _FreeField:
    def box(self, lo, shape):
        return np.zeros(shape)


@lru_cache(maxsize=256)
def plan_box(d: int, lam: float, N: int, tol: float, max_halfwidth: int = 256) -> tuple[int, int]:
    """Smallest grown box (halfwidth, depth) whose free escaped mass is below tol / 2."""
    params = ModelParams(d, lam, 0.0)
    w = 2 + math.ceil(math.sqrt(N))
    B = max(2, w // 2)
    while True:
        res = _sweep(_FreeField(), params, N, tol, w, B, False, 100_000)
        side_ok = res.escaped_side <= tol / 4
        floor_ok = res.escaped_floor <= tol / 4
        if side_ok and floor_ok:
            return w, B
        if w >= max_halfwidth or B >= max_halfwidth:
            raise NonConvergence(f"box leakage above tolerance at halfwidth {w}, depth {B}")
        if not side_ok:
            w += 1 + w // 4
        if not floor_ok:
            B += 1 + B // 4


def _sweep(env, params, N, tol, w, B, keep_values, max_sweeps):
    d = params.d
    F = free_first_passage(d, params.lam)
    e_lam = math.exp(-params.lam)
    side = 2 * w + 3
    rows = N + B + 2  # row 0 is the floor at height -B-1, row N+B+1 is height N
    shape = (side,) * d + (rows,)
    lo = (-w - 1,) * d + (-B - 1,)
    fac = site_factors(env.box(lo, shape), params.beta)
    heights = np.arange(rows) - B - 1
    interior_t = np.zeros((side,) * d, dtype=bool)
    interior_t[(slice(1, -1),) * d] = True
    interior_h = (heights >= -B) & (heights <= N - 1)
    interior = interior_t[..., None] & interior_h
    top = interior_t[..., None] & (heights == N)
    sides = ~interior_t[..., None] & (heights >= -B)
    cont = F ** (N - heights.astype(np.float64))
    A = np.where(interior, e_lam * fac, 0.0).ravel()
    R = np.where(top, e_lam * fac, 0.0).ravel()
    E = np.where(sides, e_lam * cont, 0.0).ravel()
    contw = np.broadcast_to(cont, shape).ravel()
    # floor escapes come only from the lowest interior row
    row1 = np.zeros(shape, dtype=bool)
    row1[..., 1] = interior_t
    row1 = np.flatnonzero(row1.ravel())
    floor_cost = e_lam * F ** (N + B + 1)
    P = np.zeros(A.size)
    start = np.ravel_multi_index((w + 1,) * d + (B + 1,), shape)
    P[start] = 1.0
    Pn = np.empty_like(P)
    arrival = np.zeros(A.size)
    G = P.copy() if keep_values else None
    esc_side = 0.0
    esc_floor = 0.0
    r = params.contraction
    rem = float(P @ contw)
    L = 0
    while L < max_sweeps:
        esc_floor += floor_cost * float(P[row1].sum())
        esc_side += kernels.dp_sweep(P, A, R, E, shape, arrival, Pn)
        P, Pn = Pn, P
        L += 1
        if keep_values:
            G += P
        if L >= N and (L % 4 == 0 or L == N):
            rem = float(P @ contw)
            if rem <= tol / 2:
                break
    else:
        raise NonConvergence("unfinished mass above tolerance")
    arr = arrival.reshape(shape)[..., -1][(slice(1, -1),) * d].copy()
    esc = esc_side + esc_floor
    return SlabGreen(
        N=N, box_halfwidth=w, depth=B, value=float(arr.sum()), arrival=arr,
        error_bound=esc + rem, tail_bound=r ** (L + 1) / (1 - r), sweeps=L,
        escaped=esc, unfinished=rem, escaped_side=esc_side, escaped_floor=esc_floor,
        values=G.reshape(shape) if keep_values else None,
    )


def quenched_partition(env, params: ModelParams, N: int, tol: float = 1e-12) -> float:
    """Crossing partition function at height N to absolute tolerance ``tol``."""
    return slab_green(env, params, N, tol).value


# ---------------------------------------------------------------- enumeration


@dataclass
class ExcessTable:
    """Weights by relative height, transverse offset and excess.

    ``data[h, t, e]`` with t the C-order index of the transverse offset in
    [-k, k]^d.  Heights run 0..H; entry [0, centre, 0] is the empty path.
    """

    kind: str
    d: int
    k: int
    data: np.ndarray
    nodes: int = 0

    @property
    def H(self) -> int:
        return self.data.shape[0] - 1

    @property
    def width(self) -> int:
        return 2 * self.k + 1

    def offsets(self) -> np.ndarray:
        W = self.width
        grid = np.indices((W,) * self.d).reshape(self.d, -1).T
        return grid - self.k

    def index(self, perp) -> int:
        t = 0
        for c in perp:
            if abs(c) > self.k:
                return -1
            t = t * self.width + (c + self.k)
        return t

    def by_height(self, h: int) -> np.ndarray:
        return self.data[h].sum(axis=1)

    def total(self, h: int) -> float:
        return float(self.data[h].sum())

    def vector(self, perp, h: int) -> np.ndarray:
        t = self.index(perp)
        if t < 0 or h > self.H or h < 0:
            return np.zeros(self.k + 1)
        return self.data[h, t]

    def entries(self, h: int):
        """(perp, excess vector) for nonzero endpoints at relative height h."""
        offs = self.offsets()
        layer = self.data[h]
        for t in np.flatnonzero(layer.any(axis=1)):
            yield tuple(int(c) for c in offs[t]), layer[t]

    def by_endpoint(self, h: int) -> dict:
        return {LatticePoint(perp, h): float(v.sum()) for perp, v in self.entries(h)}


def _annealed_increments(spec, beta: float, length: int) -> np.ndarray:
    from .environment import phi_table

    phi = phi_table(spec, beta, length + 1)
    return np.exp(-(phi[1:] - phi[:-1]))


def enumerate_table(kind: str, params: ModelParams, H: int, k: int, env=None, start=None,
                    h_lo: int = 1, annealed_spec=None, budget_nodes: int = DEFAULT_BUDGET) -> ExcessTable:
    """Enumerate a family up to relative height H and excess k.

    The start is the absolute site ``start`` of ``env`` (default the origin).
    With ``annealed_spec`` set, weights are expectations over the potential
    instead (visit counts enter through the one-site annealed potential).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown ensemble kind {kind!r}")
    if H < 0 or k < 0:
        raise ValueError("H and k must be nonnegative")
    d = params.d
    start = start if start is not None else origin(d)
    W = 2 * k + 1
    down = k // 2
    lo = tuple(c - k for c in start.perp) + (start.par - down,)
    shape = (W,) * d + (H + down + 1,)
    if annealed_spec is not None:
        site = np.zeros(int(np.prod(shape)))
        inc = _annealed_increments(annealed_spec, params.beta, H + k + 2)
        annealed = True
    else:
        if env is None:
            raise ValueError("an environment is required for quenched weights")
        site = np.ascontiguousarray(site_factors(env.box(lo, shape), params.beta).ravel())
        inc = np.ones(1)
        annealed = False
    out = np.zeros((H + 1, W ** d, k + 1))
    fwd, bwd, nocone = _FLAGS[kind]
    if H >= 1:
        nodes = kernels.enumerate_paths(
            site, shape, (k,) * d + (down,), d, math.exp(-params.lam), annealed, inc,
            max(h_lo, 1), H, k, fwd, bwd, nocone, params.aperture.p, params.aperture.q,
            out, int(budget_nodes),
        )
        if nodes < 0:
            raise BudgetExceeded(f"enumeration of {kind} to height {H} exceeded {budget_nodes} nodes")
    else:
        nodes = 0
    if kind in ("T", "Tr", "D"):
        # empty path convention
        out[0, (W ** d) // 2, 0] = 1.0
    return ExcessTable(kind, d, k, out, nodes)


def enumerate_partition(env, params: ModelParams, N: int, max_len: int,
                        ensemble: PathEnsembleSpec | None = None,
                        budget_nodes: int = DEFAULT_BUDGET) -> tuple[float, float]:
    """Exhaustive sum over paths of length <= max_len; returns (value, tail bound)."""
    if max_len < N:
        raise ValueError("max_len must be at least N")
    ensemble = ensemble or PathEnsembleSpec("D", N)
    table = enumerate_table(ensemble.kind, params, N, max_len - N, env=env, h_lo=N,
                            budget_nodes=budget_nodes)
    return _ensemble_value(table, ensemble, N), _geometric_tail(params, max_len)


def _ensemble_value(table: ExcessTable, ensemble: PathEnsembleSpec, N: int) -> float:
    if ensemble.endpoint is not None:
        if ensemble.endpoint.par != N:
            return 0.0
        return float(table.vector(ensemble.endpoint.perp, N).sum())
    return table.total(N)


def _geometric_tail(params: ModelParams, max_len: int) -> float:
    r = params.contraction
    return r ** (max_len + 1) / (1 - r)


@dataclass
class EnsembleWeights:
    kind: str
    by_endpoint: dict = field(default_factory=dict)
    scaled: bool = False

    def total(self) -> float:
        return float(sum(self.by_endpoint.values()))

    def rows(self):
        for x in sorted(self.by_endpoint):
            yield x.perp + (x.par,), self.by_endpoint[x]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            d = len(next(iter(self.by_endpoint)).perp) if self.by_endpoint else 1
            wr.writerow([f"perp{i}" for i in range(d)] + ["par", "weight"])
            for coords, w in self.rows():
                wr.writerow(list(coords) + [repr(float(w))])


def restricted_weights(env, params: ModelParams, N: int, kind: str, max_len: int,
                       mode: str = "enumerate", budget_nodes: int = DEFAULT_BUDGET) -> EnsembleWeights:
    """Per-endpoint weights at height N; ``mode='convolution'`` builds T from T0 pieces."""
    if max_len < N:
        raise ValueError("max_len must be at least N")
    k = max_len - N
    if mode == "enumerate":
        table = enumerate_table(kind, params, N, k, env=env, budget_nodes=budget_nodes)
    elif mode == "convolution":
        if kind != "T":
            raise ValueError("convolution mode is available for kind T only")
        table = quenched_t_by_convolution(env, params, N, k, budget_nodes=budget_nodes)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return EnsembleWeights(kind, table.by_endpoint(N))


def convolve_excess(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    return np.convolve(a, b)[: k + 1]


def quenched_t_by_convolution(env, params: ModelParams, H: int, k: int,
                              budget_nodes: int = DEFAULT_BUDGET, q_cache: dict | None = None) -> ExcessTable:
    """Cone-confined weights from irreducible ones: t_x = sum_y t_y q^{theta_y}_{x-y}.

    Heights are processed upwards; each reached site y contributes its own
    shifted irreducible table.  ``q_cache`` maps absolute sites to tables and
    may be shared between calls on the same environment.
    """
    d = params.d
    W = 2 * k + 1
    out = np.zeros((H + 1, W ** d, k + 1))
    proto = ExcessTable("T", d, k, out)
    out[0, proto.index((0,) * d), 0] = 1.0
    cache = q_cache if q_cache is not None else {}
    for h in range(H):
        for perp, vec in list(proto.entries(h)):
            emin = int(np.flatnonzero(vec)[0])
            kk = k - emin
            y = LatticePoint(perp, h)
            q = _cached_q(cache, env, params, y, H - h, kk, budget_nodes)
            for h2 in range(1, H - h + 1):
                for dperp, qvec in q.entries(h2):
                    x = tuple(a + b for a, b in zip(perp, dperp))
                    t = proto.index(x)
                    if t < 0:
                        continue
                    out[h + h2, t] += convolve_excess(vec, _pad(qvec, k), k)
    return proto


def _pad(v, k):
    if len(v) >= k + 1:
        return v[: k + 1]
    return np.concatenate([v, np.zeros(k + 1 - len(v))])


def _cached_q(cache, env, params, y, H, k, budget):
    key = (y, "T0")
    hit = cache.get(key)
    if hit is not None and hit.H >= H and hit.k >= k:
        return hit
    table = enumerate_table("T0", params, H, k, env=env, start=y, budget_nodes=budget)
    cache[key] = table
    return table
