"""Effective random walks built from a renewal table.

The scaled irreducible masses of a renewal table form a probability law on
forward-cone steps.  Walks with i.i.d. steps from that law, pairs of them
observed at commonly hit heights, and the diamonds swept by their steps are
simulated here.  Sampling goes through Walker's alias table; replicas are
drawn in fixed-size blocks, each block with its own seed stream, so output
does not depend on the thread count.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
import numpy as np

from . import kernels
from .lattice import ConeAperture, Diamond, LatticePoint, diamonds_intersect, in_cone, origin
from .report import ExperimentReport, Timer, parallel_map, replica_seeds, summarize

BLOCK = 4096


class StepLaw:
    """A normalized law on steps x with x.par >= 1 inside the forward cone."""

    def __init__(self, atoms: dict, source_hash: str = "", tail_bound: float = 0.0,
                 aperture: ConeAperture = ConeAperture()):
        if not atoms:
            raise ValueError("empty step law")
        keys = sorted(x for x, w in atoms.items() if w > 0)
        o = origin(keys[0].d)
        for x in keys:
            if x.par < 1 or not in_cone(x, o, aperture):
                raise ValueError(f"atom {x} is not a forward-cone step")
        prob = np.array([float(atoms[x]) for x in keys])
        total = math.fsum(prob)
        if abs(total - 1.0) > tail_bound + 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        self.keys = keys
        self.d = keys[0].d
        self.aperture = aperture
        self.prob = prob / total
        self.heights = np.array([x.par for x in keys], dtype=np.int64)
        self.perp = np.array([x.perp for x in keys], dtype=np.int64).reshape(len(keys), self.d)
        self.source_hash = source_hash
        self.tail_bound = tail_bound
        self._alias_prob, self._alias = _alias_tables(self.prob)

    @property
    def atoms(self) -> dict:
        return dict(zip(self.keys, self.prob.tolist()))

    @classmethod
    def from_table(cls, table) -> "StepLaw":
        """Renormalised scaled q of a renewal table; the hash identifies the table."""
        digest = hashlib.sha256(table.to_json().encode()).hexdigest()[:16]
        q = table.q_by_endpoint
        total = math.fsum(q.values())
        return cls({x: w / total for x, w in q.items()}, digest, table.tail_bound, table.aperture)

    def sample_indices(self, rng: np.random.Generator, size) -> np.ndarray:
        n = len(self.prob)
        u = rng.random(size)
        v = rng.random(size)
        col = np.minimum((u * n).astype(np.int64), n - 1)
        return np.where(v < self._alias_prob[col], col, self._alias[col])


def _alias_tables(prob: np.ndarray):
    # Vose's construction
    n = len(prob)
    scaled = prob * n
    accept = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        accept[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    return accept, alias


@dataclass(frozen=True)
class SyncStep:
    t: int
    u: LatticePoint
    v: LatticePoint

    def __post_init__(self):
        if not (self.t >= 1 and self.u.par == self.t and self.v.par == self.t):
            raise ValueError("sync step needs t = u.par = v.par >= 1")


def sample_walks(law: StepLaw, count: int, steps: int, rng: np.random.Generator,
                 start=None) -> np.ndarray:
    """Positions of `count` walks, shape (count, steps+1, d+1), longitudinal last."""
    idx = law.sample_indices(rng, (count, steps))
    inc = np.concatenate([law.perp[idx], law.heights[idx][..., None]], axis=2)
    out = np.zeros((count, steps + 1, law.d + 1), dtype=np.int64)
    if start is not None:
        out[:, 0, :] = np.asarray(start, dtype=np.int64)
    np.cumsum(inc, axis=1, out=out[:, 1:, :])
    out[:, 1:, :] += out[:, :1, :]
    return out


def sample_walk(law: StepLaw, steps: int, seed: int) -> list[LatticePoint]:
    rng = np.random.default_rng(seed)
    arr = sample_walks(law, 1, steps, rng)[0]
    return [LatticePoint(tuple(r[:-1]), r[-1]) for r in arr.tolist()]


def _as_array(path) -> np.ndarray:
    if isinstance(path, np.ndarray):
        return path.astype(np.int64, copy=False)
    return np.array([x.coords() for x in path], dtype=np.int64)


def _sync_indices(hx: np.ndarray, hy: np.ndarray):
    """Index pairs (i, j) with hx[i] == hy[j], for increasing height sequences."""
    common, ix, iy = np.intersect1d(hx, hy, assume_unique=True, return_indices=True)
    return ix, iy


def synchronize(x_path, y_path) -> list[SyncStep]:
    """Steps of the pair observed at the heights hit by both paths."""
    X = _as_array(x_path)
    Y = _as_array(y_path)
    if X[0, -1] != 0 or Y[0, -1] != 0:
        raise ValueError("both paths must start at height 0")
    ix, iy = _sync_indices(X[:, -1], Y[:, -1])
    out = []
    for a0, b0, a1, b1 in zip(ix[:-1], iy[:-1], ix[1:], iy[1:]):
        du = X[a1] - X[a0]
        dv = Y[b1] - Y[b0]
        out.append(SyncStep(int(du[-1]), LatticePoint(tuple(du[:-1]), du[-1]),
                            LatticePoint(tuple(dv[:-1]), dv[-1])))
    return out


def near_collision(t: int, z_perp, aperture: ConeAperture = ConeAperture()) -> bool:
    """t > alpha * |z| with alpha = 1/(2 delta), as an integer comparison."""
    z2 = sum(int(c) * int(c) for c in z_perp)
    return aperture.q ** 2 * z2 < 4 * aperture.p ** 2 * t * t


def _may_meet(a0, a1, b0, b1, p, q) -> bool:
    # necessary condition for D(a0,a1) and D(b0,b1) to meet: some height s in the
    # common open range with |a0-b0| < delta(2s - a0.par - b0.par) and the same from the tips
    lo = max(a0[-1], b0[-1])
    hi = min(a1[-1], b1[-1])
    if lo >= hi:
        return False
    z0 = a0[:-1] - b0[:-1]
    z1 = a1[:-1] - b1[:-1]
    r0 = 2 * hi - a0[-1] - b0[-1]
    r1 = a1[-1] + b1[-1] - 2 * lo
    return (q * q * int(z0 @ z0) < p * p * r0 * r0) and (q * q * int(z1 @ z1) < p * p * r1 * r1)


def _meet(a0, a1, b0, b1, aperture: ConeAperture) -> bool:
    if not _may_meet(a0, a1, b0, b1, aperture.p, aperture.q):
        return False
    pt = lambda r: LatticePoint(tuple(int(c) for c in r[:-1]), int(r[-1]))
    return diamonds_intersect(Diamond(pt(a0), pt(a1), aperture), Diamond(pt(b0), pt(b1), aperture))


def diamond_intersection_number(x_path, y_path, aperture: ConeAperture = ConeAperture(),
                                horizon: int | None = None) -> int:
    """Number of pairs (k, l) whose step diamonds D(x_{k-1}, x_k), D(y_{l-1}, y_l) meet.

    Only steps ending at height <= horizon count.  Step height ranges increase
    along each path, so a two-pointer sweep visits only overlapping bands.
    """
    X = _as_array(x_path)
    Y = _as_array(y_path)
    if horizon is not None:
        X = X[: int(np.searchsorted(X[:, -1], horizon, side="right"))]
        Y = Y[: int(np.searchsorted(Y[:, -1], horizon, side="right"))]
    count = 0
    j0 = 0
    ny = len(Y) - 1
    for k in range(1, len(X)):
        a0, a1 = X[k - 1], X[k]
        while j0 < ny and Y[j0 + 1, -1] <= a0[-1]:
            j0 += 1
        j = j0
        while j < ny and Y[j, -1] < a1[-1]:
            if _meet(a0, a1, Y[j], Y[j + 1], aperture):
                count += 1
            j += 1
    return count


def sync_bound(x_path, y_path, aperture: ConeAperture = ConeAperture(),
               horizon: int | None = None) -> int:
    """sum_k T_k 1{D_k(U) and D_k(V) meet} over sync spans starting below the horizon.

    Dominates diamond_intersection_number with the same horizon.
    """
    X = _as_array(x_path)
    Y = _as_array(y_path)
    ix, iy = _sync_indices(X[:, -1], Y[:, -1])
    total = 0
    for a0, b0, a1, b1 in zip(ix[:-1], iy[:-1], ix[1:], iy[1:]):
        if horizon is not None and X[a0, -1] >= horizon:
            break
        if _meet(X[a0], X[a1], Y[b0], Y[b1], aperture):
            total += int(X[a1, -1] - X[a0, -1])
    return total


def surrogate_violations(x_path, y_path, aperture: ConeAperture = ConeAperture()) -> int:
    """Sync steps whose diamonds meet although T_k <= alpha |Z_{k-1}|; should be 0."""
    X = _as_array(x_path)
    Y = _as_array(y_path)
    ix, iy = _sync_indices(X[:, -1], Y[:, -1])
    bad = 0
    for a0, b0, a1, b1 in zip(ix[:-1], iy[:-1], ix[1:], iy[1:]):
        t = int(X[a1, -1] - X[a0, -1])
        if _meet(X[a0], X[a1], Y[b0], Y[b1], aperture) and not near_collision(t, X[a0, :-1] - Y[b0, :-1], aperture):
            bad += 1
    return bad


# ---- batched pair simulation -------------------------------------------------

def _blocks(total: int, seed: int):
    n = -(-total // BLOCK)
    seeds = replica_seeds(seed, n)
    return [(s, min(BLOCK, total - i * BLOCK)) for i, s in enumerate(seeds)]


def _pair_block(law: StepLaw, count: int, steps: int, seed: int, y_start=None):
    rng = np.random.default_rng(seed)
    X = sample_walks(law, count, steps, rng)
    Y = sample_walks(law, count, steps, rng, start=y_start)
    return X, Y


def _sync_batch(X: np.ndarray, Y: np.ndarray, cap: int | None = None):
    """Sync index arrays (count, cap) padded with -1, and per-pair counts.

    Index 0 of both walks (height 0) is always the first synchronized pair.
    """
    count, n1 = X.shape[0], X.shape[1]
    cap = cap or n1
    hx = np.ascontiguousarray(X[:, :, -1])
    hy = np.ascontiguousarray(Y[:, :, -1])
    lens = np.full(count, n1, dtype=np.int64)
    ix = np.full((count, cap), -1, dtype=np.int64)
    iy = np.full((count, cap), -1, dtype=np.int64)
    cnt = np.zeros(count, dtype=np.int64)
    kernels.sync_pairs(hx, hy, lens, lens, ix, iy, cnt)
    return ix, iy, cnt


def first_sync_spans(law: StepLaw, pairs: int, seed: int, horizon: int, threads: int = 1) -> np.ndarray:
    """T of the first sync step for `pairs` independent pairs from the origin;
    horizon + 1 marks pairs with no common height up to the horizon."""
    def one(block):
        s, n = block
        X, Y = _pair_block(law, n, horizon, s)
        ix, iy, cnt = _sync_batch(X, Y, cap=2)
        T = np.full(n, horizon + 1, dtype=np.int64)
        hit = cnt >= 2
        T[hit] = X[np.nonzero(hit)[0], ix[hit, 1], -1]
        T[T > horizon] = horizon + 1
        return T
    return np.concatenate(parallel_map(one, _blocks(pairs, seed), threads))


def sync_span_tail(law: StepLaw, pairs: int, seed: int, ell_range=(2, 12), threads: int = 1) -> ExperimentReport:
    """Empirical P(T > l) of the first sync span and a log-linear fit over l in ell_range."""
    lo, hi = ell_range
    with Timer() as clock:
        T = first_sync_spans(law, pairs, seed, hi + 1, threads)
    rep = ExperimentReport("sync_tail", pairs, provenance={"base_seed": seed, "block": BLOCK,
                                                           "law": law.source_hash},
                           wall_time=clock.elapsed)
    ells = np.arange(1, hi + 1)
    xs, ys = [], []
    for ell in ells:
        c = int((T > ell).sum())
        p = c / pairs
        se = math.sqrt(p * (1 - p) / pairs)
        rep.per_N[int(ell)] = {"count": c, "tail": p, "se": se}
        rep.rows.append({"ell": int(ell), "tail": p, "ci_lo": p - 1.96 * se, "ci_hi": p + 1.96 * se, "count": c})
        if lo <= ell <= hi and c > 0:
            xs.append(float(ell))
            ys.append(math.log(p))
    if len(xs) >= 3:
        slope, icpt, r2 = _linfit(np.array(xs), np.array(ys))
        rep.fitted.update({"kappa": -slope, "intercept": icpt, "r2": r2, "points": len(xs)})
    else:
        rep.fitted.update({"kappa": float("nan"), "intercept": float("nan"), "r2": float("nan"), "points": len(xs)})
    return rep


def _linfit(x: np.ndarray, y: np.ndarray):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def exact_sync_law(law: StepLaw, t_max: int) -> dict:
    """P(T = t, U = u, V = v) for t <= t_max by enumerating both walks' step
    sequences up to height t; keys (t, u_perp, v_perp)."""
    small = [(int(h), tuple(int(c) for c in pp), float(w))
             for h, pp, w in zip(law.heights, law.perp, law.prob) if h <= t_max]
    # paths[t] maps (visited intermediate heights, endpoint perp) -> probability
    paths = {0: {(frozenset(), (0,) * law.d): 1.0}}
    for t in range(1, t_max + 1):
        cur = {}
        for h, pp, w in small:
            if h > t:
                continue
            for (hs, end), pw in paths[t - h].items():
                key = (hs | {t - h} if t - h > 0 else hs, tuple(a + b for a, b in zip(end, pp)))
                cur[key] = cur.get(key, 0.0) + pw * w
        paths[t] = cur
    out = {}
    for t in range(1, t_max + 1):
        for (hx, u), wx in paths[t].items():
            for (hy, v), wy in paths[t].items():
                if hx.isdisjoint(hy):
                    out[(t, u, v)] = out.get((t, u, v), 0.0) + wx * wy
    return out


def sampled_sync_law(law: StepLaw, pairs: int, seed: int, t_max: int, threads: int = 1) -> dict:
    """Empirical frequencies of the first sync step (t, u_perp, v_perp) with t <= t_max."""
    def one(block):
        s, n = block
        X, Y = _pair_block(law, n, t_max, s)
        ix, iy, cnt = _sync_batch(X, Y, cap=2)
        hit = np.nonzero(cnt >= 2)[0]
        res = {}
        for r in hit:
            a, b = ix[r, 1], iy[r, 1]
            if X[r, a, -1] > t_max:
                continue
            key = (int(X[r, a, -1]), tuple(int(c) for c in X[r, a, :-1]), tuple(int(c) for c in Y[r, b, :-1]))
            res[key] = res.get(key, 0) + 1
        return res
    total = {}
    for res in parallel_map(one, _blocks(pairs, seed), threads):
        for k, v in res.items():
            total[k] = total.get(k, 0) + v
    return {k: v / pairs for k, v in sorted(total.items())}


def bubble_statistics(law: StepLaw, aperture: ConeAperture, replicas: int, seed: int,
                      B_list=(4, 8, 16, 32), eta_grid=(0.0, 0.02, 0.05, 0.1), start_perp=None,
                      eta_I: float = 0.0, moment_replicas: int | None = None,
                      threads: int = 1) -> ExperimentReport:
    """Near-collision weight I(B) and exponential moments of the synchronized pair.

    I(B) = E sum_m T_m e^{eta_I T_m} 1{n_m = B, T_m > alpha |Z_{m-1}|}, where n_m are
    the sync heights and Z the transverse difference at sync heights; reported
    as I(B) B^{d/2} with a weighted trend test in log B.  The moments are
    E exp(eta S) with S = sum_k T_k 1{D_k(U), D_k(V) meet}, over the spans up to
    max(B) and up to half of it.
    """
    d = law.d
    B_list = sorted(int(b) for b in B_list)
    H = B_list[-1]
    z0 = np.zeros(d + 1, dtype=np.int64)
    if start_perp is not None:
        z0[:d] = np.asarray(start_perp, dtype=np.int64)
    p2, q2 = aperture.p ** 2, aperture.q ** 2
    m_rep = replicas if moment_replicas is None else min(replicas, moment_replicas)

    def one(block):
        s, n = block
        X, Y = _pair_block(law, n, H, s, y_start=z0)
        ix, iy, cnt = _sync_batch(X, Y)
        rows = np.arange(n)[:, None]
        hs = np.where(ix >= 0, X[rows, np.maximum(ix, 0), -1], -1)
        contrib = np.zeros((n, len(B_list)))
        for m in range(1, ix.shape[1]):
            ok = cnt > m
            if not ok.any():
                break
            r = np.nonzero(ok)[0]
            t = hs[r, m] - hs[r, m - 1]
            z = X[r, ix[r, m - 1], :d] - Y[r, iy[r, m - 1], :d]
            near = q2 * (z * z).sum(axis=1) < 4 * p2 * t * t
            for j, B in enumerate(B_list):
                sel = near & (hs[r, m] == B)
                contrib[r[sel], j] += t[sel] * np.exp(eta_I * t[sel])
        return contrib

    def moments(block):
        s, n = block
        X, Y = _pair_block(law, n, H, s, y_start=z0)
        out = np.zeros((n, 2), dtype=np.int64)
        for r in range(n):
            out[r, 0] = sync_bound(X[r], Y[r], aperture, H // 2)
            out[r, 1] = sync_bound(X[r], Y[r], aperture, H)
        return out

    with Timer() as clock:
        I = np.concatenate(parallel_map(one, _blocks(replicas, seed), threads))
        S = np.concatenate(parallel_map(moments, _blocks(m_rep, seed + 1), threads)) if m_rep else np.zeros((0, 2))
    rep = ExperimentReport("bubbles", replicas,
                           provenance={"base_seed": seed, "block": BLOCK, "law": law.source_hash,
                                       "start_perp": z0[:d].tolist(), "eta_I": eta_I},
                           wall_time=clock.elapsed)
    ys, ses = [], []
    for j, B in enumerate(B_list):
        st = summarize(I[:, j])
        se = st["sd"] / math.sqrt(max(1, st["n"]))
        scale = B ** (d / 2)
        st.update({"se": se, "scaled": st["mean"] * scale, "scaled_se": se * scale})
        rep.per_N[B] = st
        ys.append(st["mean"] * scale)
        ses.append(se * scale)
        rep.rows.append({"B": B, "I": st["mean"], "scaled": st["mean"] * scale,
                         "ci_lo": (st["mean"] - 1.96 * se) * scale, "ci_hi": (st["mean"] + 1.96 * se) * scale})
    rep.fitted.update(_trend_test(np.log2(np.array(B_list, dtype=float)), np.array(ys), np.array(ses)))
    mom = {}
    for eta in eta_grid:
        entry = {}
        for col, label in ((0, "half"), (1, "full")):
            vals = np.exp(eta * S[:, col].astype(np.float64)) if len(S) else np.zeros(0)
            st = summarize(vals)
            st["se"] = st["sd"] / math.sqrt(max(1, st["n"]))
            entry[label] = st
        entry["growth"] = entry["full"]["mean"] / entry["half"]["mean"] if entry["half"]["mean"] else float("nan")
        mom[repr(float(eta))] = entry
    rep.extra["exp_moments"] = mom
    rep.extra["moment_replicas"] = int(len(S))
    rep.extra["S_max"] = int(S[:, 1].max()) if len(S) else 0
    return rep


def _trend_test(x: np.ndarray, y: np.ndarray, se: np.ndarray) -> dict:
    """Weighted least squares slope of y on x; an increasing trend is declared when
    the one-sided 95% lower bound of the slope is positive."""
    ok = se > 0
    if ok.sum() < 2:
        return {"trend_slope": float("nan"), "trend_se": float("nan"), "increasing_trend": False}
    w = 1.0 / se[ok] ** 2
    xs, ys = x[ok], y[ok]
    xm = (w * xs).sum() / w.sum()
    ym = (w * ys).sum() / w.sum()
    sxx = (w * (xs - xm) ** 2).sum()
    slope = float((w * (xs - xm) * (ys - ym)).sum() / sxx)
    slope_se = float(math.sqrt(1.0 / sxx))
    return {"trend_slope": slope, "trend_se": slope_se,
            "increasing_trend": bool(slope - 1.645 * slope_se > 0)}


def intersection_vs_separation(law: StepLaw, aperture: ConeAperture, r_list, replicas: int, seed: int,
                               horizon: int, threads: int = 1) -> ExperimentReport:
    """Mean diamond intersection number of two walks started at transverse distance r
    (along the first axis), with a power-law fit against r."""
    d = law.d
    r_list = sorted(int(r) for r in r_list)
    rep = ExperimentReport("intersections", replicas, provenance={"base_seed": seed, "law": law.source_hash})
    means = []
    with Timer() as clock:
        for i, r in enumerate(r_list):
            start = np.zeros(d + 1, dtype=np.int64)
            start[0] = r

            def one(block, start=start):
                s, n = block
                X, Y = _pair_block(law, n, horizon, s, y_start=start)
                return [diamond_intersection_number(X[k], Y[k], aperture, horizon) for k in range(n)]

            vals = [v for part in parallel_map(one, _blocks(replicas, seed + i), threads) for v in part]
            st = summarize(vals)
            st["se"] = st["sd"] / math.sqrt(max(1, st["n"]))
            rep.per_N[r] = st
            means.append(st["mean"])
            rep.rows.append({"r": r, "mean": st["mean"], "ci_lo": st["ci_lo"], "ci_hi": st["ci_hi"]})
    rep.wall_time = clock.elapsed
    pos = [(r, m) for r, m in zip(r_list, means) if m > 0]
    if len(pos) >= 2:
        slope, icpt, r2 = _linfit(np.log([r for r, _ in pos]), np.log([m for _, m in pos]))
        rep.fitted.update({"exponent": -slope, "reference_exponent": d / 2 - 1, "r2": r2})
    return rep
