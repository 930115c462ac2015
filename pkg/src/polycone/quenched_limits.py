"""Quenched limit objects: partial sums s_N, Sinai-type expansions, ratio and
diffusive experiments, and the positivity probe.

Everything here is computed on excess-truncated tables (see ``pathsum``).
Irreducible and cone-confined weights are scaled by exp(h xi) with xi from
the annealed table, and every convolution keeps total excess <= k, so the
identities below hold exactly up to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .annealed import RenewalTable, fit_decay
from .environment import ClusterProbe, Environment, PotentialSpec, in_infinite_cluster
from .lattice import LatticePoint, origin
from .pathsum import (DEFAULT_BUDGET, ExcessTable, ModelParams, convolve_excess, enumerate_table,
                      free_first_passage, quenched_t_by_convolution, slab_green)
from .report import ExperimentReport, Timer, parallel_map, replica_seeds, summarize


@dataclass
class QuenchedSeries:
    env_seed: int
    params: ModelParams
    values: dict = field(default_factory=dict)
    truncation: dict = field(default_factory=dict)


def _table_excess(table: RenewalTable, excess):
    k = excess if excess is not None else table.excess
    if k is None:
        raise ValueError("an excess truncation is required (table built without one)")
    return int(k)


def _cum_q(table: RenewalTable, K: int) -> float:
    if K > table.M_max:
        raise ValueError(f"table height {table.M_max} below the requested {K}")
    return float(np.sum(table.q_by_height[1 : K + 1]))


def _scaled_total(q: ExcessTable, H: int, xi: float) -> float:
    return sum(q.total(h) * math.exp(h * xi) for h in range(1, min(H, q.H) + 1))


def s_partial(env, params: ModelParams, table: RenewalTable, N: int, excess: int | None = None,
              budget_nodes: int = DEFAULT_BUDGET, q_cache: dict | None = None) -> float:
    """s_N = 1 + sum_{x below N} t_x (q^{theta_x}_{1,N-h_x} - q_{1,N-h_x}).

    The annealed table must carry the same excess truncation so that the
    subtracted masses are the exact expectations of the quenched ones.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    k = _table_excess(table, excess)
    xi = table.xi
    T = enumerate_table("T", params, N - 1, k, env=env, budget_nodes=budget_nodes) if N > 1 else None
    cache = q_cache if q_cache is not None else {}
    terms = [1.0]
    for h in range(N):
        entries = [((0,) * params.d, np.array([1.0]))] if h == 0 else list(T.entries(h))
        for perp, vec in entries:
            tx = float(vec.sum()) * math.exp(h * xi)
            if tx == 0.0:
                continue
            x = LatticePoint(perp, h)
            key = (x, N - h, k)
            qq = cache.get(key)
            if qq is None:
                q = enumerate_table("T0", params, N - h, k, env=env, start=x, budget_nodes=budget_nodes)
                qq = _scaled_total(q, N - h, xi)
                cache[key] = qq
            terms.append(tx * (qq - _cum_q(table, N - h)))
    return math.fsum(terms)


def quenched_renewal_residual(env, params: ModelParams, H: int, excess: int,
                              budget_nodes: int = DEFAULT_BUDGET) -> tuple[float, float]:
    """(absolute, relative) gap between enumerated cone-confined weights and the
    convolution of shifted irreducible tables."""
    a = enumerate_table("T", params, H, excess, env=env, budget_nodes=budget_nodes)
    b = quenched_t_by_convolution(env, params, H, excess, budget_nodes=budget_nodes)
    scale = np.exp(np.arange(H + 1) * -math.log(free_first_passage(params.d, params.lam)))
    da = a.data * scale[:, None, None]
    db = b.data * scale[:, None, None]
    gap = float(np.abs(da - db).max())
    top = float(np.abs(da).max())
    return gap, gap / top if top > 0 else gap


# ------------------------------------------------------------ Sinai expansions


class _Vecs:
    """Sparse excess-resolved weights keyed by relative endpoint."""

    def __init__(self, table: ExcessTable, xi: float, k: int):
        self.k = k
        self.data = {}
        for h in range(table.H + 1):
            s = math.exp(h * xi)
            for perp, vec in table.entries(h):
                v = np.zeros(k + 1)
                m = min(k, len(vec) - 1)
                v[: m + 1] = vec[: m + 1] * s
                self.data[LatticePoint(perp, h)] = v

    def get(self, x):
        v = self.data.get(x)
        return v if v is not None else np.zeros(self.k + 1)

    def items(self):
        return self.data.items()


def sinai_residual(env, params: ModelParams, table: RenewalTable, x: LatticePoint,
                   excess: int | None = None, budget_nodes: int = DEFAULT_BUDGET) -> dict:
    """Both sides of the last- and first-perturbed-step expansions of t^omega_x.

    Returns residuals and the two right-hand sides; all sums run over the
    finite excess-truncated supports.
    """
    k = _table_excess(table, excess)
    xi = table.xi
    H = x.par
    if H < 1:
        raise ValueError("endpoint must lie above the origin")
    spec = PotentialSpec.from_dict(table.meta["potential"]) if "potential" in table.meta else env.spec
    tq = _Vecs(enumerate_table("T", params, H, k, env=env, budget_nodes=budget_nodes), xi, k)
    ta = _Vecs(enumerate_table("T", params, H, k, annealed_spec=spec, budget_nodes=budget_nodes), xi, k)
    qa = _Vecs(enumerate_table("T0", params, H, k, annealed_spec=spec, budget_nodes=budget_nodes), xi, k)
    qcache = {}

    def qshift(y, hmax):
        got = qcache.get(y)
        if got is None:
            got = _Vecs(enumerate_table("T0", params, hmax, k, env=env, start=y, budget_nodes=budget_nodes), xi, k)
            qcache[y] = got
        return got

    lhs = float(tq.get(x).sum())
    # last perturbed step: t_y (q^{theta_y}_{z-y} - q_{z-y}) t_{x-z}
    terms = [float(ta.get(x).sum())]
    for y, ty in tq.items():
        if y.par >= H:
            continue
        qy = qshift(y, H - y.par)
        keys = set(qy.data) | {dz for dz in qa.data if dz.par <= H - y.par}
        for dz in sorted(keys):
            if dz.par < 1:
                continue
            z = y + dz
            tail = ta.get(x - z)
            if not tail.any():
                continue
            diff = qy.get(dz) - qa.get(dz)
            terms.append(float(convolve_excess(convolve_excess(ty, diff, k), tail, k).sum()))
    rhs_last = math.fsum(terms)
    # first perturbed step: t_y (q^{theta_y}_{z-y} - q_{z-y}) t^{theta_z}_{x-z}
    tshift = {}

    def tfrom(z):
        got = tshift.get(z)
        if got is None:
            if z == x:
                got = np.eye(1, k + 1)[0]
            else:
                tab = enumerate_table("T", params, H - z.par, k, env=env, start=z, h_lo=H - z.par,
                                      budget_nodes=budget_nodes)
                got = np.zeros(k + 1)
                v = tab.vector((x - z).perp, H - z.par)
                got[: len(v)] = v[: k + 1] * math.exp((H - z.par) * xi)
            tshift[z] = got
        return got

    terms = [float(ta.get(x).sum())]
    for y, ty in ta.items():
        if y.par >= H:
            continue
        qy = qshift(y, H - y.par)
        keys = set(qy.data) | {dz for dz in qa.data if dz.par <= H - y.par}
        for dz in sorted(keys):
            if dz.par < 1:
                continue
            z = y + dz
            if not _cone_reachable(x - z, params, k):
                continue
            head = tfrom(z)
            if not head.any():
                continue
            diff = qy.get(dz) - qa.get(dz)
            if not diff.any():
                continue
            terms.append(float(convolve_excess(convolve_excess(ty, diff, k), head, k).sum()))
    rhs_first = math.fsum(terms)
    return {
        "lhs": lhs,
        "annealed": float(ta.get(x).sum()),
        "rhs_last": rhs_last,
        "rhs_first": rhs_first,
        "residual_last": abs(lhs - rhs_last),
        "residual_first": abs(lhs - rhs_first),
    }


def _cone_reachable(v: LatticePoint, params: ModelParams, k: int) -> bool:
    if v.par < 0:
        return False
    if v.par == 0:
        return not any(v.perp)
    ap = params.aperture
    n2 = sum(c * c for c in v.perp)
    return ap.q ** 2 * n2 < ap.p ** 2 * v.par ** 2 and sum(abs(c) for c in v.perp) <= k


# ------------------------------------------------------------ experiments


def _provenance(seed, seeds):
    return {"base_seed": int(seed), "streams": "numpy.SeedSequence.spawn", "replica_seeds": [int(s) for s in seeds]}


def ratio_experiment(spec: PotentialSpec, params: ModelParams, N_list, replicas: int, seed: int,
                     rtol: float = 1e-5, threads: int = 1) -> ExperimentReport:
    """Quenched crossing partition functions over replica environments, divided by
    their replica mean."""
    N_list = sorted(int(n) for n in N_list)
    F = free_first_passage(params.d, params.lam)
    seeds = replica_seeds(seed, replicas)

    def one(s):
        env = Environment(spec, s)
        return [slab_green(env, params, N, rtol * F ** N).value for N in N_list]

    with Timer() as clock:
        vals = np.array(parallel_map(one, seeds, threads)).reshape(replicas, len(N_list))
    means = np.array([math.fsum(vals[:, j]) / replicas for j in range(len(N_list))])
    ratio = vals / means
    rep = ExperimentReport("ratio", replicas, provenance=_provenance(seed, seeds), wall_time=clock.elapsed)
    for j, N in enumerate(N_list):
        st = summarize(ratio[:, j])
        st["D_mean"] = float(means[j])
        st["D_free"] = F ** N
        if j + 1 < len(N_list):
            st["increment_variance"] = summarize(ratio[:, j + 1] - ratio[:, j])["variance"]
        rep.per_N[N] = st
    for i, s in enumerate(seeds):
        for j, N in enumerate(N_list):
            rep.rows.append({"replica": i, "seed": s, "N": N, "partition": float(vals[i, j]),
                             "ratio": float(ratio[i, j])})
    return rep


def plateau(report: ExperimentReport, N_hi: int, N_lo: int, factor: float = 1.5) -> bool:
    return report.per_N[N_hi]["variance"] <= factor * report.per_N[N_lo]["variance"]


def annealed_side_tables(params: ModelParams, spec: PotentialSpec, xi: float, L_max: int, R_max: int,
                         excess: int, budget_nodes: int = DEFAULT_BUDGET) -> dict:
    """Scaled annealed left/right masses: l_h summed per height and c_r = sum_{M>=1} r_M.

    The right piece of a crossing path starts at its last cone point, which lies
    strictly below the target, so the empty right piece is excluded from c_r.
    """
    from .annealed import excess_table_to_dict

    tl = enumerate_table("Tl", params, L_max, excess, annealed_spec=spec, budget_nodes=budget_nodes)
    tr = enumerate_table("Tr", params, R_max, excess, annealed_spec=spec, budget_nodes=budget_nodes)
    r = np.array([tr.total(M) * math.exp(M * xi) for M in range(R_max + 1)])
    l = np.array([tl.total(h) * math.exp(h * xi) for h in range(L_max + 1)])
    nu_r, icpt, _ = fit_decay(r, start=max(1, R_max // 2))
    tail = math.exp(icpt - nu_r * (R_max + 1)) / (1 - math.exp(-nu_r)) if nu_r > 0 else float("inf")
    return {"r": r, "l": l, "c_r": float(r[1:].sum()), "c_r_tail": tail, "l_table": excess_table_to_dict(tl, L_max)}


def full_limit_candidate(env, params: ModelParams, table: RenewalTable, L_max: int = 3, R_max: int = 6,
                         N_s: int = 3, excess: int | None = None, spec: PotentialSpec | None = None,
                         budget_nodes: int = DEFAULT_BUDGET) -> dict:
    """(c_r / mu) sum_x l^omega_x s^{theta_x omega}_{N_s}, the candidate limit of the
    scaled crossing partition function."""
    k = _table_excess(table, excess)
    spec = spec or PotentialSpec.from_dict(table.meta["potential"])
    side = annealed_side_tables(params, spec, table.xi, L_max, R_max, k, budget_nodes)
    tl = enumerate_table("Tl", params, L_max, k, env=env, budget_nodes=budget_nodes)
    terms = []
    norm = []
    for h in range(1, L_max + 1):
        for perp, vec in tl.entries(h):
            lx = float(vec.sum()) * math.exp(h * table.xi)
            if lx == 0.0:
                continue
            x = LatticePoint(perp, h)
            s = s_partial(env.shift(x), params, table, N_s, k, budget_nodes)
            terms.append(lx * s)
            norm.append(lx)
    factor = side["c_r"] / table.mu
    value = factor * math.fsum(terms)
    return {"value": value, "normalisation": factor * math.fsum(side["l"][1:]),
            "quenched_left_mass": factor * math.fsum(norm), "c_r": side["c_r"], "c_r_tail": side["c_r_tail"]}


def gaussian_tv(measure: np.ndarray, R: int, N: int, sigma_matrix: np.ndarray) -> float:
    """Total variation between a lattice endpoint measure (offsets -R..R per axis) and
    the Gaussian with covariance N * Sigma, discretised on the same lattice cells."""
    d = measure.ndim
    grid = np.indices(measure.shape).reshape(d, -1).T - R
    cov = N * np.asarray(sigma_matrix, dtype=np.float64).reshape(d, d)
    inv = np.linalg.inv(cov)
    dens = np.exp(-0.5 * np.einsum("ij,jk,ik->i", grid, inv, grid))
    dens /= dens.sum()
    return 0.5 * float(np.abs(measure.ravel() - dens).sum())


def endpoint_statistics(g, N: int, sigma_matrix) -> dict:
    mu = g.endpoint_measure()
    R = g.box_halfwidth
    d = mu.ndim
    grid = np.indices(mu.shape) - R
    r2 = (grid * grid).sum(axis=0)
    return {
        "second_moment": float((r2 * mu).sum() / N),
        "tv": gaussian_tv(mu, R, N, sigma_matrix),
        "mass": float(mu.sum()),
        "mean": [float((grid[i] * mu).sum()) for i in range(d)],
    }


def diffusive_experiment(spec: PotentialSpec, params: ModelParams, table: RenewalTable, N: int,
                         replicas: int, seed: int, sigma_matrix=None, probe_radius: int = 6,
                         rtol: float = 1e-8, threads: int = 1) -> ExperimentReport:
    """Endpoint second moment over N and Gaussian distance for replicas whose origin
    connects beyond the probe box."""
    from .annealed import diffusivity

    if sigma_matrix is None:
        sigma_matrix = diffusivity(table).sigma_matrix
    sigma2 = float(np.trace(sigma_matrix))
    F = free_first_passage(params.d, params.lam)
    seeds = replica_seeds(seed, replicas)

    def one(s):
        env = Environment(spec, s)
        probe = in_infinite_cluster(env, origin(params.d), probe_radius)
        if probe is not ClusterProbe.CONNECTED_BEYOND_PROBE:
            return {"seed": s, "probe": probe.value}
        g = slab_green(env, params, N, rtol * F ** N)
        if g.value <= 0:
            return {"seed": s, "probe": probe.value, "partition": 0.0}
        st = endpoint_statistics(g, N, sigma_matrix)
        mu = g.endpoint_measure()
        marginal = mu.sum(axis=tuple(range(1, mu.ndim))) / mu.sum()
        return {"seed": s, "probe": probe.value, "partition": g.value, "marginal": marginal, **st}

    with Timer() as clock:
        rows = parallel_map(one, seeds, threads)
    rep = ExperimentReport("diffusive", replicas, provenance=_provenance(seed, seeds), wall_time=clock.elapsed)
    admitted = [r for r in rows if "second_moment" in r]
    sm = [r["second_moment"] for r in admitted]
    tv = [r["tv"] for r in admitted]
    rep.per_N[N] = {
        "second_moment": summarize(sm),
        "gap_median": float(np.median(np.abs(np.array(sm) - sigma2))) if sm else float("nan"),
        "tv": summarize(tv),
        "excluded": len(rows) - len(admitted),
        "excluded_fraction": (len(rows) - len(admitted)) / max(1, len(rows)),
    }
    rep.fitted["sigma2"] = sigma2
    if admitted:
        R = max(len(r["marginal"]) for r in admitted) // 2
        acc = np.zeros(2 * R + 1)
        for r in admitted:
            m = r["marginal"]
            off = R - len(m) // 2
            acc[off:off + len(m)] += m
        acc /= len(admitted)
        x = np.arange(-R, R + 1)
        var = N * float(np.asarray(sigma_matrix, dtype=np.float64).reshape(params.d, params.d)[0, 0])
        gauss = np.exp(-0.5 * x * x / var)
        rep.extra["histogram"] = {"offset": x.tolist(), "mean": acc.tolist(),
                                  "gaussian": (gauss / gauss.sum()).tolist()}
    for i, r in enumerate(rows):
        row = {"replica": i, "N": N}
        row.update({k: v for k, v in r.items() if k not in ("mean", "marginal")})
        rep.rows.append(row)
    return rep


def positivity_probe(spec: PotentialSpec, params: ModelParams, table: RenewalTable, box_sides,
                     replicas: int, seed: int, N_s: int = 2, excess: int | None = None,
                     probe_radius: int = 4, threads: int = 1) -> ExperimentReport:
    """s over the box B_n of sites in L_0 per replica: positivity fraction among
    cluster-connected origins and the variance of the box average against n."""
    k = _table_excess(table, excess)
    sides = sorted(int(n) for n in box_sides)
    seeds = replica_seeds(seed, replicas)
    d = params.d

    def one(s):
        env = Environment(spec, s)
        probe = in_infinite_cluster(env, origin(d), probe_radius)
        out = {"seed": s, "probe": probe.value}
        cache = {}
        vals = {}
        for n in sides:
            grid = np.indices((n,) * d).reshape(d, -1).T
            sv = []
            for c in grid:
                key = tuple(int(v) for v in c)
                if key not in cache:
                    cache[key] = s_partial(env.shift(key + (0,)), params, table, N_s, k)
                sv.append(cache[key])
            vals[n] = sv
        out["box_average"] = {n: math.fsum(v) / len(v) - 1.0 for n, v in vals.items()}
        out["max_s"] = max(max(v) for v in vals.values())
        return out

    with Timer() as clock:
        rows = parallel_map(one, seeds, threads)
    rep = ExperimentReport("positivity", replicas, provenance=_provenance(seed, seeds), wall_time=clock.elapsed)
    connected = [r for r in rows if r["probe"] == ClusterProbe.CONNECTED_BEYOND_PROBE.value]
    frac = sum(1 for r in connected if r["max_s"] > 0) / max(1, len(connected))
    variances = []
    for n in sides:
        st = summarize([r["box_average"][n] for r in rows])
        rep.per_N[n] = st
        variances.append(st["variance"])
    rep.fitted["positive_fraction"] = frac
    rep.fitted["connected"] = len(connected)
    if len(sides) >= 2 and all(v > 0 for v in variances):
        x = np.log(np.array(sides, dtype=float))
        y = np.log(np.array(variances))
        A = np.vstack([x, np.ones_like(x)]).T
        coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
        slope = float(coef[0])
        if len(sides) > 2:
            resid = y - A @ coef
            s2 = float(resid @ resid) / (len(sides) - 2)
            se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
        else:
            se = float("nan")
        rep.fitted["variance_slope"] = slope
        rep.fitted["variance_slope_ci"] = [slope - 1.96 * se, slope + 1.96 * se]
    for i, r in enumerate(rows):
        for n in sides:
            rep.rows.append({"replica": i, "seed": r["seed"], "n": n, "probe": r["probe"],
                             "box_average_minus_one": r["box_average"][n], "max_s": r["max_s"]})
    return rep


def mean_one_experiment(spec: PotentialSpec, params: ModelParams, table: RenewalTable, N_list,
                        replicas: int, seed: int, excess: int | None = None, threads: int = 1) -> ExperimentReport:
    """Empirical mean of s_N over replica environments."""
    k = _table_excess(table, excess)
    N_list = sorted(int(n) for n in N_list)
    seeds = replica_seeds(seed, replicas)

    def one(s):
        env = Environment(spec, s)
        cache = {}
        return [s_partial(env, params, table, N, k, q_cache=cache) for N in N_list]

    with Timer() as clock:
        vals = np.array(parallel_map(one, seeds, threads)).reshape(replicas, len(N_list))
    rep = ExperimentReport("mean_one", replicas, provenance=_provenance(seed, seeds), wall_time=clock.elapsed)
    for j, N in enumerate(N_list):
        st = summarize(vals[:, j])
        st["se"] = st["sd"] / math.sqrt(replicas)
        st["z"] = (st["mean"] - 1.0) / st["se"] if st["se"] > 0 else 0.0
        rep.per_N[N] = st
    for i, s in enumerate(seeds):
        for j, N in enumerate(N_list):
            rep.rows.append({"replica": i, "seed": s, "N": N, "s": float(vals[i, j])})
    return rep
