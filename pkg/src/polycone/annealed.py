"""Annealed weights, the Lyapunov exponent, renewal tables, tilts and diffusivity.

Unscaled irreducible masses Q_x come from one of two engines:

* ``exact`` (zero disorder only): the cone-confined weight t_x is a killed
  Green function on the open diamond between 0 and x, solved as a sparse
  linear system per endpoint; Q follows by renewal deconvolution.  Only the
  height cutoff M_max truncates.
* ``enumerate``: annealed path enumeration truncated at a total excess.

Scaled quantities are q_x = exp(M xi) Q_x with xi the root of sum_M q_M = 1.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from .environment import PotentialSpec, phi_beta
from .errors import NonConvergence
from .lattice import ConeAperture, LatticePath, LatticePoint
from .pathsum import (DEFAULT_BUDGET, ModelParams, PathEnsembleSpec, _ensemble_value,
                      _geometric_tail, enumerate_table, site_factors)

TABLE_VERSION = 1


def annealed_path_weight(path: LatticePath, params: ModelParams, spec: PotentialSpec) -> float:
    """exp(-lambda n) * exp(-sum_w phi_beta(local time at w)), start site excluded."""
    n = path.n
    visits = Counter(path.points[1:])
    energy = sum(phi_beta(ell, params.beta, spec) for ell in visits.values())
    return math.exp(-params.lam * n - energy)


def annealed_partition_exact(params: ModelParams, spec: PotentialSpec, N: int, max_len: int,
                             ensemble: PathEnsembleSpec | None = None,
                             budget_nodes: int = DEFAULT_BUDGET) -> tuple[float, float]:
    """Expected partition function over paths of length <= max_len, plus the geometric tail."""
    if max_len < N:
        raise ValueError("max_len must be at least N")
    ensemble = ensemble or PathEnsembleSpec("D", N)
    table = enumerate_table(ensemble.kind, params, N, max_len - N, h_lo=N, annealed_spec=spec,
                            budget_nodes=budget_nodes)
    return _ensemble_value(table, ensemble, N), _geometric_tail(params, max_len)


# ------------------------------------------------------------ exact cone weights


def _cone_reach(aperture: ConeAperture, h: int) -> int:
    # largest |c| with q|c| < p h
    return max((aperture.p * h - 1) // aperture.q, -1)


def _strict(dperp: np.ndarray, dh: np.ndarray, aperture: ConeAperture) -> np.ndarray:
    n2 = (dperp * dperp).sum(axis=-1)
    return (dh > 0) & (aperture.q ** 2 * n2 < aperture.p ** 2 * dh * dh)


def cone_weights_exact(params: ModelParams, H: int, env=None, start: LatticePoint | None = None) -> dict:
    """Cone-confined weights t_x for all endpoints up to relative height H, without
    excess truncation.  Quenched when ``env`` is given (beta applies), free otherwise.

    Returns {relative endpoint: weight}.
    """
    d = params.d
    ap = params.aperture
    e_lam = math.exp(-params.lam)
    R = _cone_reach(ap, H)
    # candidate box of relative sites: |perp_j| <= R, 1 <= h <= H
    axes = [np.arange(-R, R + 1)] * d + [np.arange(1, H + 1)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d + 1)
    inside0 = _strict(grid[:, :d], grid[:, d], ap)
    grid = grid[inside0]
    if env is not None:
        base = np.array(start.coords() if start is not None else (0,) * (d + 1))
        fac = site_factors(env.values(grid + base), params.beta)
    else:
        fac = np.ones(len(grid))
    index = {tuple(c): i for i, c in enumerate(grid.tolist())}
    # neighbour pairs inside the forward cone
    src, dst = [], []
    for i, c in enumerate(grid.tolist()):
        for j in range(d + 1):
            for s in (1, -1):
                nb = list(c)
                nb[j] += s
                k = index.get(tuple(nb))
                if k is not None:
                    src.append(i)
                    dst.append(k)
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    first = np.array([index.get((0,) * d + (1,), -1)])
    out = {}
    for xi, x in enumerate(grid.tolist()):
        x = np.array(x)
        if fac[xi] == 0.0:
            continue
        h = x[d]
        # region: strictly inside both cones (relative to 0 and to x), heights < h
        mask = _strict(x[:d] - grid[:, :d], h - grid[:, d], ap)
        mask &= fac > 0
        ids = np.flatnonzero(mask)
        total = 0.0
        if h == 1 and not x[:d].any():
            total += 1.0  # the single up step
        if len(ids):
            local = -np.ones(len(grid), dtype=np.int64)
            local[ids] = np.arange(len(ids))
            keep = (local[src] >= 0) & (local[dst] >= 0)
            a, b = local[src[keep]], local[dst[keep]]
            # u = rhs + K^T u, K(y -> z) = e^-lam fac(z)
            K = sp.csr_matrix((e_lam * fac[ids][b], (b, a)), shape=(len(ids), len(ids)))
            rhs = np.zeros(len(ids))
            f0 = first[0]
            if f0 >= 0 and local[f0] >= 0:
                rhs[local[f0]] = e_lam * fac[f0]
            u = spsolve((sp.identity(len(ids), format="csr") - K).tocsc(), rhs)
            # last step into x from a neighbour in the region
            for j in range(d + 1):
                for s in (1, -1):
                    nb = x.copy()
                    nb[j] += s
                    k = index.get(tuple(nb.tolist()))
                    if k is not None and local[k] >= 0:
                        total += u[local[k]]
        w = e_lam * fac[xi] * total
        if w > 0:
            out[LatticePoint(tuple(int(c) for c in x[:d]), int(h))] = float(w)
    return out


def _layers(table: dict, d: int, H: int, R: int) -> np.ndarray:
    W = 2 * R + 1
    arr = np.zeros((H + 1,) + (W,) * d)
    for x, w in table.items():
        if 0 <= x.par <= H and all(abs(c) <= R for c in x.perp):
            arr[(x.par,) + tuple(c + R for c in x.perp)] += w
    return arr


def _shift_add(dst: np.ndarray, src: np.ndarray, offset, weight: float):
    """dst[i + offset] += weight * src[i] over the overlap (arrays of equal shape)."""
    sl_d, sl_s = [], []
    for o, n in zip(offset, src.shape):
        if o >= 0:
            sl_d.append(slice(o, n))
            sl_s.append(slice(0, n - o))
        else:
            sl_d.append(slice(0, n + o))
            sl_s.append(slice(-o, n))
    dst[tuple(sl_d)] += weight * src[tuple(sl_s)]


def deconvolve_irreducible(t_table: dict, d: int, H: int) -> dict:
    """Q_x = t_x - sum_{0 < y.par < x.par} t_y Q_{x-y}, by increasing height."""
    by_h = {}
    for x, w in t_table.items():
        by_h.setdefault(x.par, []).append((x.perp, w))
    Q = {}
    Qh = {}
    for h in range(1, H + 1):
        acc = {perp: w for perp, w in by_h.get(h, [])}
        for hy in range(1, h):
            for py, ty in by_h.get(hy, []):
                for pq, wq in Qh.get(h - hy, []):
                    key = tuple(a + b for a, b in zip(py, pq))
                    acc[key] = acc.get(key, 0.0) - ty * wq
        Qh[h] = [(p, w) for p, w in sorted(acc.items()) if w != 0.0]
        for p, w in Qh[h]:
            Q[LatticePoint(p, h)] = w
    return Q


def excess_table_to_dict(table, H: int) -> dict:
    out = {}
    for h in range(1, H + 1):
        for x, w in table.by_endpoint(h).items():
            if w != 0.0:
                out[x] = w
    return out


def irreducible_masses(params: ModelParams, spec: PotentialSpec, M_max: int, excess: int | None = None,
                       method: str = "auto", budget_nodes: int = DEFAULT_BUDGET) -> tuple[dict, str]:
    """Unscaled annealed irreducible masses {x: Q_x} for heights 1..M_max."""
    zero = params.beta == 0 or spec.family == "constant_zero"
    if method == "auto":
        method = "exact" if zero and excess is None else "enumerate"
    if method == "exact":
        if not zero:
            raise ValueError("the exact engine needs zero disorder (beta = 0 or constant_zero)")
        t = cone_weights_exact(params, M_max)
        return deconvolve_irreducible(t, params.d, M_max), method
    if excess is None:
        raise ValueError("excess truncation is required for enumerated annealed tables")
    tab = enumerate_table("T0", params, M_max, excess, annealed_spec=spec, budget_nodes=budget_nodes)
    return excess_table_to_dict(tab, M_max), method


def _by_height(Q: dict, M_max: int) -> np.ndarray:
    out = np.zeros(M_max + 1)
    for x, w in Q.items():
        out[x.par] += w
    return out


def _solve_xi(QM: np.ndarray) -> float:
    M = np.arange(len(QM))
    logs = np.full(len(QM), -np.inf)
    pos = QM > 0
    logs[pos] = np.log(QM[pos])

    def f(xi):
        return float(np.exp(logs[pos] + M[pos] * xi).sum() - 1.0)

    if not pos[1:].any():
        raise NonConvergence("no irreducible mass: root not bracketed")
    lo = 0.0
    if f(lo) > 0:
        raise NonConvergence("irreducible masses already exceed one at xi = 0")
    hi = 1.0
    while f(hi) < 0:
        hi *= 2
        if hi > 1e4:
            raise NonConvergence("root not bracketed")
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def fit_decay(values: np.ndarray, start: int = 1) -> tuple[float, float, float]:
    """Least-squares fit log v_M = a - nu M over positive entries from ``start``;
    returns (nu, a, R^2)."""
    M = np.arange(len(values))
    sel = (M >= start) & (values > 0)
    if sel.sum() < 2:
        return float("nan"), float("nan"), float("nan")
    x, y = M[sel].astype(float), np.log(values[sel])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss if ss > 0 else 1.0
    return float(-slope), float(icpt), float(r2)


def lyapunov_xi(params: ModelParams, spec: PotentialSpec, M_max: int, excess: int | None = None,
                method: str = "auto") -> tuple[float, float]:
    """(xi, fitted mass gap nu) from the irreducible series truncated at M_max."""
    Q, _ = irreducible_masses(params, spec, M_max, excess, method)
    QM = _by_height(Q, M_max)
    xi = _solve_xi(QM)
    qM = QM * np.exp(np.arange(M_max + 1) * xi)
    nu, _, _ = fit_decay(qM, start=max(1, M_max // 2))
    return xi, nu


@dataclass
class RenewalTable:
    xi: float
    q_by_endpoint: dict
    q_by_height: np.ndarray
    t_by_height: np.ndarray
    mu: float
    M_max: int
    tail_bound: float
    nu_fit: float = float("nan")
    excess: int | None = None
    method: str = "exact"
    d: int = 1
    aperture: ConeAperture = field(default_factory=ConeAperture)
    meta: dict = field(default_factory=dict)

    @property
    def N_max(self) -> int:
        return len(self.t_by_height) - 1

    def atoms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(heights, transverse parts, probabilities) in sorted order."""
        keys = sorted(self.q_by_endpoint)
        M = np.array([x.par for x in keys], dtype=np.int64)
        perp = np.array([x.perp for x in keys], dtype=np.int64).reshape(len(keys), self.d)
        w = np.array([self.q_by_endpoint[x] for x in keys])
        return M, perp, w

    def renewal_residual(self) -> float:
        return float(np.max(np.abs(self.t_by_height[1:] - _renewal_rhs(self.t_by_height, self.q_by_height))))

    @classmethod
    def from_atoms(cls, atoms: dict, N_max: int = 0, aperture: ConeAperture | None = None) -> "RenewalTable":
        """A table built directly from scaled step weights (taken as exact, xi = 0)."""
        if not atoms:
            raise ValueError("need at least one atom")
        d = next(iter(atoms)).d
        q = {x: float(w) for x, w in atoms.items()}
        M_max = max(x.par for x in q)
        qM = _by_height(q, M_max)
        t = renewal_sequence(qM, N_max)
        mu = float((np.arange(M_max + 1) * qM).sum())
        return cls(0.0, q, qM, t, mu, M_max, 0.0, float("inf"), None, "atoms", d,
                   aperture or ConeAperture())

    def to_dict(self) -> dict:
        M, perp, w = self.atoms()
        return {
            "version": TABLE_VERSION,
            "xi": self.xi,
            "mu": self.mu,
            "M_max": self.M_max,
            "tail_bound": self.tail_bound,
            "nu_fit": self.nu_fit,
            "excess": self.excess,
            "method": self.method,
            "d": self.d,
            "aperture": [self.aperture.p, self.aperture.q],
            "q": [[*map(int, p), int(m), float(x)] for m, p, x in zip(M, perp, w)],
            "q_by_height": [float(v) for v in self.q_by_height],
            "t_by_height": [float(v) for v in self.t_by_height],
            "meta": self.meta,
        }

    def to_json(self, path=None, **extra) -> str:
        data = self.to_dict()
        data.update(extra)
        text = json.dumps(data, indent=1, sort_keys=True, allow_nan=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "RenewalTable":
        if data.get("version") != TABLE_VERSION:
            raise ValueError("unsupported renewal table version")
        d = data["d"]
        q = {LatticePoint(tuple(row[:d]), row[d]): row[d + 1] for row in data["q"]}
        return cls(data["xi"], q, np.array(data["q_by_height"]), np.array(data["t_by_height"]),
                   data["mu"], data["M_max"], data["tail_bound"], data["nu_fit"], data["excess"],
                   data["method"], d, ConeAperture(*data["aperture"]), data.get("meta", {}))

    @classmethod
    def from_json(cls, text_or_path) -> "RenewalTable":
        text = text_or_path
        if not text.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def _renewal_rhs(t: np.ndarray, qM: np.ndarray) -> np.ndarray:
    N = len(t) - 1
    out = np.zeros(N)
    for n in range(1, N + 1):
        m = np.arange(1, min(n, len(qM) - 1) + 1)
        out[n - 1] = float(np.dot(t[n - m], qM[m]))
    return out


def renewal_sequence(qM: np.ndarray, N_max: int) -> np.ndarray:
    """t_0 = 1, t_N = sum_{M=1}^{N} t_{N-M} q_M."""
    t = np.zeros(N_max + 1)
    t[0] = 1.0
    top = len(qM) - 1
    for n in range(1, N_max + 1):
        m = np.arange(1, min(n, top) + 1)
        t[n] = float(np.dot(t[n - m], qM[m]))
    return t


def renewal_tables(params: ModelParams, spec: PotentialSpec, N_max: int, M_max: int,
                   excess: int | None = None, method: str = "auto") -> RenewalTable:
    Q, method = irreducible_masses(params, spec, M_max, excess, method)
    QM = _by_height(Q, M_max)
    xi = _solve_xi(QM)
    scale = np.exp(np.arange(M_max + 1) * xi)
    qM = QM * scale
    q = {x: w * scale[x.par] for x, w in Q.items()}
    nu, icpt, _ = fit_decay(qM, start=max(1, M_max // 2))
    if np.isfinite(nu) and nu > 0:
        tail = math.exp(icpt - nu * (M_max + 1)) / (1.0 - math.exp(-nu))
    else:
        tail = float("inf")
    t = renewal_sequence(qM, N_max)
    mu = float((np.arange(M_max + 1) * qM).sum())
    meta = {"lambda": params.lam, "beta": params.beta, "potential": spec.to_dict()}
    return RenewalTable(xi, q, qM, t, mu, M_max, tail, nu, excess, method, params.d, params.aperture, meta)


# ------------------------------------------------------------ tilts


@dataclass(frozen=True)
class TiltResult:
    z: tuple
    phi: float
    newton_residual: float
    iterations: int = 0


def tilted_phi(table: RenewalTable, z, tol: float = 1e-12, max_iter: int = 100,
               check_radius: bool = True) -> TiltResult:
    """Newton solve of sum_x q_x exp(-M phi + z.x_perp) = 1 for real phi."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.shape != (table.d,):
        raise ValueError(f"tilt must have {table.d} components")
    if check_radius and table.tail_bound > 0 and np.isfinite(table.nu_fit):
        limit = table.nu_fit / (2 * float(table.aperture.delta))
        if float(np.linalg.norm(z)) >= limit:
            raise ValueError(f"tilt outside the admissible radius {limit:.4g}")
    M, perp, w = table.atoms()
    M = M.astype(np.float64)
    lw = np.log(w) + perp @ z
    phi = 0.0
    trace = []
    for it in range(1, max_iter + 1):
        terms = np.exp(lw - M * phi)
        g = math.fsum(terms) - 1.0
        trace.append(g)
        if abs(g) <= tol:
            return TiltResult(tuple(z.tolist()), phi, abs(g), it - 1)
        dg = -math.fsum(M * terms)
        phi -= g / dg
    terms = np.exp(lw - M * phi)
    g = math.fsum(terms) - 1.0
    if abs(g) <= tol:
        return TiltResult(tuple(z.tolist()), phi, abs(g), max_iter)
    raise NonConvergence("Newton iteration for the tilt did not converge", trace)


@dataclass(frozen=True)
class DiffusivityEstimate:
    sigma_matrix: np.ndarray
    sigma2: float
    fd_step: float
    second_moment_sigma2: float = float("nan")


def _hessian(table, h, tol):
    d = table.d
    H = np.zeros((d, d))
    f0 = tilted_phi(table, np.zeros(d), tol).phi
    e = np.eye(d)
    for i in range(d):
        fp = tilted_phi(table, h * e[i], tol).phi
        fm = tilted_phi(table, -h * e[i], tol).phi
        H[i, i] = (fp - 2 * f0 + fm) / (h * h)
        for j in range(i + 1, d):
            fpp = tilted_phi(table, h * (e[i] + e[j]), tol).phi
            fpm = tilted_phi(table, h * (e[i] - e[j]), tol).phi
            fmp = tilted_phi(table, h * (-e[i] + e[j]), tol).phi
            fmm = tilted_phi(table, -h * (e[i] + e[j]), tol).phi
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return H


def diffusivity(table: RenewalTable, fd_step: float = 1e-3, richardson: bool = False,
                tol: float = 1e-14) -> DiffusivityEstimate:
    """Central-difference Hessian of phi at 0; the trace is sigma^2."""
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    H = _hessian(table, fd_step, tol)
    if richardson:
        H = (4 * _hessian(table, fd_step / 2, tol) - H) / 3
    M, perp, w = table.atoms()
    second = float((w * (perp * perp).sum(axis=1)).sum() / (w * M).sum())
    return DiffusivityEstimate(H, float(np.trace(H)), fd_step, second)


# ------------------------------------------------------------ endpoint profiles


def endpoint_profile(table: RenewalTable, N: int) -> tuple[np.ndarray, int]:
    """Endpoint-resolved t_x at heights 0..N on a transverse grid; returns (layers, R)
    where layers[h][perp + R] = t_(perp, h)."""
    d = table.d
    Mx, perp, w = table.atoms()
    reach = max(1, int(np.abs(perp).max(initial=0)))
    R = reach * N
    W = 2 * R + 1
    layers = np.zeros((N + 1,) + (W,) * d)
    layers[(0,) + (R,) * d] = 1.0
    for h in range(1, N + 1):
        acc = layers[h]
        for m, p, x in zip(Mx, perp, w):
            if m <= h:
                _shift_add(acc, layers[h - m], p, x)
    return layers, R


def annealed_clt_profile(table: RenewalTable, N: int) -> dict:
    """Normalised endpoint distribution t_x / t_N at height N."""
    layers, R = endpoint_profile(table, N)
    top = layers[N]
    total = top.sum()
    out = {}
    for idx in zip(*np.nonzero(top)):
        out[tuple(int(i) - R for i in idx)] = float(top[idx] / total)
    return out


def second_moment_gap(table: RenewalTable, Ns, sigma2: float) -> dict:
    """{N: (1/(N t_N)) sum |x_perp|^2 t_x - sigma^2} from the endpoint-resolved tables."""
    Ns = sorted(Ns)
    layers, R = endpoint_profile(table, Ns[-1])
    d = table.d
    grid = np.indices(layers.shape[1:]) - R
    r2 = (grid * grid).sum(axis=0)
    out = {}
    for N in Ns:
        top = layers[N]
        out[N] = float((r2 * top).sum() / (N * top.sum()) - sigma2)
    return out
