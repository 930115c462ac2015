"""Reference implementations of the hot loops.

These mirror ``_kernels.pyx`` line for line and are used when the compiled
extension is unavailable or ``POLYCONE_PURE=1`` is set.
"""
import numpy as np


def _steps(d):
    D = d + 1
    steps = np.zeros((2 * D, D), dtype=np.int64)
    steps[0, d] = 1
    steps[1, d] = -1
    for i in range(d):
        steps[2 + 2 * i, i] = 1
        steps[3 + 2 * i, i] = -1
    return steps


def _has_cone_point(pos, m, d, p, q):
    h0 = pos[0][d]
    hm = pos[m][d]
    pp = p * p
    qq = q * q
    for k in range(1, m):
        hk = pos[k][d]
        if not (h0 < hk < hm):
            continue
        ok = True
        for i in range(m + 1):
            if i == k:
                continue
            dh = pos[i][d] - hk
            if (i < k and dh >= 0) or (i > k and dh <= 0):
                ok = False
                break
            n2 = 0
            for j in range(d):
                c = pos[i][j] - pos[k][j]
                n2 += c * c
            if qq * n2 >= pp * dh * dh:
                ok = False
                break
        if ok:
            return True
    return False


def enumerate_paths(site, shape, start, d, e_lam, annealed, inc, h_lo, h_hi,
                    max_excess, fwd, bwd, nocone, p, q, out, node_budget):
    """Depth-first enumeration of nearest-neighbour paths from ``start``.

    A path is recorded when it first reaches a new maximal relative height in
    [h_lo, h_hi] and passes the geometric filters; ``out[h, t, e]`` accumulates
    its weight by relative height, transverse offset and excess (length minus
    height gain).  Returns the number of nodes visited, or -1 once the budget
    is exceeded.
    """
    D = d + 1
    shape = [int(s) for s in shape]
    strides = [1] * D
    for j in range(D - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    steps = _steps(d).tolist()
    k = int(max_excess)
    W = 2 * k + 1
    pp = p * p
    qq = q * q
    L = h_hi + k + 1
    pos = [[0] * D for _ in range(L + 1)]
    flat = [0] * (L + 1)
    w = [0.0] * (L + 1)
    maxh = [0] * (L + 1)
    lo = [[0] * d for _ in range(L + 1)]
    hi = [[0] * d for _ in range(L + 1)]
    dirs = [0] * (L + 1)
    visits = np.zeros(len(site), dtype=np.int64) if annealed else None
    single = bwd and h_lo == h_hi
    out_flat = out.reshape(-1)
    n_out_t = W ** d

    pos[0] = [int(c) for c in start]
    f0 = 0
    for j in range(D):
        f0 += pos[0][j] * strides[j]
    flat[0] = f0
    w[0] = 1.0
    h0 = pos[0][d]
    for j in range(d):
        lo[0][j] = -(1 << 40)
        hi[0][j] = 1 << 40
    if single:
        b = (p * h_hi - 1) // q
        for j in range(d):
            lo[0][j] = pos[0][j] - b
            hi[0][j] = pos[0][j] + b
    nodes = 0
    n = 0
    dirs[0] = 0
    while n >= 0:
        if dirs[n] == 2 * D:
            if annealed and n > 0:
                visits[flat[n]] -= 1
            n -= 1
            continue
        s = dirs[n]
        dirs[n] += 1
        m = n + 1
        cur = pos[n]
        new = [cur[j] + steps[s][j] for j in range(D)]
        hr = new[d] - h0
        if hr > h_hi or m - hr > k:
            continue
        if fwd:
            if hr <= 0:
                continue
            n2 = 0
            for j in range(d):
                c = new[j] - pos[0][j]
                n2 += c * c
            if qq * n2 >= pp * hr * hr:
                continue
        fl = flat[n] + steps[s][d] * strides[d]
        for j in range(d):
            fl += steps[s][j] * strides[j]
        if annealed:
            fac = inc[min(visits[fl], len(inc) - 1)]
        else:
            fac = site[fl]
        wn = w[n] * e_lam * fac
        if wn == 0.0:
            continue
        if single:
            rem = h_hi - new[d] + h0
            if rem > 0:
                b = (p * rem - 1) // q
                bad = False
                for j in range(d):
                    a = max(lo[n][j], new[j] - b)
                    c = min(hi[n][j], new[j] + b)
                    lo[m][j] = a
                    hi[m][j] = c
                    if a > c:
                        bad = True
                if bad:
                    continue
        nodes += 1
        if nodes > node_budget:
            return -1
        pos[m] = new
        flat[m] = fl
        w[m] = wn
        newmax = hr > maxh[n]
        if newmax and hr >= h_lo:
            ok = True
            if bwd:
                for i in range(m):
                    dh = new[d] - pos[i][d]
                    if dh <= 0:
                        ok = False
                        break
                    n2 = 0
                    for j in range(d):
                        c = pos[i][j] - new[j]
                        n2 += c * c
                    if qq * n2 >= pp * dh * dh:
                        ok = False
                        break
            if ok and nocone and _has_cone_point(pos, m, d, p, q):
                ok = False
            if ok:
                t = 0
                for j in range(d):
                    t = t * W + (new[j] - pos[0][j] + k)
                out_flat[(hr * n_out_t + t) * (k + 1) + (m - hr)] += wn
        if hr == h_hi:
            continue
        maxh[m] = hr if newmax else maxh[n]
        if not single:
            for j in range(d):
                lo[m][j] = lo[n][j]
                hi[m][j] = hi[n][j]
        if annealed:
            visits[fl] += 1
        dirs[m] = 0
        n = m
    return nodes


def dp_sweep(P, A, R, E, shape, arrival, Pn):
    """One Neumann sweep on a padded box.

    With S(x) the sum of P over the neighbours of x: Pn = A * S, the arrival
    row accumulates R * S and the returned escape mass is sum(E * S).
    """
    D = len(shape)
    Pv = P.reshape(shape)
    S = np.zeros(shape)
    for ax in range(D):
        lo = [slice(None)] * D
        hi = [slice(None)] * D
        lo[ax] = slice(1, None)
        hi[ax] = slice(None, -1)
        S[tuple(lo)] += Pv[tuple(hi)]
        S[tuple(hi)] += Pv[tuple(lo)]
    S = S.reshape(-1)
    np.multiply(A, S, out=Pn)
    arrival += R * S
    return float(np.dot(E, S))


def sync_pairs(hx, hy, nx, ny, ix, iy, counts):
    """Common heights of two increasing height sequences, for a batch of pairs.

    Row r of ``hx`` holds ``nx[r]`` heights; indices of common heights are
    written to ``ix``/``iy`` and their number to ``counts``.
    """
    cap = ix.shape[1]
    for r in range(hx.shape[0]):
        a = 0
        b = 0
        c = 0
        while a < nx[r] and b < ny[r] and c < cap:
            u = hx[r, a]
            v = hy[r, b]
            if u == v:
                ix[r, c] = a
                iy[r, c] = b
                c += 1
                a += 1
                b += 1
            elif u < v:
                a += 1
            else:
                b += 1
        counts[r] = c
