# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, calloc, free

cnp.import_array()


cdef inline long long _fdiv(long long a, long long b) nogil:
    # floor division for positive b
    cdef long long r = a // b
    if (a % b != 0) and (a < 0):
        r -= 1
    return r


cdef bint _has_cone_point(long long* pos, int m, int d, long long pp, long long qq) nogil:
    cdef int D = d + 1
    cdef long long h0 = pos[d]
    cdef long long hm = pos[m * D + d]
    cdef int k, i, j
    cdef long long hk, dh, n2, c
    cdef bint ok
    for k in range(1, m):
        hk = pos[k * D + d]
        if not (h0 < hk and hk < hm):
            continue
        ok = True
        for i in range(m + 1):
            if i == k:
                continue
            dh = pos[i * D + d] - hk
            if (i < k and dh >= 0) or (i > k and dh <= 0):
                ok = False
                break
            n2 = 0
            for j in range(d):
                c = pos[i * D + j] - pos[k * D + j]
                n2 += c * c
            if qq * n2 >= pp * dh * dh:
                ok = False
                break
        if ok:
            return True
    return False


def enumerate_paths(const double[::1] site, shape, start, int d, double e_lam,
                    bint annealed, const double[::1] inc, int h_lo, int h_hi,
                    int max_excess, bint fwd, bint bwd, bint nocone,
                    long long p, long long q, double[:, :, ::1] out,
                    long long node_budget):
    cdef int D = d + 1
    cdef int k = max_excess
    cdef int W = 2 * k + 1
    cdef int L = h_hi + k + 1
    cdef long long pp = p * p
    cdef long long qq = q * q
    cdef long long strides[16]
    cdef long long shp[16]
    cdef int j, i, s, n, m, hr, nsteps = 2 * D
    cdef long long fl, n2, c, a, b, rem, dh, t, nodes = 0
    cdef double fac, wn
    cdef bint single = bwd and h_lo == h_hi
    cdef bint bad, ok, newmax
    cdef int n_inc = inc.shape[0]
    if D > 16:
        raise ValueError("dimension too large")
    for j in range(D):
        shp[j] = int(shape[j])
    strides[D - 1] = 1
    for j in range(D - 2, -1, -1):
        strides[j] = strides[j + 1] * shp[j + 1]

    cdef long long* pos = <long long*> malloc((L + 1) * D * sizeof(long long))
    cdef long long* flat = <long long*> malloc((L + 1) * sizeof(long long))
    cdef double* w = <double*> malloc((L + 1) * sizeof(double))
    cdef int* maxh = <int*> malloc((L + 1) * sizeof(int))
    cdef long long* lo = <long long*> malloc((L + 1) * (d + 1) * sizeof(long long))
    cdef long long* hi = <long long*> malloc((L + 1) * (d + 1) * sizeof(long long))
    cdef int* dirs = <int*> malloc((L + 1) * sizeof(int))
    cdef int* visits = NULL
    cdef long long n_site = site.shape[0]
    cdef double* outp = &out[0, 0, 0]
    cdef long long n_out_t = 1
    for j in range(d):
        n_out_t *= W
    if annealed:
        visits = <int*> calloc(n_site, sizeof(int))
    cdef long long st[16]
    try:
        for j in range(D):
            pos[j] = int(start[j])
        fl = 0
        for j in range(D):
            fl += pos[j] * strides[j]
        flat[0] = fl
        w[0] = 1.0
        maxh[0] = 0
        for j in range(d):
            lo[j] = -(1LL << 40)
            hi[j] = 1LL << 40
        if single:
            b = _fdiv(p * h_hi - 1, q)
            for j in range(d):
                lo[j] = pos[j] - b
                hi[j] = pos[j] + b
        with nogil:
            n = 0
            dirs[0] = 0
            while n >= 0:
                if dirs[n] == nsteps:
                    if annealed and n > 0:
                        visits[flat[n]] -= 1
                    n -= 1
                    continue
                s = dirs[n]
                dirs[n] += 1
                m = n + 1
                # step s: 0 up, 1 down, 2+2i / 3+2i transverse axis i
                for j in range(D):
                    st[j] = 0
                if s == 0:
                    st[d] = 1
                elif s == 1:
                    st[d] = -1
                elif (s & 1) == 0:
                    st[(s - 2) >> 1] = 1
                else:
                    st[(s - 2) >> 1] = -1
                for j in range(D):
                    pos[m * D + j] = pos[n * D + j] + st[j]
                hr = <int>(pos[m * D + d] - pos[d])
                if hr > h_hi or m - hr > k:
                    continue
                if fwd:
                    if hr <= 0:
                        continue
                    n2 = 0
                    for j in range(d):
                        c = pos[m * D + j] - pos[j]
                        n2 += c * c
                    if qq * n2 >= pp * hr * hr:
                        continue
                fl = flat[n]
                for j in range(D):
                    fl += st[j] * strides[j]
                if annealed:
                    if visits[fl] >= n_inc:
                        fac = inc[n_inc - 1]
                    else:
                        fac = inc[visits[fl]]
                else:
                    fac = site[fl]
                wn = w[n] * e_lam * fac
                if wn == 0.0:
                    continue
                if single:
                    rem = h_hi - hr
                    if rem > 0:
                        b = _fdiv(p * rem - 1, q)
                        bad = False
                        for j in range(d):
                            a = pos[m * D + j] - b
                            if lo[n * D + j] > a:
                                a = lo[n * D + j]
                            c = pos[m * D + j] + b
                            if hi[n * D + j] < c:
                                c = hi[n * D + j]
                            lo[m * D + j] = a
                            hi[m * D + j] = c
                            if a > c:
                                bad = True
                        if bad:
                            continue
                nodes += 1
                if nodes > node_budget:
                    nodes = -1
                    break
                flat[m] = fl
                w[m] = wn
                newmax = hr > maxh[n]
                if newmax and hr >= h_lo:
                    ok = True
                    if bwd:
                        for i in range(m):
                            dh = pos[m * D + d] - pos[i * D + d]
                            if dh <= 0:
                                ok = False
                                break
                            n2 = 0
                            for j in range(d):
                                c = pos[i * D + j] - pos[m * D + j]
                                n2 += c * c
                            if qq * n2 >= pp * dh * dh:
                                ok = False
                                break
                    if ok and nocone and _has_cone_point(pos, m, d, pp, qq):
                        ok = False
                    if ok:
                        t = 0
                        for j in range(d):
                            t = t * W + (pos[m * D + j] - pos[j] + k)
                        outp[(hr * n_out_t + t) * (k + 1) + (m - hr)] += wn
                if hr == h_hi:
                    continue
                if newmax:
                    maxh[m] = hr
                else:
                    maxh[m] = maxh[n]
                if not single:
                    for j in range(d):
                        lo[m * D + j] = lo[n * D + j]
                        hi[m * D + j] = hi[n * D + j]
                if annealed:
                    visits[fl] += 1
                dirs[m] = 0
                n = m
    finally:
        free(pos)
        free(flat)
        free(w)
        free(maxh)
        free(lo)
        free(hi)
        free(dirs)
        if visits != NULL:
            free(visits)
    return nodes


def dp_sweep(const double[::1] P, const double[::1] A, const double[::1] R,
             const double[::1] E, shape, double[::1] arrival, double[::1] Pn):
    cdef int D = len(shape)
    cdef long long strides[16]
    cdef long long shp[16]
    cdef long long idx[16]
    cdef long long n = P.shape[0]
    cdef long long x, st
    cdef int ax
    cdef double S, esc = 0.0
    if D > 16:
        raise ValueError("dimension too large")
    for ax in range(D):
        shp[ax] = int(shape[ax])
    strides[D - 1] = 1
    for ax in range(D - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shp[ax + 1]
    with nogil:
        for ax in range(D):
            idx[ax] = 0
        for x in range(n):
            S = 0.0
            for ax in range(D):
                st = strides[ax]
                if idx[ax] > 0:
                    S += P[x - st]
                if idx[ax] < shp[ax] - 1:
                    S += P[x + st]
            Pn[x] = A[x] * S
            if R[x] != 0.0:
                arrival[x] += R[x] * S
            if E[x] != 0.0:
                esc += E[x] * S
            # advance the multi-index in C order
            ax = D - 1
            while ax >= 0:
                idx[ax] += 1
                if idx[ax] < shp[ax]:
                    break
                idx[ax] = 0
                ax -= 1
    return esc


def sync_pairs(const long long[:, ::1] hx, const long long[:, ::1] hy,
               const long long[::1] nx, const long long[::1] ny,
               long long[:, ::1] ix, long long[:, ::1] iy, long long[::1] counts):
    cdef Py_ssize_t r, a, b, c
    cdef Py_ssize_t cap = ix.shape[1]
    cdef long long u, v
    with nogil:
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
