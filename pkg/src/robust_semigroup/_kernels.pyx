# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled core for the robust supremum.

Same data layout as ``_kernels_py``; the per-point problem is solved in its
dual form (one convex, piecewise-linear minimization over the multiplier
lambda per base node) instead of the primal greedy used by the fallback.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport parallel, prange
from libc.math cimport INFINITY, fabs, pow
from libc.stdlib cimport free, malloc
cimport openmp

cnp.import_array()

cdef enum:
    KIND_BALL = 0
    KIND_POWER = 1
    MAX_ITER = 200


cdef Py_ssize_t _hull_one(const double[:, ::1] F, Py_ssize_t vi, Py_ssize_t vj,
                          const cnp.int64_t[:, ::1] offs, const cnp.int64_t[::1] gstart,
                          const double[::1] gcost, double fmax,
                          double* sc, double* sv, cnp.int64_t* sd) noexcept nogil:
    cdef Py_ssize_t n0 = F.shape[0], n1 = F.shape[1]
    cdef Py_ssize_t ng = gstart.shape[0] - 1
    cdef Py_ssize_t g, k, pi, pj, top = 1
    cdef double best, val, c
    cdef cnp.int64_t bidx
    sc[0] = 0.0
    sv[0] = F[vi, vj]
    sd[0] = 0
    for g in range(1, ng):
        best = -INFINITY
        bidx = -1
        for k in range(gstart[g], gstart[g + 1]):
            pi = vi + offs[k, 0]
            pj = vj + offs[k, 1]
            if pi < 0 or pi >= n0 or pj < 0 or pj >= n1:
                continue
            val = F[pi, pj]
            if val > best:
                best = val
                bidx = k
        if best <= sv[top - 1]:
            continue
        c = gcost[g]
        while top >= 2 and (sv[top - 1] - sv[top - 2]) * (c - sc[top - 2]) <= \
                (best - sv[top - 2]) * (sc[top - 1] - sc[top - 2]):
            top -= 1
        sc[top] = c
        sv[top] = best
        sd[top] = bidx
        top += 1
        if best >= fmax:
            break
    return top


def build_hulls(const double[:, ::1] F, Py_ssize_t m0, Py_ssize_t m1,
                const cnp.int64_t[:, ::1] offs, const cnp.int64_t[::1] gstart,
                const double[::1] gcost, double fmax, int nthreads=0):
    cdef Py_ssize_t n0 = F.shape[0], n1 = F.shape[1]
    cdef Py_ssize_t nE0 = (n0 - 1) // m0 + 1, nE1 = (n1 - 1) // m1 + 1
    cdef Py_ssize_t nv = nE0 * nE1, ng = gstart.shape[0]
    cdef Py_ssize_t v, j, sz
    cdef int nt = nthreads if nthreads > 0 else openmp.omp_get_max_threads()
    sizes_arr = np.zeros(nv + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] sizes = sizes_arr
    cdef double* sc
    cdef double* sv
    cdef cnp.int64_t* sd

    # pass 1: hull sizes
    with nogil, parallel(num_threads=nt):
        sc = <double*> malloc(ng * sizeof(double))
        sv = <double*> malloc(ng * sizeof(double))
        sd = <cnp.int64_t*> malloc(ng * sizeof(cnp.int64_t))
        for v in prange(nv, schedule="dynamic"):
            sizes[v + 1] = _hull_one(F, (v // nE1) * m0, (v % nE1) * m1, offs, gstart, gcost,
                                     fmax, sc, sv, sd)
        free(sc)
        free(sv)
        free(sd)

    ptr_arr = np.cumsum(sizes_arr)
    cdef cnp.int64_t[::1] ptr = ptr_arr
    cdef Py_ssize_t total = ptr_arr[nv]
    hc_arr = np.empty(total)
    hv_arr = np.empty(total)
    hs_arr = np.empty(total)
    hd_arr = np.empty(total, dtype=np.int64)
    cdef double[::1] hc = hc_arr, hv = hv_arr, hs = hs_arr
    cdef cnp.int64_t[::1] hd = hd_arr

    # pass 2: fill
    with nogil, parallel(num_threads=nt):
        sc = <double*> malloc(ng * sizeof(double))
        sv = <double*> malloc(ng * sizeof(double))
        sd = <cnp.int64_t*> malloc(ng * sizeof(cnp.int64_t))
        for v in prange(nv, schedule="dynamic"):
            sz = _hull_one(F, (v // nE1) * m0, (v % nE1) * m1, offs, gstart, gcost,
                           fmax, sc, sv, sd)
            for j in range(sz):
                hc[ptr[v] + j] = sc[j]
                hv[ptr[v] + j] = sv[j]
                hd[ptr[v] + j] = sd[j]
                if j == 0:
                    hs[ptr[v]] = INFINITY
                else:
                    hs[ptr[v] + j] = (sv[j] - sv[j - 1]) / (sc[j] - sc[j - 1])
        free(sc)
        free(sv)
        free(sd)
    return ptr_arr, hc_arr, hv_arr, hs_arr, hd_arr


cdef inline void _eval(const cnp.int64_t[::1] hptr, const double[::1] hc, const double[::1] hv,
                       const double[::1] hs, Py_ssize_t x, const cnp.int64_t[::1] aoff,
                       const double[::1] w, double lam, double* G, double* C) noexcept nogil:
    # G = sum_i w_i max_z (value - lam * cost), C = sum_i w_i cost at the maximizer
    cdef Py_ssize_t k, v, lo, hi, mid, j
    cdef double g = 0.0, c = 0.0
    for k in range(aoff.shape[0]):
        v = x + aoff[k]
        lo = hptr[v] + 1
        hi = hptr[v + 1]
        while lo < hi:
            mid = (lo + hi) >> 1
            if hs[mid] > lam:
                lo = mid + 1
            else:
                hi = mid
        j = lo - 1
        g += w[k] * (hv[j] - lam * hc[j])
        c += w[k] * hc[j]
    G[0] = g
    C[0] = c


cdef double _base(const cnp.int64_t[::1] hptr, const double[::1] hv, Py_ssize_t x,
                  const cnp.int64_t[::1] aoff, const double[::1] w) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0
    for k in range(aoff.shape[0]):
        s += w[k] * hv[hptr[x + aoff[k]]]
    return s


cdef double _lam_top(const cnp.int64_t[::1] hptr, const double[::1] hs, Py_ssize_t x,
                     const cnp.int64_t[::1] aoff) noexcept nogil:
    cdef Py_ssize_t k, v
    cdef double top = 0.0
    for k in range(aoff.shape[0]):
        v = x + aoff[k]
        if hptr[v + 1] - hptr[v] > 1 and hs[hptr[v] + 1] > top:
            top = hs[hptr[v] + 1]
    return top


cdef inline double _rstar(int kind, double lam, double R, double a, double beta) noexcept nogil:
    if kind == KIND_BALL:
        return R
    return pow(lam / (a * beta), 1.0 / (beta - 1.0))


cdef inline double _psistar(int kind, double lam, double R, double a, double beta) noexcept nogil:
    if kind == KIND_BALL:
        return lam * R
    return (beta - 1.0) * a * pow(lam / (a * beta), beta / (beta - 1.0))


cdef double _solve_one(const cnp.int64_t[::1] hptr, const double[::1] hc, const double[::1] hv,
                       const double[::1] hs, Py_ssize_t x, const cnp.int64_t[::1] aoff,
                       const double[::1] w, int kind, double R, double a, double beta,
                       double* lam_out) noexcept nogil:
    # minimize the convex dual D(l) = G(l) + psi*(l) over l >= 0; its right
    # derivative s(l) = R*(l) - C(l) is nondecreasing and piecewise continuous
    cdef double lo, hi, Dlo, Dhi, slo, shi, lc, lk, lower, Gc, Cc, Dc, sc, best, lf
    cdef int it
    if kind == KIND_BALL and R <= 0.0:
        lam_out[0] = INFINITY
        return _base(hptr, hv, x, aoff, w)
    hi = _lam_top(hptr, hs, x, aoff)
    if hi == 0.0:
        # no destination beats staying put
        lam_out[0] = INFINITY
        return _base(hptr, hv, x, aoff, w)
    lo = 0.0
    _eval(hptr, hc, hv, hs, x, aoff, w, lo, &Gc, &Cc)
    Dlo = Gc + _psistar(kind, lo, R, a, beta)
    slo = _rstar(kind, lo, R, a, beta) - Cc
    lam_out[0] = 0.0
    if slo >= 0.0:
        return Dlo
    best = Dlo
    _eval(hptr, hc, hv, hs, x, aoff, w, hi, &Gc, &Cc)
    Dhi = Gc + _psistar(kind, hi, R, a, beta)
    shi = _rstar(kind, hi, R, a, beta) - Cc
    if Dhi < best:
        best = Dhi
        lam_out[0] = hi
    for it in range(MAX_ITER):
        # Kelley point: minimizer of the two supporting lines, a lower bound on min D
        lk = (Dhi - Dlo + slo * lo - shi * hi) / (slo - shi)
        if not (lk >= lo):
            lk = lo
        if not (lk <= hi):
            lk = hi
        lower = Dlo + slo * (lk - lo)
        if best - lower <= 1e-13 * (1.0 + fabs(best)) or hi - lo <= 1e-15 * hi:
            break
        lc = lk
        if it % 4 == 3 or lc <= lo or lc >= hi:
            lc = 0.5 * (lo + hi)
        _eval(hptr, hc, hv, hs, x, aoff, w, lc, &Gc, &Cc)
        if kind == KIND_POWER:
            # stationary point of the current linear piece of G plus psi*
            lf = a * beta * pow(Cc, beta - 1.0)
            if lf > lo and lf < hi:
                lc = lf
                _eval(hptr, hc, hv, hs, x, aoff, w, lc, &Gc, &Cc)
        Dc = Gc + _psistar(kind, lc, R, a, beta)
        sc = _rstar(kind, lc, R, a, beta) - Cc
        if Dc < best:
            best = Dc
            lam_out[0] = lc
        if sc == 0.0:
            break
        if sc < 0.0:
            lo = lc
            Dlo = Dc
            slo = sc
        else:
            hi = lc
            Dhi = Dc
            shi = sc
    return best


def solve_points(const cnp.int64_t[::1] hptr, const double[::1] hc, const double[::1] hv,
                 const double[::1] hs, const cnp.int64_t[::1] xpos, const cnp.int64_t[::1] aoff,
                 const double[::1] w, int kind, double R, double a, double beta, int nthreads=0):
    cdef Py_ssize_t n = xpos.shape[0], i
    out_arr = np.empty(n)
    lam_arr = np.empty(n)
    cdef double[::1] out = out_arr, lam = lam_arr
    cdef int nt = nthreads if nthreads > 0 else openmp.omp_get_max_threads()
    for i in prange(n, nogil=True, schedule="dynamic", num_threads=nt):
        out[i] = _solve_one(hptr, hc, hv, hs, xpos[i], aoff, w, kind, R, a, beta, &lam[i])
    return out_arr, lam_arr
