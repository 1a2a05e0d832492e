"""Pure-numpy kernels for the robust supremum (fallback for the compiled core).

Layout conventions shared with ``_kernels.pyx``:

* ``F`` is a 2-d float array (1-d problems use a leading axis of length 1)
  holding the zero-padded function on the destination lattice.
* Every coarse node ``v`` (flat index into the padded coarse array) gets an
  upper concave hull of the pairs ``(cost, value)`` over destinations ``w``,
  where ``cost = |w - v|^p``.  Hulls are stored flat: vertices of node ``v``
  occupy ``hptr[v]:hptr[v+1]``; vertex 0 is the stay-put point.
* ``hs[j]`` is the slope of the segment ending at vertex ``j`` (strictly
  decreasing along a hull, ``inf`` at vertex 0).

This fallback solves the per-point problem in primal form (greedy over hull
segments sorted by slope); the compiled core solves the dual in lambda.
Both are exact for the lattice problem.
"""
from __future__ import annotations

import numpy as np

KIND_BALL = 0
KIND_POWER = 1


def build_hulls(F, m0, m1, offs, gstart, gcost, fmax, nthreads=0):
    n0, n1 = F.shape
    nE0 = (n0 - 1) // m0 + 1
    nE1 = (n1 - 1) // m1 + 1
    nv = nE0 * nE1
    starts = gstart[:-1]
    sizes = np.diff(gstart)
    order = np.arange(len(offs))
    hc_parts, hv_parts, hd_parts = [], [], []
    ptr = np.zeros(nv + 1, dtype=np.int64)
    for v in range(nv):
        vi = (v // nE1) * m0
        vj = (v % nE1) * m1
        pi = vi + offs[:, 0]
        pj = vj + offs[:, 1]
        ok = (pi >= 0) & (pi < n0) & (pj >= 0) & (pj < n1)
        vals = np.full(len(offs), -np.inf)
        vals[ok] = F[pi[ok], pj[ok]]
        gbest = np.maximum.reduceat(vals, starts)
        hit = vals == np.repeat(gbest, sizes)
        first = np.minimum.reduceat(np.where(hit, order, len(offs)), starts)
        base = F[vi, vj]
        tail = gbest[1:]
        run = np.maximum.accumulate(np.concatenate(([base], tail)))[:-1]
        rec = np.flatnonzero(tail > run) + 1
        c_st, v_st, d_st = [0.0], [base], [0]
        for g in rec:
            c, val = gcost[g], gbest[g]
            while len(c_st) >= 2 and (v_st[-1] - v_st[-2]) * (c - c_st[-2]) <= (val - v_st[-2]) * (
                c_st[-1] - c_st[-2]
            ):
                c_st.pop()
                v_st.pop()
                d_st.pop()
            c_st.append(c)
            v_st.append(val)
            d_st.append(int(first[g]))
            if val >= fmax:
                break
        hc_parts.append(c_st)
        hv_parts.append(v_st)
        hd_parts.append(d_st)
        ptr[v + 1] = ptr[v] + len(c_st)
    hc = np.fromiter((c for part in hc_parts for c in part), dtype=float, count=ptr[-1])
    hv = np.fromiter((c for part in hv_parts for c in part), dtype=float, count=ptr[-1])
    hd = np.fromiter((c for part in hd_parts for c in part), dtype=np.int64, count=ptr[-1])
    hs = np.full(ptr[-1], np.inf)
    inner = np.ones(ptr[-1], dtype=bool)
    inner[ptr[:-1]] = False
    j = np.flatnonzero(inner)
    hs[j] = (hv[j] - hv[j - 1]) / (hc[j] - hc[j - 1])
    return ptr, hc, hv, hs, hd


def _segments(hptr, hc, hv, hs, vs, w):
    lo = hptr[vs]
    hi = hptr[vs + 1]
    base = float(w @ hv[lo])
    counts = hi - lo - 1
    if counts.sum() == 0:
        return base, None
    owner = np.repeat(np.arange(len(vs)), counts)
    first = np.repeat(lo + 1 - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    j = first + np.arange(counts.sum())
    slope = hs[j]
    dc = w[owner] * (hc[j] - hc[j - 1])
    dv = w[owner] * (hv[j] - hv[j - 1])
    order = np.argsort(-slope, kind="stable")
    return base, (slope[order], dc[order], dv[order])


def _greedy_ball(base, segs, R):
    if segs is None or R <= 0.0:
        return base, np.inf if R <= 0 else 0.0
    slope, dc, dv = segs
    cum = np.cumsum(dc)
    k = int(np.searchsorted(cum, R, side="right"))
    if k == len(dc):
        return base + float(dv.sum()), 0.0
    prev = cum[k - 1] if k > 0 else 0.0
    frac = (R - prev) / dc[k]
    return base + float(dv[:k].sum()) + frac * dv[k], float(slope[k])


def _greedy_power(base, segs, a, beta):
    if segs is None:
        return base, np.inf
    slope, dc, dv = segs
    rs = np.concatenate(([0.0], np.cumsum(dc)))
    marginal = a * beta * rs[:-1] ** (beta - 1.0)
    stop = np.flatnonzero(slope <= marginal)
    K = int(stop[0]) if len(stop) else len(slope)
    if K == 0:
        return base, float(marginal[0]) if len(marginal) else 0.0
    k = K - 1
    r_opt = (slope[k] / (a * beta)) ** (1.0 / (beta - 1.0))
    r_fin = min(rs[k + 1], max(r_opt, rs[k]))
    gain = float(dv[:k].sum()) + slope[k] * (r_fin - rs[k])
    if r_fin == rs[k + 1]:
        gain = float(dv[: k + 1].sum())
    return base + gain - a * r_fin**beta, a * beta * r_fin ** (beta - 1.0)


def solve_points(hptr, hc, hv, hs, xpos, aoff, w, kind, R, a, beta, nthreads=0):
    xpos = np.asarray(xpos, dtype=np.int64)
    out = np.empty(len(xpos))
    lam = np.empty(len(xpos))
    for n, x in enumerate(xpos):
        base, segs = _segments(hptr, hc, hv, hs, x + aoff, w)
        if kind == KIND_BALL:
            out[n], lam[n] = _greedy_ball(base, segs, R)
        else:
            out[n], lam[n] = _greedy_power(base, segs, a, beta)
    return out, lam


def primal_plan(hptr, hc, hv, hs, hd, x, aoff, w, kind, R, a, beta):
    """Optimal relocation for one base node: list of (atom index, hull vertex, mass)."""
    vs = x + aoff
    plan = []
    # walk each atom's hull in the global slope order, recording how far it gets
    lo = hptr[vs]
    counts = hptr[vs + 1] - lo - 1
    base, segs = _segments(hptr, hc, hv, hs, vs, w)
    reach = {i: (0, 0.0) for i in range(len(vs))}
    if segs is not None:
        owner = np.repeat(np.arange(len(vs)), counts)
        step = np.concatenate([np.arange(1, c + 1) for c in counts if c > 0]) if counts.sum() else []
        slope_raw = np.concatenate([hs[lo[i] + 1 : lo[i] + 1 + counts[i]] for i in range(len(vs)) if counts[i]])
        order = np.argsort(-slope_raw, kind="stable")
        owner, step = owner[order], np.asarray(step)[order]
        slope, dc, _ = segs
        budget = R if kind == KIND_BALL else None
        used = 0.0
        for k in range(len(slope)):
            if kind == KIND_BALL:
                if used + dc[k] <= budget:
                    reach[owner[k]] = (step[k], 0.0)
                    used += dc[k]
                    continue
                frac = (budget - used) / dc[k] if dc[k] > 0 else 0.0
                reach[owner[k]] = (step[k] - 1, frac)
                break
            marg = a * beta * used ** (beta - 1.0)
            if slope[k] <= marg:
                break
            r_opt = (slope[k] / (a * beta)) ** (1.0 / (beta - 1.0))
            if r_opt >= used + dc[k]:
                reach[owner[k]] = (step[k], 0.0)
                used += dc[k]
                continue
            reach[owner[k]] = (step[k] - 1, (r_opt - used) / dc[k])
            break
    for i in range(len(vs)):
        j, frac = reach[i]
        v0 = lo[i] + j
        if frac > 0:
            plan.append((i, int(hd[v0]), w[i] * (1 - frac)))
            plan.append((i, int(hd[v0 + 1]), w[i] * frac))
        else:
            plan.append((i, int(hd[v0]), w[i]))
    return plan
