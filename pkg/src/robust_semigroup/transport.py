"""Wasserstein distances and the worst-case expectation over Wasserstein neighborhoods.

The robust value at a base point ``x`` is

    sup_nu  sum_z nu(z) f(x + z) - phi_t(W_p(mu, nu))

with ``nu`` ranging over measures on the grid lattice (optionally refined by
an integer factor, ``f`` linearly interpolated between nodes and zero outside
the grid).  It is computed through per-node concave hulls of
``(|z - y|^p, f(x + z))`` and a one-dimensional dual in the transport-cost
multiplier; see ``_kernels_py`` for the data layout.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import DomainError, ModelError, ResourceError
from .measures import DiscreteMeasure, GridSpec, lattice_offsets

__all__ = [
    "Penalty",
    "RobustSolution",
    "phi_conjugate",
    "robust_operator",
    "robust_sup_ball",
    "robust_sup_penalty",
    "wasserstein_1d",
    "wasserstein_lp",
]


def _check_p(p):
    if not (p > 1 and math.isfinite(p)):
        raise DomainError(f"order p must lie in (1, inf), got {p}")


@dataclass(frozen=True)
class Penalty:
    """Penalty ``phi`` on the Wasserstein distance together with the order ``p``.

    ``kind="ball"`` is ``phi = +inf * 1_(delta, inf)`` (a hard radius
    ``delta * t`` after time scaling); ``kind="power"`` is ``phi(x) = c x^q``.
    """

    p: float
    kind: str
    delta: float = 0.0
    c: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        _check_p(self.p)
        if self.kind == "ball":
            if not self.delta >= 0:
                raise ModelError(f"ball radius must be nonnegative, got {self.delta}")
        elif self.kind == "power":
            if not self.c > 0:
                raise ModelError("power penalty needs c > 0")
            if not self.q > self.p:
                raise ModelError(f"power penalty needs q > p so phi grows faster than x^p (q={self.q})")
        else:
            raise ModelError(f"unknown penalty kind {self.kind!r}")

    @classmethod
    def ball(cls, delta: float, p: float = 2.0) -> "Penalty":
        return cls(p=p, kind="ball", delta=delta)

    @classmethod
    def power(cls, c: float, q: float, p: float = 2.0) -> "Penalty":
        return cls(p=p, kind="power", c=c, q=q)

    @property
    def is_ball(self) -> bool:
        return self.kind == "ball"

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_ball:
            return np.where(x <= self.delta, 0.0, np.inf)
        return self.c * x**self.q

    def phi_t(self, eps, t: float):
        """``t * phi(eps / t)``; at ``t = 0`` it is 0 at ``eps = 0`` and ``+inf`` elsewhere."""
        eps = np.asarray(eps, dtype=float)
        if t == 0:
            return np.where(eps == 0, 0.0, np.inf)
        return t * self.phi(eps / t)

    def conjugate(self, y):
        return phi_conjugate(self, y)

    def conjugate_slope(self, y) -> float:
        """Derivative of ``phi*`` at ``y`` (its Lipschitz bound on ``[0, y]``)."""
        if self.is_ball:
            return self.delta
        return (max(float(y), 0.0) / (self.c * self.q)) ** (1.0 / (self.q - 1.0))

    def radius_bound(self, t: float, level: float) -> float:
        """``sup{r >= 0 : phi_t(r) <= level}``, the largest useful transport distance."""
        if t == 0:
            return 0.0
        if self.is_ball:
            return self.delta * t
        return t * (level / (t * self.c)) ** (1.0 / self.q)

    def dual_params(self, t: float):
        """Kernel parameters ``(kind, R, a, beta)`` for the penalty on ``W_p^p`` at time ``t``.

        Ball: budget ``R = (delta t)^p``.  Power: ``phi_t(s^(1/p)) = a s^beta``.
        """
        if self.is_ball:
            return _backend.KIND_BALL, (self.delta * t) ** self.p, 0.0, 0.0
        a = self.c * t ** (1.0 - self.q)
        return _backend.KIND_POWER, 0.0, a, self.q / self.p


def phi_conjugate(penalty: Penalty, y):
    """``phi*(y) = sup_{x >= 0} (x y - phi(x))``."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise DomainError("conjugate is only defined for y >= 0")
    if penalty.is_ball:
        out = penalty.delta * y_arr
    else:
        c, q = penalty.c, penalty.q
        out = (q - 1.0) / q * (y_arr / (c * q)) ** (1.0 / (q - 1.0)) * y_arr
    return float(out) if np.ndim(out) == 0 else out


# --- Wasserstein distances ---------------------------------------------------------


def wasserstein_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> float:
    """Exact ``W_p`` on the line via the monotone (quantile) coupling."""
    _check_p(p)
    if mu.dimension != 1 or nu.dimension != 1:
        raise DomainError("wasserstein_1d needs one-dimensional measures; use wasserstein_lp")
    oa, ob = np.argsort(mu.atoms[:, 0], kind="stable"), np.argsort(nu.atoms[:, 0], kind="stable")
    xa, wa = mu.atoms[oa, 0], mu.weights[oa]
    xb, wb = nu.atoms[ob, 0], nu.weights[ob]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    u = np.union1d(ca, cb)
    u = u[u <= 1.0]
    du = np.diff(np.concatenate(([0.0], u)))
    mid = u - 0.5 * du
    ia = np.minimum(np.searchsorted(ca, mid, side="left"), len(xa) - 1)
    ib = np.minimum(np.searchsorted(cb, mid, side="left"), len(xb) - 1)
    cost = float(du @ np.abs(xa[ia] - xb[ib]) ** p)
    return cost ** (1.0 / p)


def _tree_path(basis_rows, basis_cols, m, n, src_row, dst_col):
    # nodes 0..m-1 rows, m..m+n-1 columns; edges are the basic cells
    adj = [[] for _ in range(m + n)]
    for k, (i, j) in enumerate(zip(basis_rows, basis_cols)):
        adj[i].append((m + j, k))
        adj[m + j].append((i, k))
    parent = {src_row: (None, None)}
    stack = [src_row]
    while stack:
        u = stack.pop()
        if u == m + dst_col:
            break
        for v, k in adj[u]:
            if v not in parent:
                parent[v] = (u, k)
                stack.append(v)
    path = []
    node = m + dst_col
    while parent[node][0] is not None:
        node, k = parent[node]
        path.append(k)
    return path  # cell indices from the column back to the row


def transport_simplex(a: np.ndarray, b: np.ndarray, C: np.ndarray):
    """Exact optimal transport between histograms ``a`` and ``b`` (transportation simplex).

    Returns ``(cost, plan)``.  Starts from the north-west corner basis and
    pivots on reduced costs until none is negative.
    """
    m, n = C.shape
    flow = np.zeros((m, n))
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    rows, cols = [], []
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        flow[i, j] = q
        rows.append(i)
        cols.append(j)
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    scale = max(float(np.abs(C).max()), 1e-300)
    max_iter = 50 * (m + n) * max(m, n) + 100
    for it in range(max_iter):
        u = np.full(m, np.nan)
        v = np.full(n, np.nan)
        u[0] = 0.0
        pending = list(range(len(rows)))
        while pending:
            rest = []
            for k in pending:
                r, c = rows[k], cols[k]
                if not np.isnan(u[r]) and np.isnan(v[c]):
                    v[c] = C[r, c] - u[r]
                elif np.isnan(u[r]) and not np.isnan(v[c]):
                    u[r] = C[r, c] - v[c]
                elif np.isnan(u[r]) and np.isnan(v[c]):
                    rest.append(k)
            if len(rest) == len(pending):
                raise RuntimeError("transport basis is not a spanning tree")
            pending = rest
        red = C - u[:, None] - v[None, :]
        if it < max_iter // 2:
            i0, j0 = np.unravel_index(np.argmin(red), red.shape)
        else:  # Bland's rule against degenerate cycling
            neg = np.argwhere(red < -1e-13 * scale)
            i0, j0 = neg[0] if len(neg) else np.unravel_index(np.argmin(red), red.shape)
        if red[i0, j0] >= -1e-13 * scale:
            break
        path = _tree_path(rows, cols, m, n, i0, j0)
        minus = path[0::2]
        theta = min(flow[rows[k], cols[k]] for k in minus)
        leave = next(k for k in minus if flow[rows[k], cols[k]] == theta)
        for s, k in enumerate(path):
            flow[rows[k], cols[k]] += -theta if s % 2 == 0 else theta
        flow[i0, j0] += theta
        rows[leave], cols[leave] = int(i0), int(j0)
    else:
        raise RuntimeError("transportation simplex did not converge")
    flow = np.clip(flow, 0.0, None)
    return float(np.sum(flow * C)), flow


def wasserstein_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float, max_size: int = 10**6) -> float:
    """Exact ``W_p`` between discrete measures in any dimension (linear program)."""
    _check_p(p)
    if mu.dimension != nu.dimension:
        raise DomainError("dimension mismatch")
    if len(mu) * len(nu) > max_size:
        raise ResourceError(f"transport problem {len(mu)}x{len(nu)} exceeds {max_size} cells")
    C = np.linalg.norm(mu.atoms[:, None, :] - nu.atoms[None, :, :], axis=-1) ** p
    cost, _ = transport_simplex(mu.weights, nu.weights, C)
    return max(cost, 0.0) ** (1.0 / p)


# --- robust supremum on the grid lattice ---------------------------------------------


@functools.lru_cache(maxsize=32)
def _offset_table(n0: int, n1: int):
    # all lattice displacements of a (n0, n1) array ordered by squared length,
    # ties in lexicographic order; groups share one squared length
    a = np.arange(-(n0 - 1), n0)
    b = np.arange(-(n1 - 1), n1)
    A, B = np.meshgrid(a, b, indexing="ij")
    A, B = A.ravel(), B.ravel()
    key = A.astype(np.int64) ** 2 + B.astype(np.int64) ** 2
    order = np.lexsort((B, A, key))
    offs = np.ascontiguousarray(np.stack([A[order], B[order]], axis=1).astype(np.int64))
    key = key[order]
    gstart = np.flatnonzero(np.concatenate(([True], key[1:] != key[:-1])))
    gstart = np.concatenate((gstart, [len(key)])).astype(np.int64)
    gkey = key[gstart[:-1]]
    for arr in (offs, gstart, gkey):
        arr.setflags(write=False)
    return offs, gstart, gkey


def _refine_axis(a: np.ndarray, m: int, axis: int) -> np.ndarray:
    if m == 1:
        return a
    n = a.shape[axis]
    fine = np.arange((n - 1) * m + 1) / m
    lo = np.minimum(np.floor(fine).astype(int), n - 2)
    frac = fine - lo
    a0 = np.take(a, lo, axis=axis)
    a1 = np.take(a, lo + 1, axis=axis)
    shape = [1] * a.ndim
    shape[axis] = -1
    frac = frac.reshape(shape)
    return (1.0 - frac) * a0 + frac * a1


@dataclass
class _HullData:
    F: np.ndarray
    pad: int
    refine: int
    nE1: int
    hull: tuple


def _prepare(values: np.ndarray, spec: GridSpec, offsets: np.ndarray, p: float, refine: int, kern):
    d = spec.dimension
    pad = int(np.abs(offsets).max()) + 1
    E = np.pad(np.asarray(values, dtype=float), pad)
    if d == 1:
        E = E[None, :]
        m0, m1 = 1, refine
    else:
        m0 = m1 = refine
    F = np.ascontiguousarray(_refine_axis(_refine_axis(E, m0, 0), m1, 1))
    offs, gstart, gkey = _offset_table(*F.shape)
    gcost = np.ascontiguousarray((np.sqrt(gkey) * (spec.h / refine)) ** p)
    hull = kern.build_hulls(F, m0, m1, offs, gstart, gcost, float(F.max()), _backend.threads())
    return _HullData(F, pad, refine, E.shape[1], hull)


def _flat_nodes(spec: GridSpec, data: _HullData, index: np.ndarray) -> np.ndarray:
    # grid multi-indices (n, d) -> flat indices of the padded coarse array
    if spec.dimension == 1:
        return (index[:, 0] + data.pad).astype(np.int64)
    return ((index[:, 0] + data.pad) * data.nE1 + index[:, 1] + data.pad).astype(np.int64)


def _flat_offsets(spec: GridSpec, data: _HullData, offsets: np.ndarray) -> np.ndarray:
    if spec.dimension == 1:
        return np.ascontiguousarray(offsets[:, 0], dtype=np.int64)
    return np.ascontiguousarray(offsets[:, 0] * data.nE1 + offsets[:, 1], dtype=np.int64)


def robust_operator(
    values: np.ndarray,
    spec: GridSpec,
    offsets: np.ndarray,
    weights: np.ndarray,
    penalty: Penalty,
    t: float,
    *,
    refine: int = 1,
    index: np.ndarray | None = None,
    backend: str | None = None,
):
    """Robust value at grid nodes for the lattice law ``(offsets, weights)``.

    ``index`` selects nodes as an ``(n, d)`` array of multi-indices (default:
    every node, returned in grid shape).  Returns ``(values, multipliers)``.
    """
    kern = _backend.get(backend)
    if refine < 1:
        raise DomainError("refine must be a positive integer")
    offsets = np.asarray(offsets, dtype=np.int64).reshape(len(weights), spec.dimension)
    weights = np.ascontiguousarray(weights, dtype=float)
    full = index is None
    if full:
        index = np.argwhere(np.ones(spec.shape, dtype=bool))
    kind, R, a, beta = penalty.dual_params(t)
    data = _prepare(values, spec, offsets, penalty.p, refine, kern)
    ptr, hc, hv, hs, _ = data.hull
    out, lam = kern.solve_points(
        ptr, hc, hv, hs, _flat_nodes(spec, data, index), _flat_offsets(spec, data, offsets),
        weights, kind, R, a, beta, _backend.threads(),
    )
    if full:
        return out.reshape(spec.shape), lam.reshape(spec.shape)
    return out, lam


@dataclass(frozen=True)
class RobustSolution:
    """Optimizer of the robust problem at one base point."""

    value: float
    multiplier: float
    nu: DiscreteMeasure
    transport_cost: float  # sum of mass * |z - y|^p under the optimal relocation


def _interp_grid(values: np.ndarray, spec: GridSpec, pts: np.ndarray) -> np.ndarray:
    # multilinear interpolation, zero outside the grid
    k = (pts + spec.half_width) / spec.h
    out = np.ones(len(pts))
    acc = np.zeros(len(pts))
    lo = np.floor(k + 1e-12).astype(int)
    fr = np.clip(k - lo, 0.0, 1.0)
    d = spec.dimension
    for corner in range(2**d):
        bits = [(corner >> ax) & 1 for ax in range(d)]
        idx = lo + np.array(bits)
        wgt = np.prod([fr[:, ax] if bits[ax] else 1 - fr[:, ax] for ax in range(d)], axis=0)
        ok = np.all((idx >= 0) & (idx < spec.points), axis=1)
        vals = np.zeros(len(pts))
        vals[ok] = values[tuple(idx[ok].T)]
        acc += wgt * vals
    del out
    return acc


def _solution(values, spec, offsets, weights, penalty, t, x_index, refine):
    kern = _backend.get("python")
    data = _prepare(values, spec, offsets, penalty.p, refine, kern)
    ptr, hc, hv, hs, hd = data.hull
    kind, R, a, beta = penalty.dual_params(t)
    xpos = int(_flat_nodes(spec, data, np.array([x_index]))[0])
    aoff = _flat_offsets(spec, data, offsets)
    plan = kern.primal_plan(ptr, hc, hv, hs, hd, xpos, aoff, weights, kind, R, a, beta)
    offs, _, gkey = _offset_table(*data.F.shape)
    hf = spec.h / refine
    dests, masses, cost = [], [], 0.0
    for atom, k, mass in plan:
        if mass <= 0:
            continue
        disp = offs[k] if spec.dimension == 2 else offs[k, 1:]
        dests.append(offsets[atom] * spec.h + disp * hf)
        masses.append(mass)
        cost += mass * (float(np.sqrt(disp @ disp)) * hf) ** penalty.p
    nu = DiscreteMeasure.normalized(np.array(dests), np.array(masses))
    return nu, cost


def _robust_at_point(f, mu, penalty, t, x, refine, backend, return_solution):
    spec = f.spec
    if mu.dimension != spec.dimension:
        raise DomainError("measure and grid dimensions differ")
    offsets = lattice_offsets(mu, spec.h)
    x_index = np.array(spec.index_of(x))
    vals, lam = robust_operator(
        f.values, spec, offsets, mu.weights, penalty, t, refine=refine, index=x_index[None, :], backend=backend
    )
    value = float(vals[0])
    if not return_solution:
        return value
    nu, cost = _solution(f.values, spec, offsets, np.ascontiguousarray(mu.weights), penalty, t, x_index, refine)
    return RobustSolution(value, float(lam[0]), nu, cost)


def robust_sup_ball(f, mu: DiscreteMeasure, radius: float, p: float, x, *, refine: int = 1,
                    backend: str | None = None, return_solution: bool = False):
    """``sup { sum nu(y) f(x + y) : W_p(mu, nu) <= radius }`` over lattice measures ``nu``.

    ``f`` is a :class:`~robust_semigroup.semigroup.GridFunction` (zero outside
    its grid), ``mu`` must have its atoms on the grid lattice and ``x`` must be
    a grid node.  With ``return_solution`` a :class:`RobustSolution` carrying
    an optimal ``nu`` (atoms relative to ``x``) is returned instead of the value.
    """
    if not radius >= 0:
        raise DomainError(f"radius must be nonnegative, got {radius}")
    penalty = Penalty.ball(float(radius), p)
    return _robust_at_point(f, mu, penalty, 1.0, x, refine, backend, return_solution)


def robust_sup_penalty(f, mu: DiscreteMeasure, penalty: Penalty, t: float, x, *, refine: int = 1,
                       method: str = "dual", backend: str | None = None):
    """``sup_nu  sum nu(y) f(x + y) - phi_t(W_p(mu, nu))`` at the grid node ``x``.

    ``method="dual"`` minimizes the conjugate dual in one multiplier (exact on
    the lattice); ``method="ternary"`` maximizes ``ball(r) - phi_t(r)`` over
    ``r`` by ternary search on ``r^p`` within the bracket where
    ``phi_t(r) <= max|f| + 1``, calling :func:`robust_sup_ball` at each probe.
    """
    if not t >= 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0:
        idx = np.array(f.spec.index_of(x))
        off = lattice_offsets(mu, f.spec.h)
        pts = (idx + off) * f.spec.h - f.spec.half_width
        return float(mu.weights @ _interp_grid(f.values, f.spec, pts))
    if penalty.is_ball:
        return robust_sup_ball(f, mu, penalty.delta * t, penalty.p, x, refine=refine, backend=backend)
    if method == "dual":
        return _robust_at_point(f, mu, penalty, t, x, refine, backend, False)
    if method != "ternary":
        raise ValueError(f"unknown method {method!r}")

    p = penalty.p
    level = float(np.abs(f.values).max()) + 1.0
    r_max = penalty.radius_bound(t, level)

    def objective(s):
        r = s ** (1.0 / p)
        return robust_sup_ball(f, mu, r, p, x, refine=refine, backend=backend) - float(penalty.phi_t(r, t))

    # ball value is concave in the budget s = r^p and phi_t(s^(1/p)) is convex
    lo, hi = 0.0, r_max**p
    best = objective(0.0)
    for _ in range(200):
        if hi - lo <= 1e-12 * max(r_max**p, 1e-300):
            break
        m1, m2 = lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0
        v1, v2 = objective(m1), objective(m2)
        best = max(best, v1, v2)
        if v1 < v2:
            lo = m1
        else:
            hi = m2
    return max(best, objective(0.5 * (lo + hi)))
