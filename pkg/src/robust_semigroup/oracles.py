"""Brute-force reference computations used to cross-check the fast routes.

These are deliberately simple and slow: exhaustive enumeration of atom
relocations for the robust supremum, vertex enumeration of the
transportation polytope, and closed-form Gaussian smoothing of a Gaussian bump.
"""
from __future__ import annotations

import itertools

import numpy as np

__all__ = ["gaussian_bump_smoothed", "relocation_oracle", "transport_vertex_oracle"]


def _pareto(costs: np.ndarray, values: np.ndarray):
    # destinations whose value beats every strictly cheaper one
    order = np.lexsort((-values, costs))
    c, v = costs[order], values[order]
    keep_c, keep_v = [], []
    best = -np.inf
    for ci, vi in zip(c, v):
        if vi > best:
            keep_c.append(ci)
            keep_v.append(vi)
            best = vi
    return np.array(keep_c), np.array(keep_v)


def relocation_oracle(values: np.ndarray, h: float, offsets: np.ndarray, weights: np.ndarray,
                      radius: float, p: float, x_index) -> float:
    """Best ``sum_i w_i f(z_i)`` over relocations with ``sum_i w_i |z_i - y_i|^p <= radius^p``.

    Every atom moves to one lattice destination, except at most one atom that
    is split between two destinations (an optimal basic solution of the
    relocation linear program never needs more).  ``f`` is zero off the grid.
    """
    values = np.asarray(values, dtype=float)
    d = values.ndim
    offsets = np.asarray(offsets).reshape(len(weights), d)
    pad = int(np.abs(offsets).max()) + 1
    E = np.pad(values, pad)
    grids = np.meshgrid(*[np.arange(s) for s in E.shape], indexing="ij")
    pos = np.stack([g.ravel() for g in grids], axis=1)
    vals = E.ravel()
    R = radius**p
    cands = []
    for off in offsets:
        src = np.asarray(x_index) + pad + off
        cost = (np.linalg.norm((pos - src) * h, axis=1)) ** p
        cands.append(_pareto(cost, vals))
    w = np.asarray(weights, dtype=float)
    k = len(w)
    best = -np.inf
    slack = 1e-12 * max(R, 1e-300)

    def combos(idx):
        cs = np.meshgrid(*[cands[i][0] for i in idx], indexing="ij")
        vs = np.meshgrid(*[cands[i][1] for i in idx], indexing="ij")
        cost = sum(w[i] * c.ravel() for i, c in zip(idx, cs)) if idx else np.zeros(1)
        val = sum(w[i] * v.ravel() for i, v in zip(idx, vs)) if idx else np.zeros(1)
        return cost, val

    cost, val = combos(list(range(k)))
    ok = cost <= R + slack
    if ok.any():
        best = float(val[ok].max())
    for j in range(k):
        others = [i for i in range(k) if i != j]
        oc, ov = combos(others)
        cj, vj = cands[j]
        if len(cj) < 2:
            continue
        a, b = np.array(list(itertools.combinations(range(len(cj)), 2))).T
        B = (R - oc)[:, None] / w[j]
        theta = (B - cj[a][None, :]) / (cj[b] - cj[a])[None, :]
        feas = theta >= 0
        theta = np.clip(theta, 0.0, 1.0)
        tot = ov[:, None] + w[j] * ((1 - theta) * vj[a][None, :] + theta * vj[b][None, :])
        if feas.any():
            best = max(best, float(tot[feas].max()))
    return best


def transport_vertex_oracle(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> float:
    """Optimal transport cost by enumerating every vertex of the transportation polytope."""
    m, n = C.shape
    cells = [(i, j) for i in range(m) for j in range(n)]
    A = np.zeros((m + n, m * n))
    for k, (i, j) in enumerate(cells):
        A[i, k] = 1.0
        A[m + j, k] = 1.0
    rhs = np.concatenate([a, b])
    best = np.inf
    for support in itertools.combinations(range(m * n), m + n - 1):
        cols = A[:, support]
        if np.linalg.matrix_rank(cols) < m + n - 1:
            continue
        x, *_ = np.linalg.lstsq(cols, rhs, rcond=None)
        if np.abs(cols @ x - rhs).max() > 1e-12 or x.min() < -1e-12:
            continue
        cost = float(sum(x[s] * C.flat[k] for s, k in enumerate(support)))
        best = min(best, cost)
    return best


def gaussian_bump_smoothed(x: np.ndarray, center, width: float, mean, cov) -> np.ndarray:
    """``E f(x + Y)`` for ``f(z) = exp(-|z - center|^2 / (2 width^2))`` and ``Y ~ N(mean, cov)``.

    ``x`` has shape ``(..., d)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    M = width**2 * np.eye(d) + cov
    z = x - np.asarray(center, dtype=float) + np.asarray(mean, dtype=float)
    quad = np.einsum("...i,ij,...j->...", z, np.linalg.inv(M), z)
    return width**d / np.sqrt(np.linalg.det(M)) * np.exp(-0.5 * quad)
