"""Finitely supported measures, Levy models and their lattice increment laws.

Everything here is immutable.  Increment laws live on the offset lattice
``h * Z^d`` of a :class:`GridSpec`, so that ``x + y`` is again a lattice
point whenever ``x`` is a grid point and ``y`` an atom.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, special

from .errors import ConfigurationError, DomainError, ModelError

__all__ = [
    "DiscreteMeasure",
    "GridSpec",
    "LevyModel",
    "convolve",
    "increment_measure",
    "lattice_offsets",
    "moment_p",
]

#: mass that may be discarded at the far ends of a lattice law (then renormalized)
TAIL_TRIM = 1e-14
#: Poisson series is cut once the omitted probability drops below this
POISSON_TAIL = 1e-10
#: default bound on increment mass falling outside [-L, L]^d
LEAK_TOL = 1e-8
# Gaussian boxes extend this many standard deviations around the mean
_SIGMA_SPAN = 9.0


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the cube ``[-L, L]^d`` with ``N`` points per axis."""

    dimension: int
    half_width: float
    points: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.dimension}")
        if not self.half_width > 0:
            raise DomainError(f"half-width must be positive, got {self.half_width}")
        if self.points < 3:
            raise DomainError(f"need at least 3 points per axis, got {self.points}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.points - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dimension

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.points)

    def coordinates(self) -> np.ndarray:
        """Array of shape ``(*shape, d)`` with the coordinates of every node."""
        axes = np.meshgrid(*([self.axis] * self.dimension), indexing="ij")
        return np.stack(axes, axis=-1)

    def index_of(self, x) -> tuple[int, ...]:
        """Multi-index of the grid node at ``x``; raises if ``x`` is off-grid."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dimension,):
            raise DomainError(f"point {x} does not have dimension {self.dimension}")
        k = (x + self.half_width) / self.h
        ki = np.rint(k)
        if np.any(np.abs(k - ki) > 1e-9) or np.any(ki < 0) or np.any(ki > self.points - 1):
            raise DomainError(f"point {x.tolist()} is not a node of the grid")
        return tuple(int(v) for v in ki)

    def refined(self) -> "GridSpec":
        """Grid with half the spacing on the same cube (``2N - 1`` points)."""
        return GridSpec(self.dimension, self.half_width, 2 * self.points - 1)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure ``sum_i w_i delta_{x_i}`` on R^d."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if atoms.ndim != 2 or atoms.shape[0] != weights.shape[0] or atoms.shape[0] == 0:
            raise DomainError("atoms and weights must be non-empty and of equal length")
        if not np.all(np.isfinite(atoms)):
            raise DomainError("atoms must be finite")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise DomainError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "atoms", _readonly(atoms))
        object.__setattr__(self, "weights", _readonly(weights))

    @classmethod
    def normalized(cls, atoms, weights) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float)
        return cls(atoms, w / w.sum())

    @classmethod
    def dirac(cls, point=0.0) -> "DiscreteMeasure":
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[None, :], [1.0])

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.weights.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def mass_outside(self, c: float) -> float:
        """``mu({|y| >= c})``."""
        return float(self.weights[np.linalg.norm(self.atoms, axis=1) >= c].sum())

    def __repr__(self):
        return f"DiscreteMeasure(n={len(self)}, d={self.dimension})"


@dataclass(frozen=True, eq=False)
class LevyModel:
    """Brownian motion with drift plus an optional finite-activity jump part.

    ``drift`` and ``covariance`` are per unit time; jumps arrive at rate
    ``jump_intensity`` with sizes drawn from ``jump_law``.
    """

    dimension: int
    drift: np.ndarray
    covariance: np.ndarray
    jump_intensity: float = 0.0
    jump_law: DiscreteMeasure | None = None
    _key: tuple = field(init=False, repr=False)

    def __post_init__(self):
        d = self.dimension
        if d not in (1, 2):
            raise ModelError(f"dimension must be 1 or 2, got {d}")
        drift = np.array(self.drift, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float).reshape(d, d) if np.size(self.covariance) == d * d else None
        if drift.shape != (d,) or cov is None:
            raise ModelError("drift must have length d and covariance shape (d, d)")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ModelError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ModelError("covariance is not positive semidefinite")
        if not self.jump_intensity >= 0:
            raise ModelError("jump intensity must be nonnegative")
        if self.jump_law is not None and self.jump_law.dimension != d:
            raise ModelError("jump-size law has the wrong dimension")
        if self.jump_intensity > 0 and self.jump_law is None:
            raise ModelError("positive jump intensity requires a jump-size law")
        object.__setattr__(self, "drift", _readonly(drift))
        object.__setattr__(self, "covariance", _readonly(cov))
        jl = self.jump_law
        key = (
            d,
            tuple(drift),
            tuple(cov.ravel()),
            float(self.jump_intensity),
            None if jl is None else (tuple(jl.atoms.ravel()), tuple(jl.weights)),
        )
        object.__setattr__(self, "_key", key)

    @classmethod
    def brownian(cls, dimension=1, variance=1.0, drift=None) -> "LevyModel":
        drift = np.zeros(dimension) if drift is None else drift
        return cls(dimension, drift, variance * np.eye(dimension))

    @property
    def has_jumps(self) -> bool:
        return self.jump_intensity > 0 and self.jump_law is not None

    def __hash__(self):
        return hash(self._key)

    def __eq__(self, other):
        return isinstance(other, LevyModel) and self._key == other._key


def moment_p(mu: DiscreteMeasure, p: float) -> float:
    """``sum_i w_i |x_i|^p``, i.e. ``W_p(delta_0, mu)^p``."""
    if not p > 1:
        raise DomainError(f"order p must lie in (1, inf), got {p}")
    r = np.linalg.norm(mu.atoms, axis=1)
    return float(mu.weights @ r**p)


def lattice_offsets(mu: DiscreteMeasure, h: float) -> np.ndarray:
    """Integer lattice coordinates of the atoms of ``mu`` (atoms must sit on ``h Z^d``)."""
    k = mu.atoms / h
    ki = np.rint(k)
    if np.any(np.abs(k - ki) > 1e-9):
        raise DomainError("measure atoms are not on the grid lattice")
    return ki.astype(np.int64)


def convolve(mu: DiscreteMeasure, nu: DiscreteMeasure, decimals: int = 12) -> DiscreteMeasure:
    """Law of ``X + Y`` for independent ``X ~ mu`` and ``Y ~ nu`` (coincident atoms merged)."""
    if mu.dimension != nu.dimension:
        raise DomainError("dimension mismatch")
    atoms = (mu.atoms[:, None, :] + nu.atoms[None, :, :]).reshape(-1, mu.dimension)
    weights = np.outer(mu.weights, nu.weights).ravel()
    keys, inv = np.unique(np.round(atoms, decimals), axis=0, return_inverse=True)
    merged = np.bincount(inv.ravel(), weights=weights, minlength=len(keys))
    return DiscreteMeasure.normalized(keys, merged)


# --- lattice discretization of mu_t -------------------------------------------------
#
# Laws are handled as dense nd-arrays ``w`` together with the lattice index of
# ``w[0, ..., 0]``.


def _gaussian_axis(mean: float, var: float, h: float):
    if var <= 0.0:
        return np.ones(1), int(np.rint(mean / h))
    s = math.sqrt(var)
    lo = int(math.floor((mean - _SIGMA_SPAN * s) / h))
    hi = int(math.ceil((mean + _SIGMA_SPAN * s) / h))
    k = np.arange(lo, hi + 1)
    if s >= h:
        # point sampling of the density: moments are exact to roundoff once s >= h
        w = np.exp(-0.5 * ((k * h - mean) / s) ** 2)
    else:
        w = special.ndtr((k * h + 0.5 * h - mean) / s) - special.ndtr((k * h - 0.5 * h - mean) / s)
    return w / w.sum(), lo


def _stencil_gaussian(cov: np.ndarray, h: float) -> np.ndarray:
    # k-fold convolution of the 9-point law whose covariance is cov / k; used
    # when a correlated Gaussian is too narrow to sample its density
    c = abs(cov[0, 1])
    if cov[0, 0] < c or cov[1, 1] < c:
        raise ConfigurationError(
            "correlated covariance is below grid resolution and not diagonally dominant; "
            "refine the grid or use larger steps"
        )
    k = max(1, math.ceil((cov[0, 0] + cov[1, 1] - c) / h**2))
    a0, a1, ad = (cov[0, 0] - c) / (2 * k * h**2), (cov[1, 1] - c) / (2 * k * h**2), c / (2 * k * h**2)
    s = 1 if cov[0, 1] > 0 else -1
    one = np.zeros((3, 3))
    one[0, 1] = one[2, 1] = a0
    one[1, 0] = one[1, 2] = a1
    one[1 + s, 2] = one[1 - s, 0] = ad
    one[1, 1] = 1.0 - 2 * (a0 + a1 + ad)
    w = one
    for _ in range(k - 1):
        w = signal.convolve(w, one, method="direct")
    return np.clip(w, 0.0, None) / w.sum()


def _gaussian_part(model: LevyModel, t: float, h: float):
    d = model.dimension
    mean = model.drift * t
    cov = model.covariance * t
    off_diag = d == 2 and cov[0, 1] != 0.0
    if not off_diag:
        ws, origin = zip(*(_gaussian_axis(mean[i], cov[i, i], h) for i in range(d)))
        w = ws[0] if d == 1 else np.multiply.outer(ws[0], ws[1])
        return w, np.array(origin)
    if np.sqrt(np.linalg.eigvalsh(cov).min()) < h:
        w = _stencil_gaussian(cov, h)
        c = (w.shape[0] - 1) // 2
        return w, np.rint(mean / h).astype(int) - c
    s = np.sqrt(np.diag(cov))
    lo = np.floor((mean - _SIGMA_SPAN * s) / h).astype(int)
    hi = np.ceil((mean + _SIGMA_SPAN * s) / h).astype(int)
    k0, k1 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    y = np.stack([k0 * h - mean[0], k1 * h - mean[1]], axis=-1)
    q = np.einsum("...i,ij,...j->...", y, np.linalg.inv(cov), y)
    w = np.exp(-0.5 * q)
    return w / w.sum(), lo


def _jump_part(model: LevyModel, t: float, h: float):
    d = model.dimension
    rate = model.jump_intensity * t
    jl = model.jump_law
    idx = np.rint(jl.atoms / h).astype(int)
    jlo = idx.min(axis=0)
    single = np.zeros(tuple(idx.max(axis=0) - jlo + 1))
    np.add.at(single, tuple((idx - jlo).T), jl.weights)

    prob = math.exp(-rate)
    total = np.ones((1,) * d) * prob
    origin = np.zeros(d, dtype=int)
    power, p_origin = np.ones((1,) * d), np.zeros(d, dtype=int)
    cum, n = prob, 0
    while 1.0 - cum > POISSON_TAIL:
        n += 1
        prob *= rate / n
        power = signal.convolve(power, single, method="direct")
        p_origin = p_origin + jlo
        total, origin = _add_boxes(total, origin, prob * power, p_origin)
        cum += prob
        if n > 10_000:
            raise ConfigurationError("Poisson series did not converge")
    return total / total.sum(), origin


def _add_boxes(a, a0, b, b0):
    lo = np.minimum(a0, b0)
    hi = np.maximum(a0 + np.array(a.shape), b0 + np.array(b.shape))
    out = np.zeros(tuple(hi - lo))
    out[tuple(slice(s, s + n) for s, n in zip(a0 - lo, a.shape))] += a
    out[tuple(slice(s, s + n) for s, n in zip(b0 - lo, b.shape))] += b
    return out, lo


def _trim(w: np.ndarray, origin: np.ndarray):
    # shave negligible mass from the ends of every axis
    for ax in range(w.ndim):
        marg = w.sum(axis=tuple(i for i in range(w.ndim) if i != ax))
        c = np.cumsum(marg)
        rc = np.cumsum(marg[::-1])
        first = int(np.searchsorted(c, 0.5 * TAIL_TRIM, side="right"))
        last = len(marg) - int(np.searchsorted(rc, 0.5 * TAIL_TRIM, side="right"))
        first = min(first, last - 1)
        w = np.take(w, np.arange(first, last), axis=ax)
        origin = origin.copy()
        origin[ax] += first
    return w, origin


@functools.lru_cache(maxsize=256)
def _increment_lattice(model: LevyModel, t: float, spec: GridSpec, leak_tol: float):
    h = spec.h
    d = model.dimension
    if t == 0.0:
        return np.zeros((1, d), dtype=np.int64), np.ones(1), 0.0
    w, origin = _gaussian_part(model, t, h)
    if model.has_jumps:
        jw, jo = _jump_part(model, t, h)
        w = signal.convolve(w, jw, method="direct")
        origin = origin + jo
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    idx = np.argwhere(w > 0)
    weights = w[tuple(idx.T)]
    offsets = idx + origin
    inside = np.all(np.abs(offsets) * h <= spec.half_width * (1 + 1e-12), axis=1)
    leak = float(weights[~inside].sum())
    if leak > leak_tol:
        raise ConfigurationError(
            f"increment law at t={t:g} leaks mass {leak:.3e} > {leak_tol:g} outside "
            f"[-{spec.half_width:g}, {spec.half_width:g}]^{d}; enlarge the half-width"
        )
    w = np.zeros_like(w)
    w[tuple((offsets[inside] - origin).T)] = weights[inside]
    w, origin = _trim(w, origin)
    idx = np.argwhere(w > 0)
    weights = w[tuple(idx.T)]
    weights = weights / weights.sum()
    offsets = (idx + origin).astype(np.int64)
    offsets.setflags(write=False)
    weights.setflags(write=False)
    return offsets, weights, leak


def increment_measure(
    model: LevyModel, t: float, spec: GridSpec, leak_tol: float = LEAK_TOL
) -> DiscreteMeasure:
    """Lattice discretization of the law ``mu_t`` of the Levy increment over time ``t``.

    The Gaussian part is sampled from its density at lattice points (cell
    probabilities from the CDF when the standard deviation is below the grid
    spacing, nearest lattice point when it is zero), the compound-Poisson part
    is a truncated Poisson series over snapped jump sizes, and both are
    convolved on the lattice.  Mass beyond ``[-L, L]^d`` above ``leak_tol``
    raises :class:`ConfigurationError`.
    """
    if not t >= 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if model.dimension != spec.dimension:
        raise DomainError("model and grid dimensions differ")
    offsets, weights, _ = _increment_lattice(model, float(t), spec, float(leak_tol))
    return DiscreteMeasure(offsets * spec.h, weights)


def increment_lattice(model: LevyModel, t: float, spec: GridSpec, leak_tol: float = LEAK_TOL):
    """Integer offsets and weights of :func:`increment_measure` (cached)."""
    if not t >= 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if model.dimension != spec.dimension:
        raise DomainError("model and grid dimensions differ")
    offsets, weights, _ = _increment_lattice(model, float(t), spec, float(leak_tol))
    return offsets, weights
