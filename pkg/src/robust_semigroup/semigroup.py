"""Grid functions, the one-step robust operator and its dyadic iterates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import DomainError
from .measures import GridSpec, LevyModel, increment_lattice
from .transport import Penalty, robust_operator

__all__ = [
    "DyadicSchedule",
    "GridFunction",
    "MonotoneReport",
    "check_key_inequality",
    "check_monotone_in_n",
    "discrete_tolerance",
    "iterate",
    "modulus_table",
    "step",
    "strong_continuity_profile",
]

#: lags (in grid steps) at which the modulus of continuity is sampled
MODULUS_LAGS = (1, 2, 4, 8, 16)


def modulus_table(values: np.ndarray, lags=MODULUS_LAGS) -> np.ndarray:
    """``omega(k h) = max |f(x + k h e_i) - f(x)|`` over axes, for each lag ``k``.

    The zero extension outside the grid is included, so boundary jumps count.
    """
    values = np.asarray(values, dtype=float)
    out = np.zeros(len(lags))
    for n, k in enumerate(lags):
        padded = np.pad(values, k)
        for ax in range(values.ndim):
            a = np.take(padded, range(k, padded.shape[ax]), axis=ax)
            b = np.take(padded, range(0, padded.shape[ax] - k), axis=ax)
            out[n] = max(out[n], float(np.abs(a - b).max()))
    return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a function on a :class:`GridSpec`, extended by zero outside."""

    spec: GridSpec
    values: np.ndarray
    sup_norm: float = field(init=False)
    modulus: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.spec.shape:
            raise DomainError(f"values have shape {values.shape}, grid needs {self.spec.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sup_norm", float(np.abs(values).max()))
        mod = modulus_table(values)
        mod.setflags(write=False)
        object.__setattr__(self, "modulus", mod)

    @classmethod
    def from_callable(cls, spec: GridSpec, fn) -> "GridFunction":
        """Evaluate ``fn`` on the node coordinates (shape ``(*shape, d)``; 1-d gets ``(N,)``)."""
        x = spec.coordinates()
        if spec.dimension == 1:
            x = x[..., 0]
        return cls(spec, np.broadcast_to(fn(x), spec.shape))

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.shape))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.spec, values)

    def lipschitz_estimate(self) -> float:
        """Largest difference quotient at the sampled lags."""
        lags = np.asarray(MODULUS_LAGS, dtype=float)
        return float(np.max(self.modulus / (lags * self.spec.h)))

    def restrict(self, coarse: GridSpec) -> "GridFunction":
        """Subsample onto a coarser grid on the same cube whose nodes are nodes of this one."""
        ratio = (self.spec.points - 1) / (coarse.points - 1)
        if coarse.half_width != self.spec.half_width or ratio != int(ratio):
            raise DomainError("coarse grid is not nested in this grid")
        sl = (slice(None, None, int(ratio)),) * self.spec.dimension
        return GridFunction(coarse, self.values[sl])

    def __call__(self, x) -> float:
        return float(self.values[self.spec.index_of(x)])


def discrete_tolerance(f: GridFunction) -> float:
    """``10 h (1 + Lip f)``: slack granted to exact inequalities on the grid."""
    return 10.0 * f.spec.h * (1.0 + f.lipschitz_estimate())


@dataclass(frozen=True)
class DyadicSchedule:
    """Steps of the level-``n`` iterate on ``[0, T]``: remainder first, then ``2^-n`` steps."""

    level: int
    horizon: float

    def __post_init__(self):
        if self.level < 0 or int(self.level) != self.level:
            raise DomainError(f"level must be a nonnegative integer, got {self.level}")
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")

    @property
    def dyadic_time(self) -> float:
        """Largest multiple of ``2^-n`` not exceeding ``T``."""
        scale = 2.0**self.level
        return math.floor(self.horizon * scale) / scale

    @property
    def remainder(self) -> float:
        return self.horizon - self.dyadic_time

    @property
    def n_steps(self) -> int:
        return int(round(self.dyadic_time * 2.0**self.level))

    @property
    def steps(self) -> tuple[float, ...]:
        dt = 2.0**-self.level
        head = (self.remainder,) if self.remainder > 0 else ()
        out = head + (dt,) * self.n_steps
        assert math.fsum(out) == self.horizon
        return out


def step(f: GridFunction, model: LevyModel, penalty: Penalty, t: float, *, refine: int = 1,
         backend: str | None = None) -> GridFunction:
    """One application of the robust operator ``S(t)`` at every grid node."""
    if not t >= 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0:
        return f
    spec = f.spec
    offsets, weights = increment_lattice(model, t, spec)
    kind, R, _, _ = penalty.dual_params(t)
    if kind == _backend.KIND_BALL and R == 0:
        return f.with_values(_lattice_average(f.values, offsets, weights))
    values, _ = robust_operator(f.values, spec, offsets, weights, penalty, t, refine=refine, backend=backend)
    return f.with_values(values)


def _lattice_average(values: np.ndarray, offsets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # sum_i w_i f(x + y_i) with zero extension
    pad = int(np.abs(offsets).max())
    E = np.pad(values, pad)
    out = np.zeros(values.shape)
    n = values.shape[0]
    for off, w in zip(offsets, weights):
        sl = tuple(slice(pad + o, pad + o + n) for o in off)
        out += w * E[sl]
    return out


def iterate(f: GridFunction, model: LevyModel, penalty: Penalty, schedule: DyadicSchedule, *,
            refine: int = 1, backend: str | None = None) -> GridFunction:
    """Level-``n`` iterate: the remainder step acts on ``f`` first, then the ``2^-n`` steps."""
    u = f
    for dt in schedule.steps:
        u = step(u, model, penalty, dt, refine=refine, backend=backend)
    return u


@dataclass(frozen=True)
class MonotoneReport:
    """Per-level results of the dyadic decrease check.

    ``violations[k]`` is ``max(S^{n+1}(T) f - S^n(T) f, 0)`` for ``n = levels[k]``.
    """

    levels: tuple[int, ...]
    violations: tuple[float, ...]
    tolerance: float
    iterates: tuple[GridFunction, ...] = field(repr=False, default=())

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.violations)


def check_monotone_in_n(f: GridFunction, model: LevyModel, penalty: Penalty, T: float, n_max: int, *,
                        n_min: int = 0, refine: int = 1, backend: str | None = None) -> MonotoneReport:
    """Check that finer dyadic iterates never exceed coarser ones (up to the grid slack)."""
    if n_max < 1 or n_min >= n_max:
        raise DomainError("need 0 <= n_min < n_max")
    us = [iterate(f, model, penalty, DyadicSchedule(n, T), refine=refine, backend=backend)
          for n in range(n_min, n_max + 1)]
    viol = tuple(max(0.0, float(np.max(b.values - a.values))) for a, b in zip(us, us[1:]))
    return MonotoneReport(tuple(range(n_min, n_max)), viol, discrete_tolerance(f), tuple(us))


def check_key_inequality(f: GridFunction, model: LevyModel, penalty: Penalty, s: float, t: float, *,
                         refine: int = 1, backend: str | None = None) -> float:
    """``max(S(s) S(t-s) f - S(t) f, 0)`` over the grid."""
    if not 0 < s < t:
        raise DomainError(f"need 0 < s < t, got s={s}, t={t}")
    two = step(step(f, model, penalty, t - s, refine=refine, backend=backend), model, penalty, s,
               refine=refine, backend=backend)
    one = step(f, model, penalty, t, refine=refine, backend=backend)
    return max(0.0, float(np.max(two.values - one.values)))


def strong_continuity_profile(f: GridFunction, model: LevyModel, penalty: Penalty, t_list, *,
                              refine: int = 1, backend: str | None = None) -> list[float]:
    """``||S(t) f - f||_inf`` for each ``t`` in the (positive, decreasing) list."""
    t_list = [float(t) for t in t_list]
    if any(t <= 0 for t in t_list) or any(b >= a for a, b in zip(t_list, t_list[1:])):
        raise DomainError("times must be positive and strictly decreasing")
    return [float(np.abs(step(f, model, penalty, t, refine=refine, backend=backend).values - f.values).max())
            for t in t_list]
