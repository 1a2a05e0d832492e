"""Experiment configuration, convergence studies, property suites and CSV reports."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import interpolate

from .errors import ConfigurationError, DomainError, ModelError
from .measures import DiscreteMeasure, GridSpec, LevyModel, increment_measure, moment_p
from .oracles import relocation_oracle
from .pde import SchemeConfig, generator_limit_check, pde_solve
from .semigroup import (
    DyadicSchedule,
    GridFunction,
    check_key_inequality,
    check_monotone_in_n,
    discrete_tolerance,
    iterate,
    step,
    strong_continuity_profile,
)
from .transport import Penalty, robust_sup_ball

__all__ = [
    "CheckResult",
    "ConvergenceReport",
    "ExperimentConfig",
    "PropertyReport",
    "emit_profile",
    "initial_function",
    "load_config",
    "run_checks",
    "run_converge",
]

MAX_LEVEL = 12
BOUNDARY_TOL = 1e-6
#: inter-level gaps at or below this (relative to ||f||) count as roundoff
GAP_FLOOR = 1e-12


# --- configuration -----------------------------------------------------------------


def _model_from_dict(d: dict) -> LevyModel:
    dim = int(d.get("dimension", 1))
    drift = d.get("drift", [0.0] * dim)
    cov = d.get("covariance", np.eye(dim).tolist())
    jumps = d.get("jumps")
    if jumps:
        atoms = np.asarray(jumps["atoms"], dtype=float).reshape(-1, dim)
        law = DiscreteMeasure.normalized(atoms, jumps["weights"])
        return LevyModel(dim, drift, cov, float(jumps["intensity"]), law)
    return LevyModel(dim, drift, cov)


def _model_to_dict(m: LevyModel) -> dict:
    out = {
        "dimension": m.dimension,
        "drift": np.asarray(m.drift, dtype=float).tolist(),
        "covariance": np.asarray(m.covariance, dtype=float).tolist(),
    }
    if m.has_jumps:
        out["jumps"] = {
            "intensity": m.jump_intensity,
            "atoms": m.jump_law.atoms.tolist(),
            "weights": m.jump_law.weights.tolist(),
        }
    return out


def _penalty_from_dict(d: dict) -> Penalty:
    kind = d.get("kind", "ball")
    p = float(d.get("p", 2.0))
    if kind == "ball":
        return Penalty.ball(float(d.get("delta", 1.0)), p)
    if kind == "power":
        return Penalty.power(float(d["c"]), float(d["q"]), p)
    raise ModelError(f"unknown penalty kind {kind!r}")


def _penalty_to_dict(pen: Penalty) -> dict:
    if pen.is_ball:
        return {"kind": "ball", "p": pen.p, "delta": pen.delta}
    return {"kind": "power", "p": pen.p, "c": pen.c, "q": pen.q}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: model, penalty, grid, horizon, dyadic levels and initial function."""

    model: LevyModel
    penalty: Penalty
    grid: GridSpec
    horizon: float = 1.0
    n_min: int = 1
    n_max: int = 6
    initial: dict = field(default_factory=lambda: {"name": "gaussian-bump", "center": 0.0, "width": 1.0})
    output_dir: str = "out"
    seed: int = 0
    refine: int = 1
    gap_tolerance: float = 5e-2
    generator_tolerance: float = 5e-2
    check_samples: int = 20

    def __post_init__(self):
        if self.model.dimension != self.grid.dimension:
            raise ConfigurationError("model and grid dimensions differ")
        if not (0 <= self.n_min <= self.n_max <= MAX_LEVEL):
            raise ConfigurationError(f"need 0 <= n_min <= n_max <= {MAX_LEVEL}")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if int(self.refine) != self.refine or self.refine < 1:
            raise ConfigurationError("refine must be a positive integer")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            model = _model_from_dict(d.get("model", {}))
            grid_d = d.get("grid", {})
            grid = GridSpec(int(grid_d.get("dimension", model.dimension)), float(grid_d.get("half_width", 8.0)),
                            int(grid_d.get("points", 1025)))
            return cls(
                model=model,
                penalty=_penalty_from_dict(d.get("penalty", {})),
                grid=grid,
                horizon=float(d.get("horizon", 1.0)),
                n_min=int(d.get("n_min", 1)),
                n_max=int(d.get("n_max", 6)),
                initial=dict(d.get("initial", {"name": "gaussian-bump", "center": 0.0, "width": 1.0})),
                output_dir=str(d.get("output_dir", "out")),
                seed=int(d.get("seed", 0)),
                refine=int(d.get("refine", 1)),
                gap_tolerance=float(d.get("gap_tolerance", 5e-2)),
                generator_tolerance=float(d.get("generator_tolerance", 5e-2)),
                check_samples=int(d.get("check_samples", 20)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed config: {exc!r}") from exc
        except (DomainError, ModelError) as exc:
            raise ConfigurationError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "model": _model_to_dict(self.model),
            "penalty": _penalty_to_dict(self.penalty),
            "grid": {"dimension": self.grid.dimension, "half_width": self.grid.half_width,
                     "points": self.grid.points},
            "horizon": self.horizon,
            "n_min": self.n_min,
            "n_max": self.n_max,
            "initial": self.initial,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "refine": self.refine,
            "gap_tolerance": self.gap_tolerance,
            "generator_tolerance": self.generator_tolerance,
            "check_samples": self.check_samples,
        }

    def with_overrides(self, *, level=None, delta=None, grid_n=None, horizon=None, out=None) -> "ExperimentConfig":
        """Apply command-line overrides; ``level`` pins both ends of the level range."""
        cfg = self
        if level is not None:
            cfg = replace(cfg, n_min=int(level), n_max=int(level))
        if delta is not None:
            if not cfg.penalty.is_ball:
                raise ConfigurationError("--delta only applies to ball penalties")
            cfg = replace(cfg, penalty=Penalty.ball(float(delta), cfg.penalty.p))
        if grid_n is not None:
            cfg = replace(cfg, grid=GridSpec(cfg.grid.dimension, cfg.grid.half_width, int(grid_n)))
        if horizon is not None:
            cfg = replace(cfg, horizon=float(horizon))
        if out is not None:
            cfg = replace(cfg, output_dir=str(out))
        return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def _preset(initial: dict, x: np.ndarray, d: int):
    # returns (values, gradient or None); x has shape (..., d)
    name = initial.get("name", "gaussian-bump")
    center = np.broadcast_to(np.asarray(initial.get("center", 0.0), dtype=float), (d,))
    z = x - center
    r = np.linalg.norm(z, axis=-1)
    if name == "gaussian-bump":
        w = float(initial.get("width", 1.0))
        val = np.exp(-0.5 * (r / w) ** 2)
        return val, -z / w**2 * val[..., None]
    if name == "tent":
        w = float(initial.get("width", 1.0))
        val = np.maximum(0.0, 1.0 - r / w)
        with np.errstate(invalid="ignore", divide="ignore"):
            grad = np.where((r > 0) & (r < w), -1.0 / (w * np.where(r > 0, r, 1.0)), 0.0)[..., None] * z
        return val, grad
    if name == "clipped-identity":
        if d != 1:
            raise ConfigurationError("clipped-identity is one-dimensional")
        a = float(initial.get("clip", 4.0))
        s = z[..., 0]
        mag = np.minimum(np.abs(s), np.minimum(a, np.maximum(0.0, 2 * a - np.abs(s))))
        val = np.sign(s) * mag
        grad = np.where(np.abs(s) < a, 1.0, np.where(np.abs(s) < 2 * a, -1.0, 0.0))
        return val, grad[..., None]
    if name == "custom":
        vals = np.asarray(initial["values"], dtype=float)
        return vals, None
    raise ConfigurationError(f"unknown initial function {name!r}")


def initial_function(config: ExperimentConfig, spec: GridSpec | None = None, *, with_gradient=False):
    """Initial grid function of the experiment (optionally on another grid), boundary-checked."""
    spec = spec or config.grid
    x = spec.coordinates()
    vals, grad = _preset(config.initial, x, spec.dimension)
    if config.initial.get("name") == "custom" and spec != config.grid:
        # tabulated on the experiment grid; linear interpolation elsewhere
        if vals.shape != config.grid.shape:
            raise ConfigurationError(f"tabulated initial values have shape {vals.shape}, "
                                     f"grid needs {config.grid.shape}")
        axes = (config.grid.axis,) * spec.dimension
        vals = interpolate.interpn(axes, vals, x, bounds_error=False, fill_value=0.0)
    if vals.shape != spec.shape:
        raise ConfigurationError(f"tabulated initial values have shape {vals.shape}, grid needs {spec.shape}")
    f = GridFunction(spec, vals)
    edge = np.zeros(spec.shape, dtype=bool)
    for ax in range(spec.dimension):
        sl = [slice(None)] * spec.dimension
        sl[ax] = [0, -1]
        edge[tuple(sl)] = True
    if np.abs(f.values[edge]).max() > BOUNDARY_TOL:
        raise ConfigurationError(
            f"initial function exceeds {BOUNDARY_TOL:g} on the boundary; enlarge the half-width"
        )
    if with_gradient:
        return f, grad
    return f


# --- reports -------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one check (``passed`` is decided by the check, normally ``violation <= tolerance``)."""

    name: str
    violation: float
    tolerance: float
    passed: bool


@dataclass(frozen=True)
class ConvergenceReport:
    levels: tuple[int, ...] = ()
    n_steps: tuple[int, ...] = ()
    interlevel_gaps: tuple[float | None, ...] = ()
    gaps_to_pde: tuple[float, ...] = ()
    runtimes_ms: tuple[float, ...] = ()
    checks: tuple[CheckResult, ...] = ()
    record_runtime: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def final_gap(self) -> float | None:
        return self.gaps_to_pde[-1] if self.gaps_to_pde else None


@dataclass(frozen=True)
class PropertyReport:
    checks: tuple[CheckResult, ...] = ()

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_profile(report, path) -> Path:
    """Write a report as UTF-8 CSV with ``\\n`` line endings; returns the path."""
    path = Path(path)
    if isinstance(report, ConvergenceReport):
        header = ("level", "n_steps", "interlevel_gap", "gap_to_pde", "runtime_ms")
        rows = [
            (lv, ns, gap, pde, rt if report.record_runtime else None)
            for lv, ns, gap, pde, rt in zip(report.levels, report.n_steps, report.interlevel_gaps,
                                            report.gaps_to_pde, report.runtimes_ms)
        ]
    elif isinstance(report, PropertyReport):
        header = ("check_name", "violation", "tolerance", "pass")
        rows = [(c.name, c.violation, c.tolerance, c.passed) for c in report.checks]
    else:
        raise TypeError(f"cannot emit {type(report).__name__}")
    text = _csv_text(header, rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"writing {path}: {exc.strerror}") from exc
    return path


# --- convergence study ---------------------------------------------------------------


def _strict_decrease(name: str, seq, active) -> CheckResult:
    # largest increase between consecutive entries over the active pairs; a tie
    # counts as a failure
    diffs = [b - a for a, b, on in zip(seq, seq[1:], active) if on]
    worst = max(diffs, default=-math.inf)
    return CheckResult(name, max(worst, 0.0), 0.0, worst < 0.0)


def solve_reference(config: ExperimentConfig) -> GridFunction:
    """PDE solution at ``T`` on the once-refined grid, restricted to the experiment grid."""
    fine = config.grid.refined()
    f = initial_function(config, fine)
    scheme = SchemeConfig.for_initial(f, config.model, config.penalty, config.horizon)
    return pde_solve(f, scheme).restrict(config.grid)


def run_converge(config: ExperimentConfig, *, record_runtime: bool = False) -> ConvergenceReport:
    """Iterate every level, solve the PDE once and compare."""
    f = initial_function(config)
    u = solve_reference(config)
    levels, steps, gaps, pde_gaps, times = [], [], [], [], []
    prev = None
    mono = []
    for n in range(config.n_min, config.n_max + 1):
        sched = DyadicSchedule(n, config.horizon)
        t0 = time.perf_counter()
        cur = iterate(f, config.model, config.penalty, sched, refine=config.refine)
        times.append((time.perf_counter() - t0) * 1e3)
        levels.append(n)
        steps.append(len(sched.steps))
        pde_gaps.append(float(np.abs(cur.values - u.values).max()))
        if prev is None:
            gaps.append(None)
        else:
            gaps.append(float(np.abs(cur.values - prev.values).max()))
            mono.append(max(0.0, float(np.max(cur.values - prev.values))))
        prev = cur
    tol = discrete_tolerance(f)
    checks = [
        CheckResult("monotone_in_n", max(mono, default=0.0), tol, max(mono, default=0.0) <= tol),
        CheckResult("final_gap_to_pde", pde_gaps[-1], config.gap_tolerance, pde_gaps[-1] <= config.gap_tolerance),
    ]
    inter = [g for g in gaps if g is not None]
    if config.penalty.is_ball and config.penalty.delta == 0:
        # every level is the same linear convolution; gaps are scheme error only
        worst = max(inter, default=0.0)
        checks.append(CheckResult("interlevel_gap", worst, tol, worst <= tol))
    else:
        # levels that coincide to roundoff (zero data) are left out
        moving = [g > GAP_FLOOR * (1.0 + f.sup_norm) for g in inter]
        if any(moving):
            checks.append(_strict_decrease("gap_to_pde_decreasing", pde_gaps, moving))
        if any(moving[1:]):
            checks.append(_strict_decrease("interlevel_gap_decreasing", inter, moving[1:]))
    return ConvergenceReport(tuple(levels), tuple(steps), tuple(gaps), tuple(pde_gaps), tuple(times),
                             tuple(checks), record_runtime)


# --- property suite ------------------------------------------------------------------


def random_grid_function(spec: GridSpec, rng: np.random.Generator, n_bumps: int = 4) -> GridFunction:
    """Sum of random Gaussian bumps inside the middle half of the cube plus windowed noise."""
    x = spec.coordinates()
    L = spec.half_width
    vals = np.zeros(spec.shape)
    for _ in range(n_bumps):
        c = rng.uniform(-L / 2, L / 2, size=spec.dimension)
        w = rng.uniform(0.3, 1.5)
        vals += rng.normal() * np.exp(-0.5 * np.sum((x - c) ** 2, axis=-1) / w**2)
    window = np.exp(-0.5 * np.sum(x**2, axis=-1) / (L / 4) ** 2)
    vals += 0.1 * rng.normal(size=spec.shape) * window
    return GridFunction(spec, vals)


def _decrease_until_floor(profile, tol: float, slack: float = 2.0):
    # strictly decreasing until the minimum; afterwards within slack * minimum
    k = int(np.argmin(profile))
    shape_ok = all(b < a for a, b in zip(profile[: k + 1], profile[1 : k + 1]))
    shape_ok &= all(v <= slack * profile[k] for v in profile[k:])
    return profile[k], bool(shape_ok and profile[k] <= tol)


def run_checks(config: ExperimentConfig) -> PropertyReport:
    """Operator laws, key inequality, dyadic decrease, continuity, generator limit, tail bound, duality."""
    rng = np.random.default_rng(config.seed)
    spec, model, pen, T, m = config.grid, config.model, config.penalty, config.horizon, config.refine
    t = T / 2
    S = lambda g: step(g, model, pen, t, refine=m)  # noqa: E731
    checks = []

    contraction = monotone = convexity = homog = subadd = 0.0
    for _ in range(config.check_samples):
        f, g = random_grid_function(spec, rng), random_grid_function(spec, rng)
        Sf, Sg = S(f).values, S(g).values
        contraction = max(contraction, float(np.abs(Sf - Sg).max() - np.abs(f.values - g.values).max()))
        bump = f.with_values(f.values + np.abs(g.values))
        monotone = max(monotone, float(np.max(Sf - S(bump).values)))
        for a in (0.25, 0.5, 0.75):
            mix = S(f.with_values(a * f.values + (1 - a) * g.values)).values
            convexity = max(convexity, float(np.max(mix - a * Sf - (1 - a) * Sg)))
        if pen.is_ball:
            a = float(rng.uniform(0.1, 3.0))
            homog = max(homog, float(np.abs(S(f.with_values(a * f.values)).values - a * Sf).max()))
            subadd = max(subadd, float(np.max(S(f.with_values(f.values + g.values)).values - Sf - Sg)))
    tol = 1e-9
    checks += [
        CheckResult("contraction", max(contraction, 0.0), tol, contraction <= tol),
        CheckResult("monotonicity", max(monotone, 0.0), tol, monotone <= tol),
    ]
    zero = float(np.abs(S(GridFunction.zeros(spec)).values).max())
    checks.append(CheckResult("normalization", zero, 0.0, zero == 0.0))
    checks.append(CheckResult("convexity", max(convexity, 0.0), tol, convexity <= tol))
    if pen.is_ball:
        checks.append(CheckResult("positive_homogeneity", homog, tol, homog <= tol))
        checks.append(CheckResult("subadditivity", max(subadd, 0.0), tol, subadd <= tol))

    f0, grad = initial_function(config, with_gradient=True)
    tau = discrete_tolerance(f0)
    key = check_key_inequality(f0, model, pen, T / 4, T / 2, refine=m)
    checks.append(CheckResult("key_inequality", key, tau, key <= tau))
    if config.n_max > config.n_min:
        rep = check_monotone_in_n(f0, model, pen, T, config.n_max, n_min=config.n_min, refine=m)
        v = max(rep.violations)
        checks.append(CheckResult("monotone_in_n", v, rep.tolerance, v <= rep.tolerance))

    prof = strong_continuity_profile(f0, model, pen, [2.0**-k for k in range(2, 9)], refine=m)
    worst = max(b - 1.1 * a for a, b in zip(prof, prof[1:]))
    ok = worst <= 0 and prof[-1] < prof[0] or prof[0] == 0.0
    checks.append(CheckResult("strong_continuity", max(worst, 0.0), 0.0, bool(ok)))

    if grad is None or config.initial.get("name") != "gaussian-bump":
        smooth = replace(config, initial={"name": "gaussian-bump", "center": 0.0, "width": 1.0})
        f0, grad = initial_function(smooth, with_gradient=True)
    # only times whose robust displacement t * phi*'(|grad f|) spans a destination cell
    speed = pen.conjugate_slope(float(np.linalg.norm(grad, axis=-1).max()))
    t_min = spec.h / (m * speed) if speed > 0 else 0.0
    times = [2.0**-k for k in range(3, 10) if 2.0**-k >= t_min * (1 - 1e-12)] or [2.0**-3]
    gen = generator_limit_check(f0, model, pen, times, gradient=grad, refine=m)
    floor, ok = _decrease_until_floor(gen, config.generator_tolerance)
    checks.append(CheckResult("generator_limit", floor, config.generator_tolerance, ok))

    tail = -math.inf
    for s in (T, T / 2 ** config.n_max):
        mu = increment_measure(model, s, spec)
        r = np.linalg.norm(mu.atoms, axis=1)
        mom = moment_p(mu, pen.p) ** (1 / pen.p)
        for c in (0.25, 0.5, 1.0, 2.0, 4.0):
            tail = max(tail, float(mu.weights[r >= c].sum() - mom / c))
    checks.append(CheckResult("tail_bound", max(tail, 0.0), 1e-12, tail <= 1e-12))

    dual_gap = 0.0
    small = GridSpec(1, 4.0, 65)
    for _ in range(10):
        vals = rng.normal(size=small.points)
        k = int(rng.integers(1, 5))
        offs = rng.integers(-4, 5, size=(k, 1))
        w = rng.random(k)
        w /= w.sum()
        mu = DiscreteMeasure(offs * small.h, w)
        radius = float(rng.uniform(0, 2))
        xi = int(rng.integers(0, small.points))
        fast = robust_sup_ball(GridFunction(small, vals), mu, radius, pen.p, small.axis[xi])
        slow = relocation_oracle(vals, small.h, offs, w, radius, pen.p, (xi,))
        dual_gap = max(dual_gap, abs(fast - slow))
    checks.append(CheckResult("dual_equals_primal", dual_gap, 1e-6, dual_gap <= 1e-6))
    return PropertyReport(tuple(checks))
