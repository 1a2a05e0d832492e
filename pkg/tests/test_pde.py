import numpy as np
import pytest

from robust_semigroup import ConfigurationError, DiscreteMeasure, DomainError
from robust_semigroup.harness import random_grid_function
from robust_semigroup.measures import GridSpec, LevyModel
from robust_semigroup.oracles import gaussian_bump_smoothed
from robust_semigroup.pde import (
    SchemeConfig,
    generator_apply,
    generator_limit_check,
    hamiltonian,
    pde_solve,
    upwind_gradient_norm,
)
from robust_semigroup.semigroup import GridFunction, step
from robust_semigroup.transport import Penalty, phi_conjugate

BM = LevyModel.brownian()
JUMPS = DiscreteMeasure([[-0.5], [0.5]], [0.5, 0.5])
SPEC = GridSpec(1, 8.0, 257)


def bump(x):
    return np.exp(-0.5 * x**2)


def interior(spec, frac=0.5):
    return np.all(np.abs(spec.coordinates()) <= frac * spec.half_width, axis=-1)


def solve(f, model, pen, T=0.5):
    return pde_solve(f, SchemeConfig.for_initial(f, model, pen, T))


def drift_ball_gap(g, gamma, delta, n, rng):
    # sampled max of eta.g over the closed ball |eta - gamma| <= delta, minus the closed form
    d = len(g)
    u = rng.normal(size=(n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = delta * rng.random(n) ** (1.0 / d)
    r[: n // 2] = delta  # half of the samples on the sphere, where the maximum lives
    eta = gamma + r[:, None] * u
    return float((eta @ g).max() - (gamma @ g + hamiltonian(Penalty.ball(delta), g)))


class TestGenerator:
    def test_zero(self):
        assert np.all(generator_apply(GridFunction.zeros(SPEC), BM).values == 0.0)

    def test_quadratic_under_unit_diffusion(self):
        f = GridFunction.from_callable(SPEC, lambda x: x**2)
        out = generator_apply(f, BM).values
        np.testing.assert_allclose(out[1:-1], 1.0, atol=1e-9)

    def test_jump_part_on_quadratic(self):
        model = LevyModel(1, [0.0], [[0.0]], 2.0, JUMPS)
        f = GridFunction.from_callable(SPEC, lambda x: x**2)
        # lambda * (E (x + J)^2 - x^2) = lambda * E J^2
        np.testing.assert_allclose(generator_apply(f, model).values[interior(SPEC)], 0.5, atol=1e-9)

    @pytest.mark.parametrize("c", [0.3, -0.3, 1.0])
    def test_cross_term_on_product(self, c):
        spec = GridSpec(2, 3.0, 25)
        model = LevyModel(2, [0, 0], [[1.0, c], [c, 1.0]])
        f = GridFunction.from_callable(spec, lambda x: x[..., 0] * x[..., 1] + x[..., 0] ** 2)
        out = generator_apply(f, model).values
        np.testing.assert_allclose(out[1:-1, 1:-1], c + 1.0, atol=1e-9)

    def test_drift_on_sine_is_first_order(self):
        model = LevyModel(1, [2.0], [[0.0]])
        errs = []
        for n in (257, 513, 1025):
            spec = GridSpec(1, 8.0, n)
            f = GridFunction.from_callable(spec, np.sin)
            x = spec.axis
            m = interior(spec)
            err = np.abs(generator_apply(f, model).values - 2 * np.cos(x))[m].max()
            assert err <= 2 * spec.h
            errs.append(err)
        assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8

    def test_non_dominant_covariance_rejected(self):
        spec = GridSpec(2, 3.0, 13)
        with pytest.raises(ConfigurationError):
            generator_apply(GridFunction.zeros(spec), LevyModel(2, [0, 0], [[1.0, 1.2], [1.2, 2.0]]))

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            generator_apply(GridFunction.zeros(SPEC), LevyModel.brownian(2))


class TestHamiltonian:
    def test_zero_gradient(self):
        assert hamiltonian(Penalty.ball(2.0), [0.0]) == 0.0
        assert hamiltonian(Penalty.power(1.0, 4.0), [0.0, 0.0]) == 0.0

    def test_ball_is_delta_times_norm(self):
        assert hamiltonian(Penalty.ball(2.0), [3.0]) == 6.0
        assert hamiltonian(Penalty.ball(2.0), [3.0, 4.0]) == 10.0

    def test_power_uses_conjugate(self):
        pen = Penalty.power(1.0, 4.0)
        assert hamiltonian(pen, [-2.0]) == pytest.approx(phi_conjugate(pen, 2.0), rel=1e-15)

    @pytest.mark.parametrize("seed", range(100))
    def test_drift_ball_identity(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 4))
        g, gamma = rng.normal(size=d), rng.normal(size=d)
        delta = float(rng.uniform(0, 2))
        gap = drift_ball_gap(g, gamma, delta, 10**5, rng)
        assert -1e-3 <= gap <= 1e-12

    def test_upwind_gradient_of_tent(self):
        spec = GridSpec(1, 2.0, 9)
        u = np.maximum(0.0, 1.0 - np.abs(spec.axis))
        g = upwind_gradient_norm(u, spec.h)
        # at the peak neither one-sided slope points uphill, so the maximizing choice is 0
        assert g[4] == 0.0
        assert g[3] == pytest.approx(1.0) and g[5] == pytest.approx(1.0)


class TestSchemeConfig:
    def test_rate_and_step(self):
        f = GridFunction.from_callable(SPEC, bump)
        cfg = SchemeConfig.for_initial(f, LevyModel(1, [0.5], [[1.0]], 1.0, JUMPS), Penalty.ball(1.0), 1.0)
        h = SPEC.h
        assert cfg.rate == pytest.approx(1 / h**2 + 1.5 / h + 1.0)
        assert cfg.dt * cfg.rate <= 0.9 and cfg.n_steps * cfg.dt == pytest.approx(1.0)

    def test_power_slope_uses_gradient_bound(self):
        f = GridFunction.from_callable(SPEC, bump)
        pen = Penalty.power(1.0, 4.0)
        cfg = SchemeConfig.for_initial(f, BM, pen, 1.0)
        assert cfg.hamiltonian_slope == pytest.approx(pen.conjugate_slope(cfg.gradient_bound))

    def test_understated_gradient_is_a_cfl_violation(self):
        f = GridFunction.from_callable(SPEC, lambda x: 3 * bump(x))
        cfg = SchemeConfig(SPEC, 0.5, Penalty.power(1.0, 4.0), BM, 0.1)
        with pytest.raises(ConfigurationError):
            pde_solve(f, cfg)

    def test_grid_mismatch(self):
        cfg = SchemeConfig.for_initial(GridFunction.zeros(SPEC), BM, Penalty.ball(1.0), 1.0)
        with pytest.raises(DomainError):
            pde_solve(GridFunction.zeros(GridSpec(1, 8.0, 129)), cfg)

    def test_non_dominant_covariance_rejected(self):
        with pytest.raises(ConfigurationError):
            SchemeConfig(GridSpec(2, 3.0, 13), 1.0, Penalty.ball(1.0), LevyModel(2, [0, 0], [[1, 1.2], [1.2, 2]]), 1.0)


class TestPdeSolve:
    def test_heat_equation_matches_gaussian_smoothing(self):
        spec = GridSpec(1, 8.0, 1025)
        f = GridFunction.from_callable(spec, bump)
        u = solve(f, BM, Penalty.ball(0.0), 1.0)
        exact = gaussian_bump_smoothed(spec.coordinates(), [0.0], 1.0, [0.0], [[1.0]])
        assert np.abs(u.values - exact).max() <= 1e-3

    @pytest.mark.parametrize("pen", [Penalty.ball(1.0), Penalty.power(1.0, 4.0)])
    def test_zero(self, pen):
        assert np.all(solve(GridFunction.zeros(SPEC), BM, pen).values == 0.0)

    def test_time_zero_is_identity(self):
        f = GridFunction.from_callable(SPEC, bump)
        np.testing.assert_array_equal(solve(f, BM, Penalty.ball(1.0), 0.0).values, f.values)

    def test_larger_radius_dominates(self):
        f = GridFunction.from_callable(SPEC, bump)
        lo = solve(f, BM, Penalty.ball(0.5)).values
        hi = solve(f, BM, Penalty.ball(1.5)).values
        assert np.all(lo <= hi + 1e-9)

    @pytest.mark.parametrize("pen", [Penalty.ball(1.0), Penalty.power(1.0, 4.0)])
    @pytest.mark.parametrize("seed", range(3))
    def test_monotone_and_contractive(self, pen, seed):
        rng = np.random.default_rng(seed)
        f, g = random_grid_function(SPEC, rng), random_grid_function(SPEC, rng)
        lo = f.with_values(np.minimum(f.values, g.values))
        model = LevyModel(1, [0.3], [[1.0]], 1.0, JUMPS)
        # one scheme (time step) for all three runs so that monotonicity is a property of a single map
        G = max(float(upwind_gradient_norm(v.values, SPEC.h).max()) for v in (f, g, lo))
        cfg = SchemeConfig(SPEC, 0.25, pen, model, G)
        uf, ug, ulo = (pde_solve(v, cfg).values for v in (f, g, lo))
        assert np.all(ulo <= uf + 1e-9)
        assert np.abs(uf - ug).max() <= np.abs(f.values - g.values).max() + 1e-9

    @pytest.mark.parametrize("alpha", [0.5, 3.0])
    def test_ball_positively_homogeneous(self, alpha):
        f = GridFunction.from_callable(SPEC, bump)
        cfg = SchemeConfig.for_initial(f.with_values(3.0 * f.values), BM, Penalty.ball(1.0), 0.5)
        a = pde_solve(f.with_values(alpha * f.values), cfg).values
        np.testing.assert_allclose(a, alpha * pde_solve(f, cfg).values, rtol=0, atol=1e-9)

    @pytest.mark.parametrize("pen", [Penalty.ball(1.0), Penalty.power(1.0, 4.0)])
    def test_one_step_consistency_on_quadratic(self, pen):
        # u1 - f = dt (A f + phi*(|f'|)) + O(dt^2 + dt h) for f = x^2/4 on the interior
        errs = []
        for n in (257, 513):
            spec = GridSpec(1, 4.0, n)
            f = GridFunction.from_callable(spec, lambda x: 0.25 * x**2)
            cfg = SchemeConfig.for_initial(f, BM, pen, 1.0)
            one = SchemeConfig(spec, cfg.dt, pen, BM, cfg.gradient_bound)
            u1 = pde_solve(f, one).values
            x = spec.axis
            exact = cfg.dt * (0.25 + phi_conjugate(pen, np.abs(0.5 * x)))
            m = interior(spec)
            err = np.abs(u1 - f.values - exact)[m].max()
            assert err <= 2 * cfg.dt * (cfg.dt + spec.h) * (1 + pen.conjugate_slope(2.0))
            errs.append(err / cfg.dt)
        assert errs[1] < errs[0]


class TestGeneratorLimit:
    def test_classical_profile_decreases(self):
        f = GridFunction.from_callable(SPEC, bump)
        prof = generator_limit_check(f, BM, Penalty.ball(0.0), [2.0**-k for k in range(2, 6)], gradient=-SPEC.axis * f.values)
        assert all(b < a for a, b in zip(prof, prof[1:]))

    @pytest.mark.parametrize("gamma,delta", [(0.0, 1.0), (0.5, 1.0), (-0.5, 0.5)])
    def test_linear_function_moves_at_drift_plus_radius(self, gamma, delta):
        spec = GridSpec(1, 8.0, 1025)
        f = GridFunction.from_callable(spec, lambda x: np.clip(x, -4.0, 4.0))
        model = LevyModel(1, [gamma], [[1.0]])
        for t in (0.25, 0.125):
            rate = (step(f, model, Penalty.ball(delta), t, refine=4).values - f.values) / t
            m = interior(spec, 0.2)
            assert np.abs(rate[m] - (gamma + delta)).max() <= 2 * spec.h / t

    def test_times_validated(self):
        with pytest.raises(DomainError):
            generator_limit_check(GridFunction.zeros(SPEC), BM, Penalty.ball(1.0), [0.5, 0.0])
