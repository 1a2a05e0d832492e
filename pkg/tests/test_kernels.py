"""Compiled dual solver against the numpy primal greedy, plus hull structure."""
import numpy as np
import pytest

from robust_semigroup import _backend, _kernels_py
from robust_semigroup.measures import GridSpec
from robust_semigroup.transport import Penalty, _offset_table, _prepare, robust_operator

needs_compiled = pytest.mark.skipif("compiled" not in _backend.available(), reason="extension not built")


def instance(rng, d):
    spec = GridSpec(d, 3.0, 11 if d == 2 else 65)
    vals = rng.normal(size=spec.shape)
    k = int(rng.integers(1, 6))
    offs = rng.integers(-3, 4, size=(k, d))
    w = rng.random(k)
    return spec, vals, offs, w / w.sum()


PENALTIES = [
    (Penalty.ball(0.7), 1.0),
    (Penalty.ball(2.0, p=1.5), 0.5),
    (Penalty.power(1.0, 4.0), 0.3),
    (Penalty.power(0.5, 2.5, p=2.0), 1.0),
    (Penalty.power(2.0, 3.0, p=1.5), 0.05),
]


@needs_compiled
@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("refine", [1, 3])
@pytest.mark.parametrize("pen,t", PENALTIES)
def test_backends_agree(d, refine, pen, t):
    rng = np.random.default_rng(hash((d, refine, pen.kind, t)) % 2**32)
    for _ in range(3):
        spec, vals, offs, w = instance(rng, d)
        a, _ = robust_operator(vals, spec, offs, w, pen, t, refine=refine, backend="compiled")
        b, _ = robust_operator(vals, spec, offs, w, pen, t, refine=refine, backend="python")
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * (1 + np.abs(vals).max()))


@needs_compiled
def test_compiled_hulls_match_fallback():
    rng = np.random.default_rng(3)
    spec, vals, offs, _ = instance(rng, 2)
    hull_c = _prepare(vals, spec, offs, 2.0, 2, _backend.get("compiled")).hull
    hull_p = _prepare(vals, spec, offs, 2.0, 2, _backend.get("python")).hull
    for x, y in zip(hull_c, hull_p):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("backend", _backend.available())
def test_hull_structure(backend):
    rng = np.random.default_rng(11)
    spec, vals, offs, _ = instance(rng, 1)
    data = _prepare(vals, spec, offs, 2.0, 1, _backend.get(backend))
    ptr, hc, hv, hs, hd = data.hull
    table = _offset_table(*data.F.shape)[0]
    F = data.F[0]
    for v in range(len(ptr) - 1):
        sl = slice(ptr[v], ptr[v + 1])
        c, val, s = hc[sl], hv[sl], hs[sl]
        assert c[0] == 0.0 and np.isinf(s[0]) and hd[ptr[v]] == 0
        assert np.all(np.diff(c) > 0) and np.all(np.diff(val) > 0)
        assert np.all(np.diff(s[1:]) < 0)
        dest = v + table[hd[sl], 1]
        np.testing.assert_array_equal(val, F[dest])
        np.testing.assert_allclose(c, (np.abs(dest - v) * spec.h) ** 2, rtol=1e-14)


@pytest.mark.parametrize("backend", _backend.available())
@pytest.mark.parametrize("pen", [Penalty.ball(0.8), Penalty.power(1.0, 3.0)])
def test_weak_duality_against_direct_inner_maxima(backend, pen):
    # for every multiplier, sum_i w_i max_z (f(x+z) - lam |z - y_i|^p) + psi*(lam) bounds the value
    rng = np.random.default_rng(5)
    spec, vals, offs, w = instance(rng, 1)
    t = 0.5
    out, _ = robust_operator(vals, spec, offs, w, pen, t, backend=backend)
    pad = 8
    E = np.pad(vals, pad)
    z = np.arange(len(E))
    kind, R, a, beta = pen.dual_params(t)
    for xi in (5, 30, 60):
        for lam in np.concatenate(([0.0], np.geomspace(1e-3, 1e3, 40))):
            G = sum(wk * np.max(E - lam * (np.abs(z - (xi + pad + o[0])) * spec.h) ** 2) for o, wk in zip(offs, w))
            if pen.is_ball:
                conj = lam * R
            else:
                r = (lam / (a * beta)) ** (1 / (beta - 1))
                conj = lam * r - a * r**beta
            assert out[xi] <= G + conj + 1e-12


def test_backend_selection_by_environment(monkeypatch):
    monkeypatch.setenv("ROBUST_SEMIGROUP_BACKEND", "python")
    assert _backend.get() is _kernels_py
    monkeypatch.setenv("ROBUST_SEMIGROUP_BACKEND", "nonsense")
    with pytest.raises(ValueError):
        _backend.get()


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("ROBUST_SEMIGROUP_THREADS", "3")
    assert _backend.threads() == 3
    monkeypatch.setenv("ROBUST_SEMIGROUP_THREADS", "auto")
    assert _backend.threads() == 0
