import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from dirmono import heat
from dirmono.grid import (GridFunction1D, directed_dirichlet_energy, h1_seminorm, is_monotone,
                          lipschitz_seminorm)
from oracles import dirichlet_laplacian_rate

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
short_lines = arrays(float, st.integers(2, 12), elements=finite)


def test_explicit_two_cell_step():
    out = heat.step_explicit(GridFunction1D([1.0, 0.0]), 1 / 8)
    assert np.allclose(out.values, [0.5, 0.5], atol=0, rtol=0)


def test_explicit_rejects_cfl_violation():
    with pytest.raises(ValueError):
        heat.step_explicit(GridFunction1D(np.zeros(4)), 0.5 / 16 * 1.01)


@given(short_lines)
def test_explicit_fixes_nondecreasing_and_conserves_mass(v):
    u = GridFunction1D(v)
    dt = 0.5 / u.n**2
    out = heat.step_explicit(u, dt)
    assert out.mass() == pytest.approx(u.mass(), abs=1e-12)
    mono = GridFunction1D(np.sort(v))
    assert np.array_equal(heat.step_explicit(mono, dt).values, mono.values)


def test_explicit_matches_heat_stencil_on_decreasing_line():
    u = np.linspace(3, 0, 10) ** 1.5
    n, dt = 10, 0.4 / 100
    out = heat.step_explicit(GridFunction1D(u), dt).values
    lap = np.zeros(n)
    lap[1:-1] = u[2:] - 2 * u[1:-1] + u[:-2]
    lap[0], lap[-1] = u[1] - u[0], u[-2] - u[-1]
    assert np.allclose(out, u + dt * n * n * lap, atol=1e-12)


def _prox_reference(u, lam):
    n = u.size

    def obj(v):
        m = np.minimum(np.diff(v), 0.0) * n
        return 0.5 * ((v - u) ** 2).sum() / n + lam * 0.5 * (m**2).sum() / n

    return minimize(obj, u, method="BFGS", options={"gtol": 1e-12, "maxiter": 10_000}).x


@pytest.mark.parametrize("seed", range(5))
def test_implicit_step_is_the_proximal_minimizer(seed):
    u = np.random.default_rng(seed).normal(size=8)
    lam = 0.01
    out = heat.step_implicit(GridFunction1D(u), lam).values
    assert np.allclose(out, _prox_reference(u, lam), atol=1e-6)
    assert directed_dirichlet_energy(out) <= directed_dirichlet_energy(u)


@given(short_lines)
def test_implicit_fixes_nondecreasing(v):
    u = GridFunction1D(np.sort(v))
    assert np.array_equal(heat.step_implicit(u, 0.3).values, u.values)


def test_implicit_small_lambda_limit():
    u = GridFunction1D(np.random.default_rng(1).normal(size=16))
    gaps = [np.abs(heat.step_implicit(u, lam).values - u.values).max() for lam in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-3


def test_implicit_and_explicit_converge_to_each_other():
    n = 16
    u = GridFunction1D(np.where(np.arange(n) < n // 2, 1.0, 0.0))
    T = 0.02
    fine = heat.evolve(u, T, "explicit", 0.05 / n**2).states[-1].values
    errs = [np.abs(heat.evolve(u, T, "implicit", lam).states[-1].values - fine).max()
            for lam in (1e-3, 5e-4, 2.5e-4)]
    assert errs[0] > errs[1] > errs[2]
    assert 1.5 < errs[0] / errs[1] < 2.5


def test_self_convergence_under_grid_refinement():
    # u(x) = 1 - x evolved on n and 2n cells; midpoints compared after averaging.
    T = 0.01

    def final(n):
        x = (np.arange(n) + 0.5) / n
        return heat.evolve(GridFunction1D(1 - x), T, "explicit").states[-1].values

    a, b, c = final(16), final(32), final(64)
    err1 = np.abs(b.reshape(-1, 2).mean(axis=1) - a).max()
    err2 = np.abs(c.reshape(-1, 2).mean(axis=1) - b).max()
    assert err2 < err1


@pytest.mark.parametrize("scheme,step,mass_tol", [("explicit", None, 1e-12), ("implicit", 2e-3, 1e-9)])
def test_trace_invariants(scheme, step, mass_tol):
    rng = np.random.default_rng(7)
    us = [GridFunction1D(rng.normal(size=32)) for _ in range(10)]
    for tr in heat.evolve_many(us, 0.2, scheme, step):
        assert (np.diff(tr.energies) <= 1e-9).all()
        assert np.abs(tr.mass - tr.mass[0]).max() <= mass_tol
        prefix = np.cumsum(np.stack([s.values for s in tr.states]), axis=1) / 32
        assert (np.diff(prefix, axis=0) <= 1e-9).all()
        assert tr.times[-1] == pytest.approx(0.2)


def test_implicit_seminorms_and_lower_bound():
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = GridFunction1D(0.5 + rng.random(24))
        tr = heat.evolve(u, 0.2, "implicit", 5e-3)
        h1 = [h1_seminorm(s) for s in tr.states]
        lip = [lipschitz_seminorm(s) for s in tr.states]
        assert (np.diff(h1) <= 1e-8).all() and (np.diff(lip) <= 1e-8).all()
        assert min(s.values.min() for s in tr.states) >= u.values.min() - 1e-10


def test_directed_nonexpansive_on_pairs():
    rng = np.random.default_rng(4)
    for _ in range(20):
        u, v = rng.normal(size=(2, 24))
        tu = heat.evolve(GridFunction1D(u), 0.1, "explicit")
        tv = heat.evolve(GridFunction1D(v), 0.1, "explicit")
        base = (np.maximum(u - v, 0) ** 2).sum()
        for su, sv in zip(tu.states, tv.states):
            assert (np.maximum(su.values - sv.values, 0) ** 2).sum() <= base + 1e-8


def test_trace_csv_columns():
    tr = heat.evolve(GridFunction1D([1.0, 0.0, 0.5]), 0.01)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,energy,mass,min,max" and len(lines) == len(tr.times) + 1


@pytest.mark.parametrize("n", [2, 3, 8, 64, 128])
def test_spectral_rate_matches_eigenvalues(n):
    assert heat.spectral_rate(n) == pytest.approx(dirichlet_laplacian_rate(n), rel=1e-12)


def test_decay_rate_on_decreasing_state():
    n = 32
    x = (np.arange(n) + 0.5) / n
    tr = heat.evolve(GridFunction1D(np.cos(np.pi * x) + 0.3 * np.cos(3 * np.pi * x)), 1.0)
    assert heat.energy_decay_rate(tr) == pytest.approx(heat.spectral_rate(n), rel=0.05)


def test_decay_rate_needs_samples():
    tr = heat.evolve(GridFunction1D([0.0, 1.0]), 0.01)
    with pytest.raises(ValueError):
        heat.energy_decay_rate(tr)


def test_equilibrium_of_monotone_input_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = GridFunction1D(np.sort(rng.normal(size=20)))
        res = heat.monotone_equilibrium(u)
        assert res.iterations == 0 and np.array_equal(res.equilibrium.values, u.values)


@pytest.mark.parametrize("seed", range(8))
def test_equilibrium_properties(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=16)
    res = heat.monotone_equilibrium(GridFunction1D(u))
    p = res.equilibrium.values
    assert is_monotone(p)
    assert p.mean() == pytest.approx(u.mean(), abs=1e-9)
    alpha, beta = rng.uniform(0.1, 5), rng.normal()
    q = heat.monotone_equilibrium(GridFunction1D(alpha * u + beta)).equilibrium.values
    assert np.abs(q - (alpha * p + beta)).max() <= 1e-7
    v = u + rng.exponential(size=16)
    pv = heat.monotone_equilibrium(GridFunction1D(v)).equilibrium.values
    assert (p <= pv + 1e-7).all()
    w = rng.normal(size=16)
    pw = heat.monotone_equilibrium(GridFunction1D(w)).equilibrium.values
    assert np.linalg.norm(p - pw) <= np.linalg.norm(u - w) + 1e-7
    assert np.abs(p - pw).max() <= np.abs(u - w).max() + 1e-7
    assert h1_seminorm(p) <= h1_seminorm(u) + 1e-8
    assert lipschitz_seminorm(p) <= lipschitz_seminorm(u) + 1e-8


def test_equilibrium_of_two_cells_is_mean():
    res = heat.monotone_equilibrium(GridFunction1D([1.0, 0.0]))
    assert np.allclose(res.equilibrium.values, 0.5, atol=1e-9)


def test_equilibrium_bad_tolerances_and_cap():
    with pytest.raises(ValueError):
        heat.monotone_equilibrium(GridFunction1D([1.0, 0.0]), tol_energy=0)
    with pytest.raises(heat.ConvergenceError):
        heat.monotone_equilibrium(GridFunction1D(np.linspace(1, 0, 30)), max_steps=2)
