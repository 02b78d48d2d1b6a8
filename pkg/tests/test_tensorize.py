import numpy as np
import pytest

from dirmono import heat
from dirmono.grid import GridFunction1D, GridFunctionND, is_monotone, per_axis_energy
from dirmono.tensorize import apply_Mk, coordinatewise_equilibrium, transport_energy_check
from dirmono.transport import DiscreteMeasure, dominates


def random_grid(rng, d=2, n=6, lo=0.9, hi=1.1):
    return GridFunctionND(rng.uniform(lo, hi, size=(n,) * d))


def test_axis_range_checked():
    with pytest.raises(ValueError):
        apply_Mk(GridFunctionND(np.zeros((3, 3))), 2)


def test_monotone_axis_is_fixed(rng):
    v = np.cumsum(rng.random((5, 5)), axis=1)
    g = GridFunctionND(v)
    assert np.array_equal(apply_Mk(g, 1).values, v)


def test_decreasing_profile_in_first_axis():
    x = (np.arange(6) + 0.5) / 6
    prof = np.cos(np.pi * x)  # decreasing, mean zero
    f = GridFunctionND(np.repeat(prof[:, None], 6, axis=1))
    m1 = apply_Mk(f, 0)
    line = heat.monotone_equilibrium(GridFunction1D(prof)).equilibrium.values
    assert np.allclose(m1.values, line[:, None], atol=1e-10)
    assert np.allclose(m1.values, prof.mean(), atol=1e-9)
    assert np.allclose(apply_Mk(m1, 1).values, m1.values)


@pytest.mark.parametrize("seed", range(5))
def test_sweep_properties(seed):
    rng = np.random.default_rng(seed)
    a = 0.1
    f = random_grid(rng, 3, 5, 1 - a, 1 + a)
    g = f
    for k in range(3):
        prev = g
        g = apply_Mk(prev, k)
        assert g.values.min() >= 1 - a - 1e-9 and g.values.max() <= 1 + a + 1e-9
        assert g.values.sum() == pytest.approx(prev.values.sum(), abs=1e-9)
        lines = np.moveaxis(g.values, k, -1).reshape(-1, 5)
        assert (np.diff(lines, axis=1) >= -1e-9).all()
        for i in range(3):
            if i != k:
                assert per_axis_energy(g, i) <= per_axis_energy(prev, i) + 1e-8
        # Every axis-k line of (prev, M_k prev) is a dominated pair once normalized.
        pts = (np.arange(5) + 0.5)[:, None] / 5
        for src, dst in zip(np.moveaxis(prev.values, k, -1).reshape(-1, 5), lines):
            assert dominates(DiscreteMeasure(pts, src / src.sum()), DiscreteMeasure(pts, dst / dst.sum()))
        # Earlier axes stay monotone (up to solver noise before the final snap).
        for j in range(k):
            assert (np.diff(g.values, axis=j) >= -1e-8).all()
    fs = coordinatewise_equilibrium(f)
    assert is_monotone(fs.values)
    assert fs.values.sum() == pytest.approx(f.values.sum(), abs=1e-9)


def test_nonexpansive_pairs(rng):
    for _ in range(10):
        f, g = random_grid(rng), random_grid(rng)
        for k in (0, 1):
            assert np.linalg.norm(apply_Mk(f, k).values - apply_Mk(g, k).values) <= \
                np.linalg.norm(f.values - g.values) + 1e-8
        fs, gs = coordinatewise_equilibrium(f), coordinatewise_equilibrium(g)
        assert np.linalg.norm(fs.values - gs.values) <= np.linalg.norm(f.values - g.values) + 1e-8


def test_affine_equivariance_and_norm(rng):
    f = GridFunctionND(rng.normal(size=(6, 6)))
    fs = coordinatewise_equilibrium(f).values
    alpha, beta = 2.5, -0.7
    assert np.abs(coordinatewise_equilibrium(GridFunctionND(alpha * f.values + beta)).values
                  - (alpha * fs + beta)).max() <= 1e-7
    assert np.linalg.norm(fs) <= np.linalg.norm(f.values) + 1e-9


def test_monotone_input_unchanged(rng):
    v = np.cumsum(np.cumsum(rng.random((4, 4, 4)), axis=0), axis=2)
    v = np.cumsum(v, axis=1)
    assert np.array_equal(coordinatewise_equilibrium(GridFunctionND(v)).values, v)


def test_custom_order_is_monotone(rng):
    f = GridFunctionND(rng.normal(size=(5, 5)))
    assert is_monotone(coordinatewise_equilibrium(f, order=[1, 0]).values)


def test_transport_energy_check_preconditions():
    with pytest.raises(ValueError):
        transport_energy_check(GridFunctionND(np.ones((2, 2))), 1.5)
    with pytest.raises(ValueError):
        transport_energy_check(GridFunctionND(np.array([[1.5, 1.0], [1.0, 1.0]])), 0.1)
    with pytest.raises(ValueError):
        transport_energy_check(GridFunctionND(np.full((2, 2), 1.05)), 0.1)
    with pytest.raises(ValueError):
        transport_energy_check(GridFunctionND(np.ones((32, 32))), 0.1)


def test_transport_energy_check_monotone_is_zero():
    x = (np.arange(4) + 0.5) / 4
    v = 1 + 0.1 * (x[:, None] + x[None, :] - 1)
    rep = transport_energy_check(GridFunctionND(v), 0.1)
    assert rep.w2sq_directed == pytest.approx(0.0, abs=1e-12) and rep.ratio == 0.0


def test_transport_energy_check_report(rng):
    c = rng.uniform(-1, 1, size=(6, 6))
    c -= c.mean()
    f = GridFunctionND(1 + 0.1 * c / np.abs(c).max())
    rep = transport_energy_check(f, 0.1)
    assert is_monotone(rep.f_star.values)
    assert rep.w2sq_directed > 0 and np.isfinite(rep.ratio)
    assert rep.ratio == pytest.approx(rep.w2sq_directed / rep.grad_minus_sq_integral)
    assert len(rep.per_axis_energy_before) == 2 and all(e == 0 for e in rep.per_axis_energy_after)
