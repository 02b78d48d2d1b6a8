import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dirmono.families import FAMILY_KINDS, SyntheticFamilySpec, generate
from dirmono.grid import (GridFunction1D, GridFunctionND, canonical_decomposition, cell_centers,
                          directed_dirichlet_energy, directed_gradient_nd, from_json,
                          grad_minus_sq_integral, h1_seminorm, is_monotone, lipschitz_seminorm,
                          max_violation, per_axis_energy, snap_monotone, to_json)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
lines = arrays(float, st.integers(2, 40), elements=finite)


def test_rejects_tiny_and_ragged_grids():
    with pytest.raises(ValueError):
        GridFunction1D([1.0])
    with pytest.raises(ValueError):
        GridFunctionND(np.zeros((3, 4)))


def test_cell_width_is_reciprocal():
    u = GridFunction1D(np.zeros(7))
    assert u.h == 1 / 7 and u.n == 7


def test_values_are_read_only():
    g = GridFunctionND(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_json_roundtrip_row_major():
    g = GridFunctionND(np.arange(8.0).reshape(2, 2, 2))
    data = json.loads(to_json(g))
    assert data["version"] == "gfv1" and data["values"] == list(range(8))
    assert np.array_equal(from_json(to_json(g)).values, g.values)
    with pytest.raises(ValueError):
        from_json({"version": "other", "d": 1, "n": 2, "values": [0, 0]})


def test_cell_centers_row_major():
    c = cell_centers(2, 2)
    assert np.allclose(c, [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])


def test_gradient_two_cells():
    (g,) = directed_gradient_nd(GridFunctionND(np.array([1.0, 0.0])))
    assert np.array_equal(g.values, [-2.0, 0.0])


def test_gradient_of_tilted_plane():
    x = (np.arange(4) + 0.5) / 4
    f = GridFunctionND(x[:, None] - x[None, :])
    g1, g2 = directed_gradient_nd(f)
    assert np.all(g1.values == 0)
    assert np.allclose(g2.values[:, :3], -1.0) and np.all(g2.values[:, 3] == 0)


@given(arrays(float, (4, 4), elements=finite))
def test_gradient_nonpositive_and_zero_on_monotone(v):
    for g in directed_gradient_nd(GridFunctionND(v)):
        assert (g.values <= 0).all()
    mono = np.cumsum(np.cumsum(np.abs(v), axis=0), axis=1)
    assert all(np.all(g.values == 0) for g in directed_gradient_nd(GridFunctionND(mono)))


def test_decomposition_hand_example():
    dec = canonical_decomposition(GridFunction1D([0, 1, 0.5, 1.5]))
    assert np.allclose(np.diff(dec.down.values), [0, -0.5, 0])
    assert np.allclose(np.diff(dec.up.values), [1, 0, 1])
    assert abs(dec.down.values.mean()) < 1e-15


@given(lines)
def test_decomposition_invariants(v):
    dec = canonical_decomposition(GridFunction1D(v))
    assert np.allclose(dec.up.values + dec.down.values, v, atol=1e-12)
    assert (np.diff(dec.up.values) >= -1e-12).all()
    assert (np.diff(dec.down.values) <= 1e-12).all()
    assert abs(dec.down.values.mean()) < 1e-10


@given(lines, finite)
def test_decomposition_shift(v, beta):
    a = canonical_decomposition(GridFunction1D(v))
    b = canonical_decomposition(GridFunction1D(v + beta))
    assert np.allclose(a.down.values, b.down.values, atol=1e-9)
    assert np.allclose(b.up.values - a.up.values, beta, atol=1e-9)


def test_decomposition_is_least_energy_split(rng):
    for _ in range(200):
        u = rng.normal(size=12)
        down = canonical_decomposition(GridFunction1D(u)).down
        best = directed_dirichlet_energy(down)
        for _ in range(50):
            # Another admissible split: push extra decrease into the down part.
            extra = -np.cumsum(rng.exponential(size=12) * (rng.random(12) < 0.3))
            r_down = down.values + extra
            r_up = u - r_down
            assert (np.diff(r_up) >= -1e-12).all() and (np.diff(r_down) <= 1e-12).all()
            assert best <= directed_dirichlet_energy(r_down) + 1e-10


@pytest.mark.parametrize("n", [2, 5, 16, 101])
def test_energy_of_decreasing_line(n):
    x = (np.arange(n) + 0.5) / n
    assert directed_dirichlet_energy(GridFunction1D(1 - x)) == pytest.approx(0.5 * (n - 1) / n, abs=1e-13)


@given(lines, st.floats(0.01, 10), finite)
def test_energy_scaling_and_shift(v, alpha, beta):
    e = directed_dirichlet_energy(v)
    assert directed_dirichlet_energy(alpha * v) == pytest.approx(alpha**2 * e, rel=1e-9, abs=1e-12)
    assert directed_dirichlet_energy(v + beta) == pytest.approx(e, rel=1e-9, abs=1e-9)


def test_energy_row_batch_matches_single(rng):
    U = rng.normal(size=(5, 9))
    batch = directed_dirichlet_energy(U)
    assert np.allclose(batch, [directed_dirichlet_energy(GridFunction1D(r)) for r in U])


def test_seminorms():
    assert h1_seminorm(np.ones(5)) == 0 and lipschitz_seminorm(np.ones(5)) == 0
    x = (np.arange(64) + 0.5) / 64
    assert h1_seminorm(x) == pytest.approx(63 / 64)
    assert lipschitz_seminorm(x) == pytest.approx(1.0)
    assert lipschitz_seminorm(GridFunction1D([0, 1, 0])) == pytest.approx(3.0)


def test_grad_integral_and_axis_energy_agree():
    rng = np.random.default_rng(2)
    f = GridFunctionND(rng.normal(size=(5, 5, 5)))
    total = sum(per_axis_energy(f, i) for i in range(3))
    assert grad_minus_sq_integral(f) == pytest.approx(2 * total, rel=1e-12)


@given(arrays(float, (3, 5), elements=finite))
def test_snap_monotone_exact(v):
    out = snap_monotone(v)
    assert is_monotone(out) and max_violation(out) == 0
    if is_monotone(v):
        assert np.allclose(out, v)


@pytest.mark.parametrize("kind", FAMILY_KINDS)
@pytest.mark.parametrize("d", [1, 2, 3])
def test_families_lipschitz_and_deterministic(kind, d):
    spec = SyntheticFamilySpec(kind, M=1.5, seed=4, params={"eps": 0.5} if kind == "linear-lowerbound" else {})
    g1, o1 = generate(spec, d, 6)
    g2, _ = generate(spec, d, 6)
    assert np.array_equal(g1.values, g2.values)
    rng = np.random.default_rng(0)
    x = rng.random((2000, d))
    assert (np.linalg.norm(o1.grad(x), axis=1) <= o1.M * (1 + 1e-9)).all()
    y = np.clip(x + rng.normal(scale=1e-3, size=x.shape), 0, 1)
    ratio = np.abs(o1.value(y) - o1.value(x)) / np.maximum(np.linalg.norm(y - x, axis=1), 1e-15)
    assert ratio.max() <= o1.M * (1 + 1e-6)


def test_monotone_family_samples_are_monotone():
    g, _ = generate(SyntheticFamilySpec("monotone-random", seed=3), 3, 6)
    assert is_monotone(g.values)


def test_unknown_family():
    with pytest.raises(ValueError):
        generate(SyntheticFamilySpec("nope"), 2)


def test_oracle_counters_and_fd_fallback():
    _, o = generate(SyntheticFamilySpec("random-trig", seed=1), 2, 4)
    o.value(np.zeros(2))
    o.grad(np.zeros((3, 2)))
    assert (o.value_queries, o.grad_queries) == (1, 3)
    from dirmono.families import OracleFunction
    fd = OracleFunction(2, o._value, None, o.M, allow_finite_differences=True)
    x = np.random.default_rng(0).random((10, 2))
    assert np.allclose(fd.grad(x), o._grad(x), atol=1e-6)
    with pytest.raises(RuntimeError):
        OracleFunction(2, o._value, None, o.M).grad(x)
