"""Cell-centered grid functions on [0, 1]^d and directed difference operators.

A grid function with ``n`` cells per axis stores one value per cell, cell
width ``h = 1/n``.  Every integral in the package is the cell sum times
``h**d``, so identities across modules close exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

GRID_FORMAT_VERSION = "gfv1"


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GridFunction1D:
    """Values on ``n`` equal cells of the unit interval."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(np.asarray(self.values, dtype=float).reshape(-1))
        if v.size < 2:
            raise ValueError(f"need at least 2 cells, got {v.size}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def mass(self) -> float:
        return float(self.values.sum() * self.h)

    def to_nd(self) -> GridFunctionND:
        return GridFunctionND(self.values)


@dataclass(frozen=True, eq=False)
class GridFunctionND:
    """Values on the ``n**d`` equal cells of the unit cube.

    ``values`` has shape ``(n,) * d``; axis ``i`` of the array is coordinate
    ``x_{i+1}``.  Row-major flattening is the serialization order.
    """

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim < 1:
            raise ValueError("need at least one axis")
        if len(set(v.shape)) != 1:
            raise ValueError(f"grid must be cubic, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ValueError("need at least 2 cells per axis")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def to_1d(self) -> GridFunction1D:
        if self.d != 1:
            raise ValueError(f"expected d=1, got d={self.d}")
        return GridFunction1D(self.values)

    @classmethod
    def from_flat(cls, d: int, n: int, values) -> GridFunctionND:
        arr = np.asarray(values, dtype=float)
        if arr.size != n**d:
            raise ValueError(f"expected {n**d} values, got {arr.size}")
        return cls(arr.reshape((n,) * d))


def as_nd(f: GridFunction1D | GridFunctionND) -> GridFunctionND:
    return f.to_nd() if isinstance(f, GridFunction1D) else f


def cell_centers(d: int, n: int) -> np.ndarray:
    """Cell-center coordinates, shape ``(n**d, d)`` in row-major cell order."""
    axis = (np.arange(n) + 0.5) / n
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def to_json(f: GridFunction1D | GridFunctionND) -> str:
    g = as_nd(f)
    return json.dumps(
        {"version": GRID_FORMAT_VERSION, "d": g.d, "n": g.n,
         "values": g.values.reshape(-1).tolist()})


def from_json(text: str | dict[str, Any]) -> GridFunctionND:
    data = json.loads(text) if isinstance(text, str) else text
    if data.get("version") != GRID_FORMAT_VERSION:
        raise ValueError(f"unsupported grid format: {data.get('version')!r}")
    return GridFunctionND.from_flat(int(data["d"]), int(data["n"]), data["values"])


# ---------------------------------------------------------------------------
# Difference operators


def directed_gradient_nd(f: GridFunctionND) -> list[GridFunctionND]:
    """Clamped forward differences ``min(0, (f[c+e_i] - f[c]) / h)`` per axis.

    The last slice along each axis has no forward neighbour and is zero.
    """
    f = as_nd(f)
    out = []
    for axis in range(f.d):
        grad = np.zeros_like(f.values)
        diff = np.diff(f.values, axis=axis) / f.h
        index = [slice(None)] * f.d
        index[axis] = slice(0, f.n - 1)
        grad[tuple(index)] = np.minimum(diff, 0.0)
        out.append(GridFunctionND(grad))
    return out


def grad_minus_sq_integral(f: GridFunctionND) -> float:
    """``∫ |∇⁻f|²`` as a cell sum."""
    f = as_nd(f)
    return float(sum((g.values**2).sum() for g in directed_gradient_nd(f)) * f.cell_volume)


def per_axis_energy(f: GridFunctionND, axis: int) -> float:
    """Directed energy of every axis line, integrated over the other axes."""
    f = as_nd(f)
    diff = np.minimum(np.diff(f.values, axis=axis) / f.h, 0.0)
    return float(0.5 * (diff**2).sum() * f.cell_volume)


def _line_values(u) -> tuple[np.ndarray, float]:
    if isinstance(u, (GridFunction1D, GridFunctionND)):
        if u.values.ndim != 1:
            raise ValueError("expected a one-dimensional grid function")
        return u.values, 1.0 / u.values.size
    v = np.asarray(u, dtype=float)
    return v, 1.0 / v.shape[-1]


def directed_dirichlet_energy(u) -> float | np.ndarray:
    """``½ Σ min(0, Δu/h)² h`` over the ``n - 1`` interior stencils.

    Accepts a 1-D grid function or a raw array; for a stacked array of shape
    ``(m, n)`` the energy of every row is returned.
    """
    v, h = _line_values(u)
    slopes = np.minimum(np.diff(v, axis=-1), 0.0) / h
    energy = 0.5 * (slopes**2).sum(axis=-1) * h
    return float(energy) if np.ndim(energy) == 0 else energy


def h1_seminorm(u) -> float:
    v, h = _line_values(u)
    return float(((np.diff(v) / h) ** 2).sum() * h)


def lipschitz_seminorm(u) -> float:
    v, h = _line_values(u)
    return float(np.abs(np.diff(v) / h).max())


@dataclass(frozen=True)
class Decomposition1D:
    up: GridFunction1D
    down: GridFunction1D


def canonical_decomposition(u: GridFunction1D) -> Decomposition1D:
    """Split ``u`` into a nondecreasing part and a mean-zero nonincreasing part.

    The nonincreasing part collects exactly the negative increments of ``u``,
    which makes it the split of least directed energy.
    """
    v = u.values
    down = np.concatenate([[0.0], np.cumsum(np.minimum(np.diff(v), 0.0))])
    down = down - down.mean()
    return Decomposition1D(up=GridFunction1D(v - down), down=GridFunction1D(down))


def is_monotone(values: np.ndarray, tol: float = 0.0) -> bool:
    """True when ``values`` is nondecreasing along every array axis."""
    values = np.asarray(values)
    return all(
        (np.diff(values, axis=axis) >= -tol).all() for axis in range(values.ndim))


def max_violation(values: np.ndarray) -> float:
    """Largest decrease between neighbouring cells along any axis (0 if monotone)."""
    values = np.asarray(values)
    worst = 0.0
    for axis in range(values.ndim):
        worst = max(worst, float(np.max(-np.diff(values, axis=axis), initial=0.0)))
    return worst


def snap_monotone(x: np.ndarray) -> np.ndarray:
    """Remove tiny residual violations, axis by axis.

    Averages the running max from below with the running min from above.
    Both are monotone along the swept axis and keep monotonicity along the
    other axes, so the result is exactly monotone.
    """
    out = x
    for axis in range(x.ndim):
        up = np.maximum.accumulate(out, axis=axis)
        down = np.flip(np.minimum.accumulate(np.flip(out, axis=axis), axis=axis), axis=axis)
        out = 0.5 * (up + down)
    return out
