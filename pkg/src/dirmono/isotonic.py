"""Distance to monotonicity on grids via isotonic regression.

The grid order is the product order: ``g`` is monotone when it is
nondecreasing along every axis.  The monotone cone is the intersection of
the per-axis cones, and projecting onto one per-axis cone is a batch of
independent 1-D PAVA problems.  Dykstra's method over the axes therefore
gives the full projection; its correction terms double as Lagrange
multipliers, which lets every answer carry a KKT certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from dirmono._kernels import pava_median_row, pava_rows
from dirmono.grid import GridFunctionND, as_nd, is_monotone, snap_monotone

DEFAULT_CELL_CAP = 65536
L1_LP_CELL_CAP = 1024


class IsotonicError(RuntimeError):
    pass


@dataclass(frozen=True)
class IsotonicResult:
    projection: GridFunctionND
    distance: float
    iterations: int
    kkt_residual: float


def pava_1d(values, weights=None) -> np.ndarray:
    """Weighted L² projection of a sequence onto nondecreasing sequences."""
    y = np.asarray(values, dtype=float).reshape(1, -1)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).reshape(1, -1)
    if w.shape != y.shape:
        raise ValueError("values and weights differ in length")
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    return pava_rows(y, w)[0]


def _project_axis(x: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(x, axis, -1)
    rows = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    out = pava_rows(rows, np.ones_like(rows)).reshape(moved.shape)
    return np.moveaxis(out, -1, axis)


def _kkt_residual(x: np.ndarray, corrections: list[np.ndarray]) -> float:
    """Largest KKT violation of ``x`` given the per-axis Dykstra corrections.

    Stationarity ``f - x = Σ_k p_k`` holds by construction.  The multiplier
    on the edge ``(c, c+e_k)`` is the prefix sum of ``p_k`` along axis k;
    it must be nonnegative, vanish at the line end, and be complementary to
    the slack ``x[c+e_k] - x[c]``.
    """
    worst = 0.0
    for axis, p in enumerate(corrections):
        mult = np.cumsum(p, axis=axis)
        last = np.take(mult, [-1], axis=axis)
        inner = np.take(mult, np.arange(x.shape[axis] - 1), axis=axis)
        slack = np.diff(x, axis=axis)
        worst = max(
            worst,
            float(np.max(-slack, initial=0.0)),
            float(np.max(-inner, initial=0.0)),
            float(np.abs(last).max()),
            float(np.abs(inner * slack).max(initial=0.0)),
        )
    return worst


def isotonic_nd(f: GridFunctionND, tol: float = 1e-9, max_sweeps: int = 200_000,
                cell_cap: int = DEFAULT_CELL_CAP) -> IsotonicResult:
    """L² projection of ``f`` onto the monotone cone of its grid."""
    f = as_nd(f)
    if f.values.size > cell_cap:
        raise ValueError(f"{f.values.size} cells exceeds the cap of {cell_cap}")
    vals = np.array(f.values)
    if is_monotone(vals):
        return IsotonicResult(f, 0.0, 0, 0.0)
    if f.d == 1:
        proj = pava_1d(vals)
        return _result(f, proj, 1, 0.0)
    x = vals.copy()
    corrections = [np.zeros_like(x) for _ in range(f.d)]
    residual = np.inf
    sweep = 0
    while sweep < max_sweeps:
        for axis in range(f.d):
            y = _project_axis(x + corrections[axis], axis)
            corrections[axis] += x - y
            x = y
        sweep += 1
        if sweep % 5 == 0 or sweep == 1:
            residual = _kkt_residual(x, corrections)
            if residual <= tol:
                break
    else:
        raise IsotonicError(f"no KKT certificate after {max_sweeps} sweeps (residual {residual:.3e})")
    return _result(f, snap_monotone(x), sweep, residual)


def _result(f: GridFunctionND, proj: np.ndarray, iterations: int, residual: float) -> IsotonicResult:
    dist = float(np.sqrt(((f.values - proj) ** 2).sum() * f.cell_volume))
    return IsotonicResult(GridFunctionND(proj), dist, iterations, residual)


def _l1_lp(f: GridFunctionND) -> float:
    """Exact L¹ distance via the LP  min Σ t  s.t.  |f - g| <= t,  Dg >= 0."""
    vals = f.values.reshape(-1)
    N = vals.size
    idx = np.arange(N).reshape(f.values.shape)
    tails, heads = [], []
    for axis in range(f.d):
        tails.append(np.take(idx, np.arange(f.n - 1), axis=axis).reshape(-1))
        heads.append(np.take(idx, np.arange(1, f.n), axis=axis).reshape(-1))
    tails, heads = np.concatenate(tails), np.concatenate(heads)
    E = tails.size
    # Variables: g (N), t (N).
    eye = np.arange(N)
    rows = np.concatenate([eye, eye, N + eye, N + eye,
                           2 * N + np.arange(E), 2 * N + np.arange(E)])
    cols = np.concatenate([eye, N + eye, eye, N + eye, tails, heads])
    data = np.concatenate([np.ones(N), -np.ones(N), -np.ones(N), -np.ones(N),
                           np.ones(E), -np.ones(E)])
    A = coo_matrix((data, (rows, cols)), shape=(2 * N + E, 2 * N)).tocsr()
    b = np.concatenate([vals, -vals, np.zeros(E)])
    c = np.concatenate([np.zeros(N), np.ones(N)])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * N + [(0, None)] * N,
                  method="highs")
    if res.status != 0:
        raise IsotonicError(f"L1 LP failed: {res.message}")
    return float(res.fun * f.cell_volume)


def dist_mono(f: GridFunctionND, p: int = 2) -> float:
    """``inf ‖f - g‖_p`` over monotone grid functions ``g``."""
    f = as_nd(f)
    if p == 2:
        return isotonic_nd(f).distance
    if p != 1:
        raise ValueError(f"unsupported p={p}; use 1 or 2")
    if f.d == 1:
        vals = np.array(f.values)
        g = pava_median_row(vals, np.ones_like(vals))
        return float(np.abs(vals - g).sum() * f.h)
    if f.values.size > L1_LP_CELL_CAP:
        raise ValueError(f"L1 distance in d>1 is limited to {L1_LP_CELL_CAP} cells")
    return _l1_lp(f)
