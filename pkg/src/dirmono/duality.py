"""Directed Hopf-Lax operator and duality checks for directed transport.

``H_t h(x) = max over cells y ⪰ x of h(y) - |x - y|² / (2t)``, computed by
brute force over the up-set of each cell (the cell itself included).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dirmono.grid import GridFunctionND, as_nd, grad_minus_sq_integral
from dirmono.isotonic import isotonic_nd
from dirmono.tensorize import coordinatewise_equilibrium
from dirmono.transport import DiscreteMeasure, directed_w2_lp, measure_from_grid

_CHUNK = 1 << 22  # pair evaluations per block


@dataclass(frozen=True)
class HopfLaxResult:
    transformed: GridFunctionND
    t: float
    argmax_index: np.ndarray


def _indices(d: int, n: int) -> np.ndarray:
    return np.stack(np.unravel_index(np.arange(n**d), (n,) * d), axis=1)


def _sup_convolution(h: GridFunctionND, t: float, radius_sq: float | None = None):
    """Row-blocked maximization over ``y ⪰ x``; optionally only ``|y-x|² < radius_sq``."""
    vals = h.values.reshape(-1)
    N = vals.size
    idx = _indices(h.d, h.n)
    best = np.empty(N)
    arg = np.empty(N, dtype=np.int64)
    rows = max(1, _CHUNK // N)
    for lo in range(0, N, rows):
        hi = min(N, lo + rows)
        step = idx[None, :, :] - idx[lo:hi, None, :]
        above = (step >= 0).all(axis=2)
        dist_sq = (step**2).sum(axis=2) * h.h**2
        if radius_sq is not None:
            above &= (dist_sq < radius_sq) | (step == 0).all(axis=2)
        score = np.where(above, vals[None, :] - dist_sq / (2 * t), -np.inf)
        arg[lo:hi] = score.argmax(axis=1)
        best[lo:hi] = score[np.arange(hi - lo), arg[lo:hi]]
    return best.reshape(h.values.shape), arg.reshape(h.values.shape)


def hopf_lax(h: GridFunctionND, t: float) -> HopfLaxResult:
    h = as_nd(h)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return HopfLaxResult(h, 0.0, np.arange(h.values.size).reshape(h.values.shape))
    best, arg = _sup_convolution(h, t)
    return HopfLaxResult(GridFunctionND(best), float(t), arg)


def hj_quotient(h: GridFunctionND, t: float) -> GridFunctionND:
    """``(H_t h - h) / t``."""
    if t <= 0:
        raise ValueError("t must be positive")
    h = as_nd(h)
    return GridFunctionND((hopf_lax(h, t).transformed.values - h.values) / t)


def restricted_radius_check(h: GridFunctionND, t: float) -> bool:
    """Candidates farther than ``sqrt(2 t (max h - min h))`` never win."""
    h = as_nd(h)
    if t <= 0:
        raise ValueError("t must be positive")
    spread = float(h.values.max() - h.values.min())
    full, _ = _sup_convolution(h, t)
    near, _ = _sup_convolution(h, t, radius_sq=2 * spread * t)
    return bool(np.array_equal(full, near))


def directed_lipschitz_bound(h: GridFunctionND) -> float:
    """``max (h(y) - h(x))⁺ / |y - x|`` over distinct grid cells ``x ⪯ y``."""
    h = as_nd(h)
    vals = h.values.reshape(-1)
    idx = _indices(h.d, h.n)
    step = idx[None, :, :] - idx[:, None, :]
    above = (step >= 0).all(axis=2) & (step != 0).any(axis=2)
    dist = np.sqrt((step**2).sum(axis=2)) * h.h
    rise = np.maximum(vals[None, :] - vals[:, None], 0.0)
    return float(np.max(np.where(above, rise / np.where(above, dist, 1.0), 0.0)))


def directed_c_transform(phi: GridFunctionND) -> GridFunctionND:
    """``ψ(x) = max_{y ⪰ x} φ(y) - |x - y|²``, the tightest ψ with φ(y) - ψ(x) ≤ |x-y|²."""
    return hopf_lax(phi, 0.5).transformed


def grid_masses(mu: DiscreteMeasure, d: int, n: int) -> np.ndarray:
    """Masses of ``mu`` as a grid array; every atom must sit at a cell center."""
    if mu.d != d:
        raise ValueError("measure and grid dimensions differ")
    cell = np.rint(mu.points * n - 0.5).astype(int)
    if (np.abs((cell + 0.5) / n - mu.points) > 1e-12).any() or (cell < 0).any() or (cell >= n).any():
        raise ValueError("measure atoms must sit at cell centers")
    out = np.zeros((n,) * d)
    np.add.at(out, tuple(cell.T), mu.masses)
    return out


@dataclass(frozen=True)
class DualityGap:
    """``lhs = ½ W₂²(μ→ν)`` against ``rhs = ∫h dν - ∫H₁h dμ``.

    When no directed plan exists, ``lhs`` and ``slack`` are None and the
    inequality holds vacuously.
    """

    lhs: float | None
    rhs: float
    slack: float | None

    @property
    def feasible(self) -> bool:
        return self.lhs is not None


def duality_gap(h: GridFunctionND, mu: DiscreteMeasure, nu: DiscreteMeasure,
                w2sq: float | None = None) -> DualityGap:
    """Evaluate both sides of the Hopf-Lax duality inequality.

    ``w2sq`` may pass a precomputed squared directed distance.
    """
    h = as_nd(h)
    a, b = grid_masses(mu, h.d, h.n), grid_masses(nu, h.d, h.n)
    rhs = float((h.values * b).sum() - (hopf_lax(h, 1.0).transformed.values * a).sum())
    if w2sq is None:
        result = directed_w2_lp(mu, nu)
        if not result.feasible:
            return DualityGap(None, rhs, None)
        w2sq = result.value
    lhs = 0.5 * w2sq
    return DualityGap(lhs, rhs, lhs - rhs)


def perturbation_chain(h: GridFunctionND, t: float) -> dict:
    """Evaluate each step of the perturbative Poincaré argument for mean-zero ``h``.

    With ``μ = (1 + t h) dx`` and ``μ* = (1 + t h*) dx``, the test function
    ``-t h`` gives a lower bound on ``½ W₂²(μ→μ*)`` which, after the algebra
    below, bounds ``∫h² - ∫h h*`` by the transport ratio and the
    Hopf-Lax quotient.  Every entry ending in ``_slack`` must be ≥ 0 up to
    round-off; equalities report ``-|difference|``.
    """
    h = as_nd(h)
    vals = h.values
    if abs(vals.mean()) > 1e-12:
        raise ValueError("h must have mean zero")
    if t <= 0 or t * np.abs(vals).max() >= 1:
        raise ValueError("need t > 0 and t·|h| < 1")
    vol = h.cell_volume
    integral = lambda x: float(x.sum() * vol)  # noqa: E731

    f = GridFunctionND(1.0 + t * vals)
    f_star = coordinatewise_equilibrium(f).values
    h_star = coordinatewise_equilibrium(h).values
    mu, mu_star = measure_from_grid(f), measure_from_grid(GridFunctionND(f_star))
    transport = directed_w2_lp(mu, mu_star)
    if not transport.feasible:
        raise RuntimeError("no directed plan from mu to mu*")
    w2sq = transport.value
    test = GridFunctionND(-t * vals)
    gap = duality_gap(test, mu, mu_star, w2sq=w2sq)
    hl_scaled = hopf_lax(test, 1.0).transformed.values
    hl_t = hopf_lax(GridFunctionND(-vals), t).transformed.values
    quotient = (hl_t + vals) / t
    hh_star = integral(vals * h_star)
    energy = grad_minus_sq_integral(h)
    out = {
        "t": t,
        "w2sq": w2sq,
        "duality_slack": gap.slack,
        # (1 + t h)* = 1 + t h* by affine equivariance.
        "equivariance_slack": -float(np.abs(f_star - (1.0 + t * h_star)).max()),
        # ∫(-t h) dμ* = -t² ∫ h h* for mean-zero h.
        "test_integral_slack": -abs(integral(-t * vals * f_star) - (-t * t * hh_star)),
        "scaling_slack": -float(np.abs(hl_scaled - t * hl_t).max()),
        "quotient_nonneg_slack": float(quotient.min()),
        # -∫H₁(-th) dμ ≥ t²∫h² - 2t²∫Q uses Q ≥ 0 and 1 + t h ≤ 2.
        "hopf_lax_term_slack": -integral(hl_scaled * f.values) - (t * t * integral(vals**2)
                                                          - 2 * t * t * integral(quotient)),
        "combined_slack": 0.5 * w2sq - t * t * (integral(vals**2) - hh_star) + 2 * t * t * integral(quotient),
        "norm_slack": integral(vals**2) - integral(h_star**2),
        "gap_slack": (integral(vals**2) - hh_star) - 0.5 * integral((vals - h_star) ** 2),
        "projection_slack": integral((vals - h_star) ** 2) - isotonic_nd(h).distance ** 2,
        "transport_ratio": w2sq / (t * t * energy) if energy > 0 else 0.0,
        "quotient_integral": integral(quotient),
        "half_energy": 0.5 * energy,
    }
    ratio = out["transport_ratio"]
    out["final_slack"] = (0.5 * ratio * energy + 2 * integral(quotient)) - (integral(vals**2) - hh_star)
    return out
