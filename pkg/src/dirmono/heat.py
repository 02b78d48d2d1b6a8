"""Directed heat equation on the unit interval and its monotone equilibrium.

The flow ``u_t = (min(0, u_x))_x`` with zero-flux ends is the gradient flow
of the directed energy ``½ ∫ min(0, u_x)²``.  Two discretizations are
provided: an explicit flux scheme and the implicit (proximal) scheme.  Both
work on stacks of independent lines, shape ``(m, n)``, so that many
trajectories and the line sweeps of the tensorized operator run as one
vectorized computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from dirmono._kernels import pava_rows
from dirmono.grid import GridFunction1D, directed_dirichlet_energy

DEFAULT_LAMBDA = 1e-2
DEFAULT_TOL_ENERGY = 1e-12
DEFAULT_TOL_CHANGE = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class EvolutionTrace:
    times: np.ndarray
    states: list[GridFunction1D]
    energies: np.ndarray
    mass: np.ndarray

    def to_csv(self) -> str:
        lines = ["t,energy,mass,min,max"]
        for t, s, e, m in zip(self.times, self.states, self.energies, self.mass):
            lines.append(f"{t!r},{e!r},{m!r},{s.values.min()!r},{s.values.max()!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EquilibriumResult:
    equilibrium: GridFunction1D
    iterations: int
    residual_energy: float
    snapped: bool


# ---------------------------------------------------------------------------
# Row kernels


def _fluxes(U: np.ndarray, h: float) -> np.ndarray:
    """Interface fluxes including the two zero boundary fluxes, shape (m, n+1)."""
    F = np.zeros((U.shape[0], U.shape[1] + 1))
    F[:, 1:-1] = np.minimum(np.diff(U, axis=1), 0.0) / h
    return F


def explicit_rows(U: np.ndarray, dt: float) -> np.ndarray:
    h = 1.0 / U.shape[1]
    F = _fluxes(U, h)
    return U + (dt / h) * np.diff(F, axis=1)


def _prox_objective(V, U, r):
    m = np.minimum(np.diff(V, axis=1), 0.0)
    return 0.5 * ((V - U) ** 2).sum(axis=1) + 0.5 * r * (m**2).sum(axis=1)


def implicit_rows(U: np.ndarray, lam: float, tol: float = 1e-10,
                  max_iter: int = 100) -> np.ndarray:
    """Backward-Euler step for every row of ``U``.

    Minimizes ``½ Σ (v-u)² + (λ/2h²) Σ min(0, Δv)²`` row by row (the cell-sum
    form of ``½‖v-u‖² + λE⁻(v)`` divided by h) with a damped semismooth
    Newton method.  The generalized Hessian is tridiagonal, and rows do not
    couple, so all rows are solved as one banded system.
    """
    m, n = U.shape
    r = lam * n * n
    V = U.copy()
    size = m * n
    for _ in range(max_iter):
        dv = np.diff(V, axis=1)
        mneg = np.minimum(dv, 0.0)
        grad = V - U
        grad[:, 1:] += r * mneg
        grad[:, :-1] -= r * mneg
        res = np.abs(grad).max(axis=1)
        todo = res > tol
        if not todo.any():
            return V
        active = (dv < 0).astype(float)
        diag = np.ones((m, n))
        diag[:, 1:] += r * active
        diag[:, :-1] += r * active
        off = np.zeros((m, n))
        off[:, :-1] = -r * active
        ab = np.zeros((3, size))
        ab[0, 1:] = off.reshape(-1)[:-1]
        ab[1] = diag.reshape(-1)
        ab[2, :-1] = off.reshape(-1)[:-1]
        step = solve_banded((1, 1), ab, -grad.reshape(-1), check_finite=False)
        step = step.reshape(m, n)
        step[~todo] = 0.0
        # Armijo backtracking, one step length per row.
        base = _prox_objective(V, U, r)
        slope = (grad * step).sum(axis=1)
        scale = np.ones(m)
        pending = todo.copy()
        for _ in range(60):
            trial = V[pending] + scale[pending, None] * step[pending]
            ok = _prox_objective(trial, U[pending], r) <= (
                base[pending] + 1e-4 * scale[pending] * slope[pending] + 1e-15 * np.abs(base[pending]))
            idx = np.flatnonzero(pending)
            pending[idx[ok]] = False
            if not pending.any():
                break
            scale[pending] *= 0.5
        V = V + scale[:, None] * step
    raise ConvergenceError("implicit step did not converge", float(res.max()))


def _check_cfl(dt: float, n: int):
    limit = 0.5 / (n * n)
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates the stability bound dt <= h^2/2 = {limit}")


# ---------------------------------------------------------------------------
# Public single-line API


def step_explicit(u: GridFunction1D, dt: float) -> GridFunction1D:
    _check_cfl(dt, u.n)
    return GridFunction1D(explicit_rows(u.values[None, :], dt)[0])


def step_implicit(u: GridFunction1D, lam: float, tol: float = 1e-10,
                  max_iter: int = 100) -> GridFunction1D:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return GridFunction1D(implicit_rows(u.values[None, :], lam, tol, max_iter)[0])


def evolve_rows(U: np.ndarray, T: float, scheme: str, step: float,
                record_every: int | None = None):
    """Integrate all rows of ``U`` to time ``T``.

    Returns ``(times, states)`` with ``states`` of shape ``(records, m, n)``.
    The requested step is shortened so that an integer number of steps
    lands on ``T``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    n = U.shape[1]
    n_steps = max(1, math.ceil(T / step - 1e-9))
    dt = T / n_steps
    if scheme == "explicit":
        _check_cfl(dt, n)
        advance = lambda V: explicit_rows(V, dt)  # noqa: E731
    elif scheme == "implicit":
        advance = lambda V: implicit_rows(V, dt)  # noqa: E731
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    every = record_every or max(1, n_steps // 256)
    times, states = [0.0], [U.copy()]
    V = U.copy()
    for k in range(1, n_steps + 1):
        V = advance(V)
        if k % every == 0 or k == n_steps:
            times.append(k * dt)
            states.append(V.copy())
    return np.array(times), np.stack(states)


def _trace(times, states_row) -> EvolutionTrace:
    n = states_row.shape[1]
    return EvolutionTrace(
        times=times,
        states=[GridFunction1D(s) for s in states_row],
        energies=np.asarray(directed_dirichlet_energy(states_row)),
        mass=states_row.sum(axis=1) / n,
    )


def evolve(u: GridFunction1D, T: float, scheme: str = "explicit",
           step: float | None = None, record_every: int | None = None) -> EvolutionTrace:
    """Evolve one line; ``step`` is dt (explicit) or λ (implicit)."""
    return evolve_many([u], T, scheme, step, record_every)[0]


def evolve_many(us, T: float, scheme: str = "explicit", step: float | None = None,
                record_every: int | None = None) -> list[EvolutionTrace]:
    """Evolve several lines of equal length together."""
    U = np.stack([u.values for u in us])
    if step is None:
        step = 0.5 / U.shape[1] ** 2 if scheme == "explicit" else 1e-3
    times, states = evolve_rows(U, T, scheme, step, record_every)
    return [_trace(times, states[:, i, :]) for i in range(U.shape[0])]


def energy_decay_rate(trace: EvolutionTrace, floor: float = 1e-12) -> float:
    """Least-squares exponential decay rate of the energy series."""
    keep = trace.energies > floor
    if keep.sum() < 10:
        raise ValueError(f"need at least 10 samples above {floor}, got {int(keep.sum())}")
    slope = np.polyfit(trace.times[keep], np.log(trace.energies[keep]), 1)[0]
    return float(-slope)


def spectral_rate(n: int) -> float:
    """Twice the smallest eigenvalue of the zero-boundary flux Laplacian."""
    return 2.0 * 4.0 * n * n * math.sin(math.pi / (2 * n)) ** 2


# ---------------------------------------------------------------------------
# Monotone equilibrium


def equilibrium_rows(U: np.ndarray, lam: float = DEFAULT_LAMBDA,
                     tol_energy: float = DEFAULT_TOL_ENERGY,
                     tol_change: float = DEFAULT_TOL_CHANGE,
                     max_steps: int = 100_000):
    """Monotone equilibrium of every row.

    Rows are stepped with the implicit scheme until the directed energy is
    below ``tol_energy`` and the sup-norm change per unit time is below
    ``tol_change``; leftover decreasing increments smaller than
    ``sqrt(tol_energy)`` are then removed with PAVA.

    Returns ``(V, iterations, residual_energy, snapped)``.
    """
    if tol_energy <= 0 or tol_change <= 0:
        raise ValueError("tolerances must be positive")
    U = np.asarray(U, dtype=float)
    m, n = U.shape
    V = U.copy()
    iterations = np.zeros(m, dtype=int)
    residual = np.zeros(m)
    live = np.flatnonzero((np.diff(U, axis=1) < 0).any(axis=1))
    steps = 0
    while live.size:
        if steps >= max_steps:
            worst = float(directed_dirichlet_energy(V[live]).max())
            raise ConvergenceError(
                f"equilibrium not reached in {max_steps} steps for rows {live[:5].tolist()}", worst)
        cur = V[live]
        nxt = implicit_rows(cur, lam)
        steps += 1
        energy = directed_dirichlet_energy(nxt)
        change = np.abs(nxt - cur).max(axis=1) / lam
        V[live] = nxt
        iterations[live] += 1
        done = (energy < tol_energy) & (change < tol_change)
        residual[live[done]] = energy[done]
        live = live[~done]
    # Snap rows whose leftover violations sit at noise level.
    drop = np.maximum(-np.diff(V, axis=1), 0.0).max(axis=1)
    snapped = (drop > 0) & (drop < math.sqrt(tol_energy))
    if snapped.any():
        rows = V[snapped]
        V[snapped] = pava_rows(rows, np.ones_like(rows))
    if (drop >= math.sqrt(tol_energy)).any():
        bad = np.flatnonzero(drop >= math.sqrt(tol_energy))
        raise ConvergenceError(f"rows {bad[:5].tolist()} stopped with large violations",
                               float(drop.max()))
    return V, iterations, residual, snapped


def monotone_equilibrium(u: GridFunction1D, tol_energy: float = DEFAULT_TOL_ENERGY,
                         tol_change: float = DEFAULT_TOL_CHANGE,
                         lam: float = DEFAULT_LAMBDA,
                         max_steps: int = 100_000) -> EquilibriumResult:
    V, its, res, snapped = equilibrium_rows(u.values[None, :], lam, tol_energy,
                                            tol_change, max_steps)
    return EquilibriumResult(GridFunction1D(V[0]), int(its[0]), float(res[0]), bool(snapped[0]))
