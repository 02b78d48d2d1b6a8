"""Synthetic Lipschitz test functions with exact gradients.

Every family produces an :class:`OracleFunction` (continuum function with
analytic gradient) and its grid sample at cell centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dirmono.grid import GridFunctionND, cell_centers
from dirmono.rng import trial_rng

FAMILY_KINDS = ("random-trig", "random-increment", "linear-lowerbound", "staircase",
                "monotone-random")


class OracleFunction:
    """Query access to ``f : [0,1]^d -> R`` and its gradient, with counters.

    One instance per tester run; the counters are not synchronized.
    """

    def __init__(self, dim: int, value_fn: Callable, grad_fn: Callable | None, M: float,
                 name: str = "", allow_finite_differences: bool = False):
        self.dim = dim
        self.M = float(M)
        self.name = name
        self._value = value_fn
        self._grad = grad_fn
        self.allow_finite_differences = allow_finite_differences
        self.value_queries = 0
        self.grad_queries = 0

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        return x.ndim == 1, pts

    def value(self, x):
        single, pts = self._points(x)
        self.value_queries += len(pts)
        out = self._value(pts)
        return out[0] if single else out

    def grad(self, x):
        single, pts = self._points(x)
        self.grad_queries += len(pts)
        if self._grad is not None:
            out = self._grad(pts)
        elif self.allow_finite_differences:
            step = 1e-6 / max(self.M, 1e-12)
            out = np.empty_like(pts)
            for i in range(self.dim):
                e = np.zeros(self.dim)
                e[i] = step
                out[:, i] = (self._value(pts + e) - self._value(pts - e)) / (2 * step)
        else:
            raise RuntimeError(f"oracle {self.name!r} has no gradient and finite differences are off")
        return out[0] if single else out

    def sample_grid(self, n: int) -> GridFunctionND:
        vals = self._value(cell_centers(self.dim, n))
        return GridFunctionND(vals.reshape((n,) * self.dim))


@dataclass(frozen=True)
class SyntheticFamilySpec:
    kind: str
    M: float = 1.0
    seed: int = 0
    params: dict = field(default_factory=dict)


def _random_trig(d, M, rng, terms=3, max_freq=2):
    freqs = rng.integers(0, max_freq + 1, size=(terms, d)).astype(float)
    for k in range(terms):
        if not freqs[k].any():
            freqs[k, rng.integers(d)] = 1.0
    omega = np.pi * freqs
    phase = rng.uniform(0, 2 * np.pi, size=terms)
    amp = rng.normal(size=terms)
    amp *= M / (np.abs(amp) * np.linalg.norm(omega, axis=1)).sum()

    def value(x):
        return np.sin(x @ omega.T + phase) @ amp

    def grad(x):
        return (np.cos(x @ omega.T + phase) * amp) @ omega

    return value, grad, M


def _piecewise_linear(d, slopes):
    """``f(x) = Σ_i g_i(x_i)`` with ``g_i`` piecewise linear on equal knots, ``g_i(0) = 0``."""
    knots = slopes.shape[1]
    offsets = np.concatenate([np.zeros((d, 1)), np.cumsum(slopes / knots, axis=1)], axis=1)

    def locate(x):
        k = np.clip((x * knots).astype(int), 0, knots - 1)
        return k, x - k / knots

    def value(x):
        k, rem = locate(x)
        axes = np.arange(d)
        return (offsets[axes, k] + slopes[axes, k] * rem).sum(axis=1)

    def grad(x):
        k, _ = locate(x)
        return slopes[np.arange(d), k]

    return value, grad


def _random_increment(d, M, rng, knots=8):
    slopes = rng.uniform(-1, 1, size=(d, knots)) * M / np.sqrt(d)
    return (*_piecewise_linear(d, slopes), M)


def _monotone_random(d, M, rng, knots=8):
    slopes = rng.uniform(0, 1, size=(d, knots)) * M / np.sqrt(d)
    return (*_piecewise_linear(d, slopes), M)


def _staircase(d, M, rng, steps=3, ramp=0.5):
    """Sum of per-axis staircases; axis 1 always descends, other axes pick a direction."""
    signs = rng.choice([-1.0, 1.0], size=d)
    signs[0] = -1.0
    width = ramp / steps
    centers = (np.arange(steps) + 0.5) / steps
    scale = M / np.sqrt(d) * width * steps  # ramp slope (1/steps)/width times scale = M/√d

    def ramps(x):
        return np.clip((x[..., None] - centers) / width + 0.5, 0.0, 1.0)

    def value(x):
        return scale * (ramps(x).sum(axis=-1) / steps) @ signs

    def grad(x):
        z = (x[..., None] - centers) / width + 0.5
        inside = ((z > 0) & (z < 1)).sum(axis=-1)
        return scale * inside / (steps * width) * signs

    return value, grad, M


def lower_bound_functions(d: int, M: float, eps: float, i: int):
    """``f_i(x) = -eps x_i + Σ_{j≠i} (M/√d) x_j`` with its exact Lipschitz constant."""
    if not 0 <= i < d:
        raise ValueError(f"index {i} out of range for d={d}")
    g = np.full(d, M / np.sqrt(d))
    g[i] = -eps
    if d == 1:
        g = np.array([-eps])

    def value(x):
        return x @ g

    def grad(x):
        return np.broadcast_to(g, x.shape).copy()

    return value, grad, float(np.linalg.norm(g))


def generate(spec: SyntheticFamilySpec, d: int, n: int | None = None):
    """Build the oracle for ``spec``; with ``n`` also return its grid sample.

    Returns ``oracle`` or ``(grid, oracle)``.
    """
    rng = trial_rng(spec.seed, 0)
    params = dict(spec.params)
    if spec.kind == "random-trig":
        value, grad, L = _random_trig(d, spec.M, rng, int(params.get("terms", 3)),
                                      int(params.get("max_freq", 2)))
    elif spec.kind == "random-increment":
        value, grad, L = _random_increment(d, spec.M, rng, int(params.get("knots", 8)))
    elif spec.kind == "monotone-random":
        value, grad, L = _monotone_random(d, spec.M, rng, int(params.get("knots", 8)))
    elif spec.kind == "staircase":
        value, grad, L = _staircase(d, spec.M, rng, int(params.get("steps", 3)),
                                    float(params.get("ramp", 0.5)))
    elif spec.kind == "linear-lowerbound":
        value, grad, L = lower_bound_functions(d, spec.M, float(params.get("eps", 0.1)),
                                               int(params.get("i", 0)))
    else:
        raise ValueError(f"unknown family kind {spec.kind!r}; expected one of {FAMILY_KINDS}")
    oracle = OracleFunction(d, value, grad, L, name=spec.kind)
    if n is None:
        return oracle
    return oracle.sample_grid(n), oracle
