"""Discrete optimal transport with and without the coordinatewise order constraint.

Directed transport only allows moving mass from ``x`` to ``y`` when
``x ⪯ y`` coordinatewise.  On atomic measures both problems are
transportation LPs; the directed one simply omits the forbidden arcs, so an
infeasible LP is exactly the case where no directed plan exists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, csr_matrix, diags

from dirmono.grid import (GridFunction1D, GridFunctionND, as_nd, cell_centers,
                          directed_dirichlet_energy)

ORDER_TOL = 1e-12
MASS_TOL = 1e-12
MARGINAL_TOL = 1e-10
MAX_ARCS = 4_000_000


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        m = np.array(self.masses, dtype=float).reshape(-1)
        if pts.shape[0] != m.size:
            raise ValueError("points and masses differ in length")
        if (m < 0).any():
            raise ValueError("masses must be nonnegative")
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {m.sum()!r}, not 1")
        pts.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.masses.size

    def to_json(self) -> str:
        return json.dumps({"points": self.points.tolist(), "masses": self.masses.tolist()})

    @classmethod
    def from_json(cls, text: str) -> DiscreteMeasure:
        data = json.loads(text)
        return cls(np.array(data["points"], dtype=float), np.array(data["masses"], dtype=float))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling: ``mass[k]`` moves from ``src.points[rows[k]]`` to ``dst.points[cols[k]]``."""

    src: DiscreteMeasure
    dst: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def matrix(self) -> csr_matrix:
        return coo_matrix((self.mass, (self.rows, self.cols)),
                          shape=(len(self.src), len(self.dst))).tocsr()

    def marginal_error(self) -> float:
        out = np.bincount(self.rows, self.mass, minlength=len(self.src))
        inc = np.bincount(self.cols, self.mass, minlength=len(self.dst))
        return float(max(np.abs(out - self.src.masses).max(),
                         np.abs(inc - self.dst.masses).max()))

    def is_directed(self, tol: float = ORDER_TOL) -> bool:
        diff = self.dst.points[self.cols] - self.src.points[self.rows]
        return bool((diff >= -tol).all())

    def to_json(self) -> str:
        return json.dumps({"src": json.loads(self.src.to_json()), "dst": json.loads(self.dst.to_json()),
                           "entries": [[int(i), int(j), float(m)] for i, j, m
                                       in zip(self.rows, self.cols, self.mass)]})

    @classmethod
    def from_json(cls, text: str) -> TransportPlan:
        data = json.loads(text)
        entries = np.array(data["entries"], dtype=float).reshape(-1, 3)
        return cls(DiscreteMeasure.from_json(json.dumps(data["src"])),
                   DiscreteMeasure.from_json(json.dumps(data["dst"])),
                   entries[:, 0].astype(np.int64), entries[:, 1].astype(np.int64), entries[:, 2])


@dataclass(frozen=True)
class DirectedOTResult:
    """Outcome of a directed transport solve.

    ``value`` is the squared directed distance when ``status == "optimal"``
    and ``None`` when no directed plan exists (the distance is +∞).
    """

    status: str
    value: float | None
    plan: TransportPlan | None

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def measure_from_grid(f: GridFunction1D | GridFunctionND) -> DiscreteMeasure:
    """Atoms at cell centers with mass proportional to the cell values."""
    f = as_nd(f)
    vals = f.values.reshape(-1)
    if (vals < 0).any():
        raise ValueError("density must be nonnegative")
    total = vals.sum()
    if not total > 0:
        raise ValueError("density has no mass")
    return DiscreteMeasure(cell_centers(f.d, f.n), vals / total)


def w2_1d_quantile(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Squared W₂ on the line by integrating the quantile functions exactly."""
    if mu.d != 1 or nu.d != 1:
        raise ValueError("quantile formula needs d = 1")
    ox, oy = np.argsort(mu.points[:, 0], kind="stable"), np.argsort(nu.points[:, 0], kind="stable")
    xs, ys = mu.points[ox, 0], nu.points[oy, 0]
    ca, cb = np.cumsum(mu.masses[ox]), np.cumsum(nu.masses[oy])
    levels = np.unique(np.concatenate([ca, cb]))
    levels = levels[levels > 0]
    lower = np.concatenate([[0.0], levels[:-1]])
    mid = 0.5 * (lower + levels)
    i = np.minimum(np.searchsorted(ca, mid), xs.size - 1)
    j = np.minimum(np.searchsorted(cb, mid), ys.size - 1)
    return float(((levels - lower) * (xs[i] - ys[j]) ** 2).sum())


def _prefix_masses(mu: DiscreteMeasure, at: np.ndarray):
    x = mu.points[:, 0]
    order = np.argsort(x, kind="stable")
    xs, cm = x[order], np.concatenate([[0.0], np.cumsum(mu.masses[order])])
    return cm[np.searchsorted(xs, at, side="left")], cm[np.searchsorted(xs, at, side="right")]


def dominates(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-10) -> bool:
    """True when every half-line ``(-∞, x)`` carries at least as much ``mu``-mass as ``nu``-mass.

    Both open and closed half-lines are compared at every atom location,
    which covers all ``x`` for atomic measures.
    """
    if mu.d != 1 or nu.d != 1:
        raise ValueError("domination is defined for d = 1")
    at = np.union1d(mu.points[:, 0], nu.points[:, 0])
    mo, mc = _prefix_masses(mu, at)
    no, nc = _prefix_masses(nu, at)
    return bool((mo >= no - tol).all() and (mc >= nc - tol).all())


def _solve_transport(mu: DiscreteMeasure, nu: DiscreteMeasure, directed: bool) -> DirectedOTResult:
    if mu.d != nu.d:
        raise ValueError("measures live in different dimensions")
    si = np.flatnonzero(mu.masses > 0)
    ti = np.flatnonzero(nu.masses > 0)
    P, Q = mu.points[si], nu.points[ti]
    if directed:
        ok = (Q[None, :, :] >= P[:, None, :] - ORDER_TOL).all(axis=2)
        I, J = np.nonzero(ok)
    else:
        I, J = np.divmod(np.arange(si.size * ti.size), ti.size)
    if I.size > MAX_ARCS:
        raise ValueError(f"{I.size} arcs exceeds the solver cap of {MAX_ARCS}")
    if I.size == 0:
        return DirectedOTResult("infeasible", None, None)
    cost = ((P[I] - Q[J]) ** 2).sum(axis=1)
    k = np.arange(I.size)
    A = coo_matrix((np.ones(2 * I.size), (np.concatenate([I, si.size + J]), np.concatenate([k, k]))),
                   shape=(si.size + ti.size, I.size)).tocsr()
    b = np.concatenate([mu.masses[si], nu.masses[ti]])
    res = linprog(cost, A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        return DirectedOTResult("infeasible", None, None)
    if res.status != 0:
        raise TransportError(f"transport LP failed: {res.message}")
    keep = res.x > 1e-15
    plan = TransportPlan(mu, nu, si[I[keep]], ti[J[keep]], res.x[keep])
    if plan.marginal_error() > MARGINAL_TOL:
        raise TransportError(f"plan marginals off by {plan.marginal_error():.3e}")
    return DirectedOTResult("optimal", float(cost[keep] @ res.x[keep]), plan)


def directed_w2_lp(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DirectedOTResult:
    """Squared directed W₂ from ``mu`` to ``nu`` (plans supported on ``x ⪯ y``)."""
    return _solve_transport(mu, nu, directed=True)


def undirected_w2_lp(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, TransportPlan]:
    """Squared W₂ between ``mu`` and ``nu`` and an optimal plan."""
    res = _solve_transport(mu, nu, directed=False)
    return res.value, res.plan


def plan_cost(plan: TransportPlan, p: float = 2) -> float:
    """``(Σ mass |x - y|^p)^(1/p)``."""
    dist = np.linalg.norm(plan.src.points[plan.rows] - plan.dst.points[plan.cols], axis=1)
    return float((plan.mass @ dist**p) ** (1.0 / p))


def _same_measure(a: DiscreteMeasure, b: DiscreteMeasure) -> bool:
    return (a.points.shape == b.points.shape and np.allclose(a.points, b.points, rtol=0, atol=ORDER_TOL)
            and np.abs(a.masses - b.masses).max() <= MARGINAL_TOL)


def compose_plans(first: TransportPlan, second: TransportPlan) -> TransportPlan:
    """Glue ``first`` (μ→ϱ) and ``second`` (ϱ→ν) through ϱ.

    Mass arriving at an intermediate atom is split over that atom's outgoing
    arcs in proportion to their masses.
    """
    if not _same_measure(first.dst, second.src):
        raise ValueError("intermediate measures do not match")
    rho = first.dst.masses
    inv = np.divide(1.0, rho, out=np.zeros_like(rho), where=rho > 0)
    glued = (first.matrix() @ diags(inv) @ second.matrix()).tocoo()
    keep = glued.data > 0
    plan = TransportPlan(first.src, second.dst, glued.row[keep], glued.col[keep], glued.data[keep])
    if plan.marginal_error() > MARGINAL_TOL:
        raise TransportError(f"glued plan marginals off by {plan.marginal_error():.3e}")
    return plan


def check_aligned(plan: TransportPlan, axes) -> bool:
    """True when every arc moves only along the given (0-based) axes."""
    fixed = np.setdiff1d(np.arange(plan.src.d), np.asarray(list(axes), dtype=int))
    diff = plan.dst.points[plan.cols][:, fixed] - plan.src.points[plan.rows][:, fixed]
    return bool((np.abs(diff) <= ORDER_TOL).all())


def transport_energy_ratio_1d(u: GridFunction1D, equilibrium: GridFunction1D) -> dict:
    """Compare ``W₂²(u dx, P∞u dx)`` with ``E⁻(u) / min u`` for a positive density.

    ``equilibrium`` is the monotone equilibrium of ``u``.  Returns the
    squared distance, the energy, and their ratio scaled by ``min u``.
    """
    if u.values.min() <= 0:
        raise ValueError("density must be bounded away from zero")
    w2sq = w2_1d_quantile(measure_from_grid(u), measure_from_grid(equilibrium))
    energy = directed_dirichlet_energy(u)
    ratio = w2sq * u.values.min() / energy if energy > 0 else 0.0
    return {"w2sq": w2sq, "energy": energy, "ratio": ratio}
