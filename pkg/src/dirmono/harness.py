"""Experiment configuration, orchestration, and result files."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from dirmono import duality, heat, tester
from dirmono.families import FAMILY_KINDS, SyntheticFamilySpec, generate
from dirmono.grid import GridFunction1D, GridFunctionND, grad_minus_sq_integral, is_monotone
from dirmono.isotonic import dist_mono, isotonic_nd
from dirmono.rng import trial_rng
from dirmono.tensorize import coordinatewise_equilibrium, transport_energy_check
from dirmono.transport import (DiscreteMeasure, TransportPlan, compose_plans, directed_w2_lp,
                               dominates, plan_cost, undirected_w2_lp, w2_1d_quantile)

EXPERIMENTS = ("heat", "ot", "tensorize", "duality", "test", "lemma", "lowerbound", "poincare")

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "trials": {"type": "integer", "minimum": 1},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"d": {"type": "integer", "minimum": 1},
                           "n": {"type": "integer", "minimum": 2}},
        },
        "family": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {"kind": {"enum": list(FAMILY_KINDS)},
                           "M": {"type": "number", "exclusiveMinimum": 0},
                           "params": {"type": "object"}},
        },
        "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
        "options": {"type": "object"},
        "output": {"type": "string"},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    trials: int = 10
    grid: dict = field(default_factory=lambda: {"d": 1, "n": 32})
    family: dict = field(default_factory=lambda: {"kind": "random-trig", "M": 1.0})
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        jsonschema.validate(data, CONFIG_SCHEMA)
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def d(self) -> int:
        return int(self.grid.get("d", 1))

    @property
    def n(self) -> int:
        return int(self.grid.get("n", 32))

    def family_spec(self, trial: int) -> SyntheticFamilySpec:
        return SyntheticFamilySpec(self.family["kind"], float(self.family.get("M", 1.0)),
                                   trial_seed(self.seed, trial), dict(self.family.get("params", {})))

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))


def trial_seed(seed: int, trial: int) -> int:
    return seed * 1_000_003 + trial


@dataclass(frozen=True)
class Failure:
    """One violated property: where it lives, which invariant, and how to replay it."""

    module: str
    invariant: str
    seed: int
    trial: int
    detail: str

    def __str__(self):
        return f"[{self.module}:{self.invariant}] seed={self.seed} trial={self.trial}: {self.detail}"


@dataclass
class ExperimentResult:
    name: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _map_trials(fn, trials: int, threads: int):
    if threads <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def _check(result: ExperimentResult, cond: bool, module: str, invariant: str, cfg, trial, detail):
    if not cond:
        result.failures.append(Failure(module, invariant, cfg.seed, trial, detail))


def _percentile(values, q):
    return float(np.percentile(values, q)) if len(values) else 0.0


# ---------------------------------------------------------------------------
# Experiments


def run_heat(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    scheme = cfg.options.get("scheme", "explicit")
    T = float(cfg.options.get("T", 0.5))
    step = cfg.options.get("step")
    tol_e = cfg.tol("energy", 1e-9)
    tol_m = cfg.tol("mass", 1e-12 if scheme == "explicit" else 1e-9)
    lines = [generate(cfg.family_spec(t), 1, cfg.n)[0].to_1d() for t in range(cfg.trials)]
    traces = heat.evolve_many(lines, T, scheme, step)
    res = ExperimentResult("heat")
    for t, tr in enumerate(traces):
        states = np.stack([s.values for s in tr.states])
        prefix = np.cumsum(states, axis=1) / cfg.n
        rise = float(np.max(np.diff(tr.energies), initial=0.0))
        drift = float(np.abs(tr.mass - tr.mass[0]).max())
        prefix_rise = float(np.max(np.diff(prefix, axis=0), initial=0.0))
        res.rows.append({"trial": t, "energy_start": tr.energies[0], "energy_end": tr.energies[-1],
                         "energy_rise": rise, "mass_drift": drift, "prefix_rise": prefix_rise})
        _check(res, rise <= tol_e, "heat", "energy_nonincreasing", cfg, t, f"rise {rise:.3e}")
        _check(res, drift <= tol_m, "heat", "mass_conserved", cfg, t, f"drift {drift:.3e}")
        _check(res, prefix_rise <= tol_e, "heat", "prefix_mass_nonincreasing", cfg, t,
               f"rise {prefix_rise:.3e}")
    return res


def _bounded_density(cfg: ExperimentConfig, trial: int, a: float) -> GridFunctionND:
    g, _ = generate(cfg.family_spec(trial), cfg.d, cfg.n)
    centered = g.values - g.values.mean()
    spread = np.abs(centered).max()
    vals = 1.0 + (a * centered / spread if spread > 0 else 0.0)
    return GridFunctionND(vals - (vals.mean() - 1.0))


def run_tensorize(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    a = float(cfg.options.get("a", 0.1))
    res = ExperimentResult("tensorize")

    def one(t):
        return transport_energy_check(_bounded_density(cfg, t, a), a)

    for t, rep in enumerate(_map_trials(one, cfg.trials, threads)):
        res.rows.append({"trial": t, "w2sq": rep.w2sq_directed,
                         "energy_integral": rep.grad_minus_sq_integral, "ratio": rep.ratio})
        _check(res, is_monotone(rep.f_star.values), "tensorize", "fstar_monotone", cfg, t, "")
        _check(res, math.isfinite(rep.ratio), "tensorize", "ratio_finite", cfg, t, f"{rep.ratio}")
    ratios = [r["ratio"] for r in res.rows]
    res.summary = {"max_ratio": max(ratios), "p95_ratio": _percentile(ratios, 95)}
    return res


def _random_directed_pair(rng, d: int, n: int):
    """Random measure on the grid and a random directed push-forward of it."""
    src = rng.random((n,) * d) * (rng.random((n,) * d) < 0.7)
    src.flat[0] += 1e-3
    src /= src.sum()
    dst = np.zeros_like(src)
    for cell in zip(*np.nonzero(src)):
        target = tuple(rng.integers(c, n) for c in cell)
        dst[target] += src[cell]
    return src, dst


def _grid_measure(masses: np.ndarray) -> DiscreteMeasure:
    from dirmono.grid import cell_centers

    return DiscreteMeasure(cell_centers(masses.ndim, masses.shape[0]), masses.reshape(-1))


def run_duality(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    t_hl = float(cfg.options.get("t", 1.0))
    tol = cfg.tol("slack", 1e-8)
    res = ExperimentResult("duality")

    def one(trial):
        rng = trial_rng(cfg.seed, trial)
        a, b = _random_directed_pair(rng, cfg.d, cfg.n)
        h = GridFunctionND(rng.normal(size=(cfg.n,) * cfg.d))
        gap = duality.duality_gap(h, _grid_measure(a), _grid_measure(b))
        quotient = duality.hj_quotient(h, t_hl).values
        lip = duality.directed_lipschitz_bound(h)
        return gap, quotient, lip, duality.restricted_radius_check(h, t_hl)

    for t, (gap, quotient, lip, radius_ok) in enumerate(_map_trials(one, cfg.trials, threads)):
        res.rows.append({"trial": t, "lhs": gap.lhs, "rhs": gap.rhs, "slack": gap.slack,
                         "quotient_min": float(quotient.min()), "quotient_max": float(quotient.max()),
                         "half_lip_sq": 0.5 * lip * lip})
        _check(res, gap.feasible, "duality", "directed_pair_feasible", cfg, t, "")
        _check(res, gap.slack is not None and gap.slack >= -tol, "duality", "hopf_lax_duality",
               cfg, t, f"slack {gap.slack}")
        _check(res, quotient.min() >= 0 and quotient.max() <= 0.5 * lip * lip + 1e-8, "duality",
               "quotient_bounds", cfg, t, f"[{quotient.min()}, {quotient.max()}]")
        _check(res, radius_ok, "duality", "restricted_radius", cfg, t, "")
    res.summary = {"min_slack": min(r["slack"] for r in res.rows)}
    return res


def run_ot(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Quantile W₂ against the LP on random 1-D pairs, and directed = undirected under domination."""
    tol = cfg.tol("w2", 1e-8)
    res = ExperimentResult("ot")
    for t in range(cfg.trials):
        rng = trial_rng(cfg.seed, t)
        k, m = rng.integers(1, 33, size=2)
        a, b = rng.random(k) + 0.1, rng.random(m) + 0.1
        mu = DiscreteMeasure(rng.random((k, 1)), a / a.sum())
        nu = DiscreteMeasure(rng.random((m, 1)), b / b.sum())
        quantile = w2_1d_quantile(mu, nu)
        lp, _ = undirected_w2_lp(mu, nu)
        row = {"trial": t, "quantile": quantile, "lp": lp, "directed": ""}
        _check(res, abs(quantile - lp) <= tol, "transport", "quantile_matches_lp", cfg, t,
               f"{quantile} vs {lp}")
        if dominates(mu, nu):
            directed = directed_w2_lp(mu, nu)
            row["directed"] = directed.value
            _check(res, directed.feasible and abs(directed.value - lp) <= tol, "transport",
                   "directed_equals_undirected", cfg, t, f"{directed.value} vs {lp}")
        res.rows.append(row)
    return res


def run_test(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Tester runs on one family member; reports verdicts per trial."""
    oracle = generate(cfg.family_spec(0), cfg.d)
    eps = float(cfg.options.get("eps", 0.1))
    tcfg = tester.TesterConfig(cfg.d, oracle.M, eps, mode=cfg.options.get("mode", "plain"),
                               c_iter=float(cfg.options.get("c_iter", tester.CALIBRATED_C_ITER)))
    res = ExperimentResult("test")
    for t in range(cfg.trials):
        out = tester.run_tester(oracle, tcfg, trial_rng(cfg.seed, t))
        witness = "" if out.witness is None else json.dumps(
            {"x": out.witness[0].tolist(), "v": out.witness[1].astype(int).tolist()})
        res.rows.append({"trial": t, "verdict": out.verdict, "rounds_used": out.iterations_used,
                         "witness": witness})
        if cfg.family["kind"] == "monotone-random":
            _check(res, out.verdict == "accept", "tester", "one_sided", cfg, t, "rejected a monotone oracle")
    rejects = sum(r["verdict"] == "reject" for r in res.rows)
    res.summary = {"rejection_frequency": rejects / cfg.trials, "rounds": tcfg.rounds,
                   "ci99": list(tester.binomial_interval(rejects, cfg.trials))}
    return res


def run_lemma(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Implied lemma constant per dimension; exact for d <= 16 unless sampling is forced."""
    res = ExperimentResult("lemma")
    dims = cfg.options.get("dims", [cfg.d])
    kinds = tuple(cfg.options.get("corpus", tester.LEMMA_CORPUS_KINDS))
    exact = cfg.options.get("exact", True)
    for d in dims:
        if exact and d <= tester.MAX_EXACT_DIM:
            check = tester.lemma_check_exact
        else:
            rng = trial_rng(cfg.seed, d)
            check = lambda u, rng=rng: tester.lemma_check_monte_carlo(u, rng)  # noqa: E731
        base, rep = tester.lemma_implied_constant(tester.lemma_corpus(d, 1, cfg.seed, kinds), check)
        doubled, _ = tester.lemma_implied_constant(tester.lemma_corpus(d, 2, cfg.seed, kinds), check)
        res.rows.append({"d": d, "implied_c_min": base, "implied_c_min_doubled": doubled,
                         "approximate": rep.approximate,
                         "argmin": json.dumps([round(x, 6) for x in rep.u.tolist()])})
        _check(res, base > 0, "tester", "lemma_constant_positive", cfg, d, f"{base}")
        _check(res, abs(doubled / base - 1) <= 0.1, "tester", "lemma_constant_stable", cfg, d,
               f"{base} vs {doubled}")
    return res


def run_lowerbound(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    res = ExperimentResult("lowerbound")
    M = float(cfg.family.get("M", 1.0))
    eps = float(cfg.options.get("eps", 0.1))
    vcount = int(cfg.options.get("vcount", 1000))
    d = cfg.d
    rng = trial_rng(cfg.seed, 0)
    limit = tester.lower_bound_limit(d, M, eps)
    worst = 0.0
    for v in lower_bound_directions(d, rng, vcount):
        prob = tester.pair_test_reject_prob(v, d, M, eps)
        worst = max(worst, prob)
        _check(res, prob <= limit, "tester", "lower_bound", cfg, 0, f"prob {prob} > {limit}")
    res.rows.append({"d": d, "M": M, "eps": eps, "max_reject_prob": worst, "limit": limit})
    return res


def lower_bound_directions(d: int, rng, count: int):
    """Structured directions (unit vectors, all-ones, prefixes, dyadic ramps) then random ones."""
    yield np.zeros(d)
    yield np.ones(d)
    for j in range(d):
        yield np.eye(d)[j]
        yield (np.arange(d) <= j).astype(float)
    yield 2.0 ** -np.arange(d)
    yield np.arange(1, d + 1, dtype=float)
    for _ in range(count):
        kind = rng.integers(3)
        if kind == 0:
            yield (rng.random(d) < rng.choice([0.5, 0.1, 1 / d])).astype(float)
        elif kind == 1:
            yield rng.exponential(size=d) * (rng.random(d) < 0.3)
        else:
            yield rng.random(d) ** 4


@dataclass
class PoincareReport:
    trials: list
    summary: dict
    failures: list = field(default_factory=list)


def poincare_trial(f: GridFunctionND) -> dict:
    energy = grad_minus_sq_integral(f)
    f_star = coordinatewise_equilibrium(f)
    iso = isotonic_nd(f)
    gap = float(((f.values - f_star.values) ** 2).sum() * f.cell_volume)
    dist_sq = iso.distance**2
    return {"dist_sq": dist_sq, "fstar_gap": gap, "energy": energy,
            "ratio1": dist_sq / energy if energy > 0 else 0.0,
            "ratio2": gap / energy if energy > 0 else 0.0,
            "fstar_vs_isotonic": float(np.sqrt(((f_star.values - iso.projection.values) ** 2).sum()
                                               * f.cell_volume))}


def run_poincare_experiment(cfg: ExperimentConfig, threads: int = 1) -> PoincareReport:
    """Poincaré ratios on the configured grid and on its 2x refinement, same functions."""
    if cfg.d > 3:
        raise ValueError("poincare experiment supports d <= 3")
    tol = cfg.tol("chain", 1e-8)
    levels = [cfg.n, 2 * cfg.n]
    rows, failures = [], []
    for n in levels:
        def one(t, n=n):
            oracle = generate(cfg.family_spec(t), cfg.d)
            try:
                return poincare_trial(oracle.sample_grid(n))
            except Exception as err:  # recorded, experiment continues
                return {"error": f"{type(err).__name__}: {err}"}

        for t, row in enumerate(_map_trials(one, cfg.trials, threads)):
            row = {"n": n, "trial": t, **row}
            rows.append(row)
            if "error" in row:
                failures.append(Failure("harness", "trial_error", cfg.seed, t, row["error"]))
            elif row["dist_sq"] > row["fstar_gap"] + tol:
                failures.append(Failure("isotonic", "chain_ordering", cfg.seed, t,
                                        f"dist_sq {row['dist_sq']} > fstar_gap {row['fstar_gap']}"))
    summary = {}
    for n in levels:
        good = [r for r in rows if r["n"] == n and "error" not in r]
        for key in ("ratio1", "ratio2"):
            vals = [r[key] for r in good]
            summary[f"max_{key}_n{n}"] = max(vals) if vals else float("nan")
            summary[f"p95_{key}_n{n}"] = _percentile(vals, 95)
    coarse, fine = levels
    summary["max_ratio1"] = summary[f"max_ratio1_n{fine}"]
    summary["max_ratio2"] = summary[f"max_ratio2_n{fine}"]
    for key, name in (("ratio2", "refinement_drift"), ("ratio1", "refinement_drift_ratio1")):
        before, after = summary[f"max_{key}_n{coarse}"], summary[f"max_{key}_n{fine}"]
        summary[name] = abs(after / before - 1) if before > 0 else 0.0
    return PoincareReport(rows, summary, failures)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    if cfg.experiment == "poincare":
        rep = run_poincare_experiment(cfg, threads)
        return ExperimentResult("poincare", rep.trials, rep.summary, rep.failures)
    runner = {"heat": run_heat, "ot": run_ot, "tensorize": run_tensorize, "duality": run_duality,
              "test": run_test, "lemma": run_lemma, "lowerbound": run_lowerbound}[cfg.experiment]
    return runner(cfg, threads)


# ---------------------------------------------------------------------------
# Suites

SUITES = {
    "heat-invariants": [{"experiment": "heat", "trials": 20, "grid": {"d": 1, "n": 64},
                         "options": {"T": 0.25}},
                        {"experiment": "heat", "trials": 20, "grid": {"d": 1, "n": 64},
                         "options": {"T": 0.25, "scheme": "implicit", "step": 1e-3}}],
    "ot-invariants": [{"experiment": "ot", "trials": 100},
                      {"experiment": "tensorize", "trials": 10, "grid": {"d": 2, "n": 8}}],
    "duality-slacks": [{"experiment": "duality", "trials": 50, "grid": {"d": 2, "n": 8}}],
    "tester-soundness": [{"experiment": "test", "trials": 200, "grid": {"d": 2},
                          "family": {"kind": "monotone-random"}, "options": {"eps": 0.1}}],
    "lemma-scan": [{"experiment": "lemma", "options": {"dims": [2, 3, 4, 5, 6]}}],
    "lowerbound-scan": [{"experiment": "lowerbound", "grid": {"d": d}, "family": {"kind": "linear-lowerbound", "M": 1.0},
                         "options": {"eps": r, "vcount": 2000}} for d in (4, 16, 64) for r in (0.05, 0.2)],
    "poincare": [{"experiment": "poincare", "trials": 20, "grid": {"d": 2, "n": 8}}],
}


def run_suite(name: str, seed: int = 0, threads: int = 1) -> list[ExperimentResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return [run_experiment(ExperimentConfig.from_dict({**c, "seed": seed}), threads)
            for c in SUITES[name]]


# ---------------------------------------------------------------------------
# Output


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def rows_to_csv(rows: list) -> str:
    if not rows:
        return ""
    columns = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(r.get(k, "")) for k in columns})
    return buf.getvalue()


def emit(result: ExperimentResult, fmt: str = "csv", out: str | None = None) -> str:
    """Render ``result`` as CSV rows or a JSON document; write it when ``out`` is given."""
    if fmt == "csv":
        text = rows_to_csv(result.rows)
    elif fmt == "json":
        text = json.dumps({"name": result.name, "summary": result.summary, "rows": result.rows,
                           "failures": [asdict(f) for f in result.failures]}, indent=2, default=float)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if out:
        Path(out).write_text(text)
    return text


def measure_from_file(path) -> DiscreteMeasure:
    return DiscreteMeasure.from_json(Path(path).read_text())


def dist_from_file(path, p: int) -> float:
    from dirmono.grid import from_json

    return dist_mono(from_json(Path(path).read_text()), p)


def transport_from_files(mode: str, a, b):
    """One CLI transport computation; returns a result row and the plan (or None)."""
    if mode == "compose":
        first = TransportPlan.from_json(Path(a).read_text())
        second = TransportPlan.from_json(Path(b).read_text())
        plan = compose_plans(first, second)
        return {"status": "optimal", "cost_sq": plan_cost(plan) ** 2,
                "first_cost_sq": plan_cost(first) ** 2, "second_cost_sq": plan_cost(second) ** 2,
                "directed": plan.is_directed()}, plan
    mu, nu = measure_from_file(a), measure_from_file(b)
    if mode == "w2":
        value, plan = undirected_w2_lp(mu, nu)
        row = {"status": "optimal", "w2sq": value}
        if mu.d == 1:
            row["w2sq_quantile"] = w2_1d_quantile(mu, nu)
        return row, plan
    res = directed_w2_lp(mu, nu)
    return {"status": res.status, "w2sq": "" if res.value is None else res.value}, res.plan


def equilibrium_line(values) -> GridFunction1D:
    return heat.monotone_equilibrium(GridFunction1D(values)).equilibrium
