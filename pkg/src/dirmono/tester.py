"""Directional-derivative monotonicity tester and its exact companions.

Each round samples a uniform point ``x`` and a 0/1 direction ``v`` from a
two-stage distribution: first a probability ``p`` uniformly from the dyadic
ladder ``{1, 1/2, ..., 2^-⌈log₂ 4d⌉}``, then independent Bernoulli(p)
coordinates.  The tester rejects as soon as ``∇f(x)·v`` is negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import beta

from dirmono.families import OracleFunction, SyntheticFamilySpec, generate, lower_bound_functions
from dirmono.isotonic import dist_mono
from dirmono.rng import trial_rng

# Frozen output of calibrate_c_iter on soundness_corpus() (see README).
CALIBRATED_C_ITER = 0.125
# Robust threshold constant δ/sqrt(2Ĉ) with δ = 1/100 and the measured
# Poincaré constant Ĉ of the poincare experiment.
POINCARE_CONSTANT_ESTIMATE = 0.1016
DEFAULT_K_ROBUST = 0.01 / math.sqrt(2 * POINCARE_CONSTANT_ESTIMATE)


class DirectionDistribution:
    """Two-stage distribution over ``{0,1}^d``."""

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("d must be positive")
        self.d = d
        top = (4 * d - 1).bit_length()  # ⌈log₂(4d)⌉
        self.ladder = 2.0 ** -np.arange(top + 1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = rng.choice(self.ladder, size=size)
        return rng.random((size, self.d)) < p[:, None]

    def probability(self, v) -> float:
        """Exact probability of drawing ``v``."""
        k = int(np.count_nonzero(v))
        return float(np.mean(self.ladder**k * (1 - self.ladder) ** (self.d - k)))

    def prob_all_ones(self) -> float:
        return float(np.mean(self.ladder**self.d))

    def prob_zero(self) -> float:
        return float(np.mean((1 - self.ladder) ** self.d))


def sample_direction(dist: DirectionDistribution, rng: np.random.Generator) -> np.ndarray:
    return dist.sample(rng, 1)[0]


@dataclass(frozen=True)
class TesterConfig:
    d: int
    M: float
    eps: float
    c_iter: float = CALIBRATED_C_ITER
    mode: str = "plain"
    K_robust: float = DEFAULT_K_ROBUST
    iterations: int | None = None

    def __post_init__(self):
        if self.eps <= 0 or self.M <= 0:
            raise ValueError("eps and M must be positive")
        if self.mode not in ("plain", "robust"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def rounds(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return math.ceil(self.c_iter * math.sqrt(self.d) * self.M**2 * math.log(self.d + 1)
                         / self.eps**2)

    @property
    def threshold(self) -> float:
        return 0.0 if self.mode == "plain" else -self.K_robust * self.eps / self.d


@dataclass(frozen=True)
class TesterOutcome:
    verdict: str
    iterations_used: int
    witness: tuple | None = None


def run_tester(oracle: OracleFunction, cfg: TesterConfig, rng: np.random.Generator,
               chunk: int = 256) -> TesterOutcome:
    """Run the tester; rounds are drawn in blocks but scanned in order."""
    if oracle.dim != cfg.d:
        raise ValueError(f"oracle has dimension {oracle.dim}, config says {cfg.d}")
    dist = DirectionDistribution(cfg.d)
    total = cfg.rounds
    done = 0
    while done < total:
        m = min(chunk, total - done)
        x = rng.random((m, cfg.d))
        v = dist.sample(rng, m)
        slope = (oracle.grad(x) * v).sum(axis=1)
        hits = np.flatnonzero(slope < cfg.threshold)
        if hits.size:
            k = hits[0]
            return TesterOutcome("reject", done + k + 1, (x[k].copy(), v[k].copy()))
        done += m
    return TesterOutcome("accept", total)


def rejection_frequency(oracle: OracleFunction, cfg: TesterConfig, trials: int, seed: int) -> float:
    rejects = sum(run_tester(oracle, cfg, trial_rng(seed, t)).verdict == "reject"
                  for t in range(trials))
    return rejects / trials


def binomial_interval(successes: int, trials: int, level: float = 0.99) -> tuple[float, float]:
    """Two-sided Clopper-Pearson interval."""
    alpha = 1 - level
    lo = beta.ppf(alpha / 2, successes, trials - successes + 1) if successes > 0 else 0.0
    hi = beta.ppf(1 - alpha / 2, successes + 1, trials - successes) if successes < trials else 1.0
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Soundness corpus and calibration


@dataclass(frozen=True)
class FarInstance:
    """An oracle with a grid-certified distance to monotonicity."""

    name: str
    spec: SyntheticFamilySpec
    d: int
    eps: float
    grid_distance: float

    def oracle(self) -> OracleFunction:
        return generate(self.spec, self.d)


SURROGATE_CELLS = {1: 256, 2: 32, 3: 16, 4: 8}
SURROGATE_MARGIN = 0.9


@lru_cache(maxsize=None)
def soundness_corpus() -> tuple[FarInstance, ...]:
    """Far-from-monotone oracles; ``eps`` is 90% of the isotonic distance of the grid sample."""
    specs = [
        (1, SyntheticFamilySpec("linear-lowerbound", 1.0, 0, {"eps": 1.0, "i": 0})),
        (1, SyntheticFamilySpec("staircase", 1.0, 1, {"steps": 3})),
        (2, SyntheticFamilySpec("staircase", 1.0, 2, {"steps": 2})),
        (3, SyntheticFamilySpec("staircase", 1.0, 3, {"steps": 2})),
        (2, SyntheticFamilySpec("linear-lowerbound", 1.0, 0, {"eps": 1.0, "i": 1})),
        (3, SyntheticFamilySpec("linear-lowerbound", 1.0, 0, {"eps": 0.5, "i": 0})),
        (4, SyntheticFamilySpec("linear-lowerbound", 1.0, 0, {"eps": 0.5, "i": 2})),
        (1, SyntheticFamilySpec("random-trig", 1.0, 1)),
        (2, SyntheticFamilySpec("random-trig", 1.0, 9)),
        (2, SyntheticFamilySpec("random-trig", 1.0, 0)),
        (3, SyntheticFamilySpec("random-trig", 1.0, 0)),
        (1, SyntheticFamilySpec("random-increment", 1.0, 3)),
        (2, SyntheticFamilySpec("random-increment", 1.0, 3)),
        (3, SyntheticFamilySpec("random-increment", 1.0, 4)),
    ]
    out = []
    for d, spec in specs:
        grid, _ = generate(spec, d, SURROGATE_CELLS[d])
        dist = dist_mono(grid, 2)
        out.append(FarInstance(f"{spec.kind}/d{d}/s{spec.seed}", spec, d,
                               SURROGATE_MARGIN * dist, dist))
    return tuple(out)


def corpus_frequencies(c_iter: float, trials: int, seed: int, mode: str = "plain",
                       K_robust: float = DEFAULT_K_ROBUST) -> list[tuple[FarInstance, int]]:
    """Rejection counts per corpus member at the given multiplier."""
    rows = []
    for k, inst in enumerate(soundness_corpus()):
        oracle = inst.oracle()
        cfg = TesterConfig(inst.d, oracle.M, inst.eps, c_iter=c_iter, mode=mode, K_robust=K_robust)
        rejects = sum(run_tester(oracle, cfg, trial_rng(seed + k, t)).verdict == "reject"
                      for t in range(trials))
        rows.append((inst, rejects))
    return rows


def calibrate_c_iter(trials: int = 400, seed: int = 10_000, target: float = 2 / 3,
                     ci_floor: float = 0.6, lowest: int = -12, highest: int = 8) -> float:
    """Smallest power of two at which every corpus member is rejected often enough.

    A multiplier passes when each member's rejection frequency is at least
    ``target`` and the lower end of its 99% interval is at least
    ``ci_floor``.  Rejection frequency grows with the number of rounds, so
    a binary search over the exponent suffices.
    """

    def passes(exp):
        for _, rejects in corpus_frequencies(2.0**exp, trials, seed):
            if rejects / trials < target or binomial_interval(rejects, trials)[0] < ci_floor:
                return False
        return True

    lo, hi = lowest, highest
    if not passes(hi):
        raise RuntimeError(f"no multiplier up to 2^{hi} reaches the target")
    while lo < hi:
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid + 1
    return 2.0**lo


# ---------------------------------------------------------------------------
# Exact subset-sum detection probabilities


@lru_cache(maxsize=None)
def _cube(d: int) -> tuple[np.ndarray, np.ndarray]:
    bits = ((np.arange(2**d)[:, None] >> np.arange(d)) & 1).astype(float)
    return bits, bits.sum(axis=1)


@dataclass(frozen=True)
class LemmaReport:
    u: np.ndarray
    lhs: float
    rhs_shape: float
    implied_c: float | None
    trivial: bool
    approximate: bool = False


MAX_EXACT_DIM = 16


def _cube_probability(u: np.ndarray, threshold: float) -> float:
    """Exact ``Pr_v[u·v < threshold]`` by enumerating ``{0,1}^d`` for every ladder level."""
    d = u.size
    bits, weight = _cube(d)
    k = weight[bits @ u < threshold]
    ladder = DirectionDistribution(d).ladder
    return float(np.mean([(p**k * (1 - p) ** (d - k)).sum() for p in ladder]))


def _lemma_report(u: np.ndarray, lhs: float, approximate: bool) -> LemmaReport:
    d = u.size
    neg = np.linalg.norm(np.minimum(u, 0.0))
    rhs = float(neg**2 / (math.sqrt(d) * math.log(d) * (u @ u)))
    trivial = bool(neg == 0)
    return LemmaReport(u, lhs, rhs, None if trivial else lhs / rhs, trivial, approximate)


def _lemma_input(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.size < 2:
        raise ValueError("the rhs uses ln d, so d must be at least 2")
    if not np.any(u):
        raise ValueError("u must be nonzero")
    return u


def lemma_check_exact(u, delta: float = 0.01) -> LemmaReport:
    """Exact ``Pr_v[u·v < -(δ/d)‖u⁻‖₂]`` against ``‖u⁻‖²/(√d ln d ‖u‖²)``.

    ``log d`` is the natural logarithm, so ``d`` must be at least 2.
    """
    u = _lemma_input(u)
    if u.size > MAX_EXACT_DIM:
        raise ValueError(f"exact enumeration needs d <= {MAX_EXACT_DIM}, got {u.size}; "
                         "use lemma_check_monte_carlo")
    neg = np.linalg.norm(np.minimum(u, 0.0))
    return _lemma_report(u, _cube_probability(u, -(delta / u.size) * neg), False)


def lemma_check_monte_carlo(u, rng: np.random.Generator, samples: int = 200_000,
                            delta: float = 0.01) -> LemmaReport:
    """Sampled version of :func:`lemma_check_exact` for any ``d``; flagged approximate."""
    u = _lemma_input(u)
    neg = np.linalg.norm(np.minimum(u, 0.0))
    v = DirectionDistribution(u.size).sample(rng, samples)
    lhs = float(np.mean(v @ u < -(delta / u.size) * neg))
    return _lemma_report(u, lhs, True)


LEMMA_CORPUS_KINDS = ("spike", "two-scale", "ladder", "random")


def _breakpoints(d: int, m: int, delta: float) -> list[float]:
    """Sizes ``s`` at which ``m`` entries of -1 and ``d - m`` entries of ``s`` change detection.

    A direction hitting ``j`` negatives and ``k`` positives detects iff
    ``k s - j < -(δ/d)√m``; detection probability is constant between these
    sizes and the implied constant is smallest just past each of them.
    """
    out = []
    for j in range(1, m + 1):
        for k in range(1, d - m + 1):
            s = (j - delta * math.sqrt(m) / d) / k
            out.append(s * (1 + 1e-12))
    return out


def lemma_corpus(d: int, scale: int = 1, seed: int = 0, kinds=LEMMA_CORPUS_KINDS,
                 delta: float = 0.01) -> list[np.ndarray]:
    """Structured and random test vectors; ``scale`` refines every family.

    The all-negative vector is always included.  Spike and two-scale
    families contain their exact detection breakpoints, so refining them
    cannot lower their minimum.
    """
    unknown = set(kinds) - set(LEMMA_CORPUS_KINDS)
    if unknown:
        raise ValueError(f"unknown corpus kinds {sorted(unknown)}")
    grid = np.geomspace(1e-3, 1e2, 24 * scale)
    out = [-np.ones(d)]
    if "spike" in kinds:  # one negative spike among positives of size s
        for s in [*grid, *_breakpoints(d, 1, delta)]:
            out.append(np.concatenate([[-1.0], np.full(d - 1, s)]))
    if "two-scale" in kinds:  # m negatives of size 1, d-m positives of size s
        for m in range(1, d):
            for s in [*grid[:: max(1, len(grid) // (6 * scale))], *_breakpoints(d, m, delta)]:
                out.append(np.concatenate([-np.ones(m), np.full(d - m, s)]))
    if "ladder" in kinds:  # geometric ladders with alternating or split signs
        for r in np.linspace(0.3, 3.0, 8 * scale):
            ladder = r ** np.arange(d)
            out.append(ladder * (-1.0) ** np.arange(d))
            out.append(np.where(np.arange(d) < d // 2, -ladder, ladder))
    if "random" in kinds:
        rng = trial_rng(seed, d)
        for _ in range(64 * scale):
            v = rng.normal(size=d)
            if rng.random() < 0.5:
                v *= rng.random(d) < 0.5
            if np.any(v):
                out.append(v)
    return out


def lemma_implied_constant(corpus, check=lemma_check_exact) -> tuple[float, LemmaReport]:
    """Smallest implied constant over the nontrivial vectors of ``corpus``."""
    best = None
    for u in corpus:
        rep = check(u)
        if rep.trivial:
            continue
        if best is None or rep.implied_c < best.implied_c:
            best = rep
    if best is None:
        raise ValueError("corpus has no vector with a negative entry")
    return best.implied_c, best


# ---------------------------------------------------------------------------
# Lower-bound family


def lower_bound_family(d: int, M: float, eps: float, i: int) -> OracleFunction:
    """Oracle for ``f_i(x) = -eps x_i + Σ_{j≠i} (M/√d) x_j``."""
    if not eps <= 1 <= M:
        raise ValueError("requires eps <= 1 <= M")
    value, grad, lip = lower_bound_functions(d, M, eps, i)
    return OracleFunction(d, value, grad, lip, name=f"lower-bound-{i}")


def pair_test_reject_prob(v, d: int, M: float, eps: float) -> float:
    """Fraction of indices ``i`` with ``∇f_i · v < 0``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (d,) or (v < 0).any():
        raise ValueError("v must be a nonnegative d-vector")
    slopes = (M / math.sqrt(d)) * (v.sum() - v) - eps * v
    return int(np.count_nonzero(slopes < 0)) / d


def lower_bound_limit(d: int, M: float, eps: float) -> float:
    """``(√d eps/M + 1) / d``."""
    return (math.sqrt(d) * eps / M + 1) / d


def per_round_rejection(grad: np.ndarray, threshold: float = 0.0) -> float:
    """Exact one-round rejection probability for a constant gradient (d ≤ 16)."""
    grad = np.asarray(grad, dtype=float).reshape(-1)
    if grad.size > MAX_EXACT_DIM:
        raise ValueError("dimension too large for enumeration")
    return _cube_probability(grad, threshold)
