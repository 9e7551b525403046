"""Single- and multilevel Monte Carlo for E(||grad u||) under Besov tree priors."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import H0, MeshLevel, qoi_gradient_norm, solve_problem
from .prior import DegenerateSample, PriorParams, coefficient_at_midpoints, sample_field

log = logging.getLogger(__name__)

IOTA = 0.1
MAX_REJECT_FRACTION = 1e-4
ROLE_TREE, ROLE_COEF = 0, 1


class MlmcAbort(RuntimeError):
    """Too many degenerate samples were rejected."""


@dataclass(frozen=True)
class RateParams:
    t: float
    r: float
    theta: float = 1.0

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("t must be positive")
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")

    @property
    def rate(self) -> float:
        """(2 - theta) r."""
        return (2.0 - self.theta) * self.r


def level_truncation(rates: RateParams, h: float) -> int:
    """N with 2^(-tN) ~ h^((2-theta) r)."""
    return math.ceil(-math.log(h) * rates.rate / (math.log(2.0) * rates.t) - 1e-12)


@dataclass(frozen=True)
class MlmcPlan:
    eps: float
    rates: RateParams
    d: int
    L: int
    h0: float
    c: float
    N: tuple[int, ...]
    h: tuple[float, ...]
    M: tuple[int, ...]
    w: tuple[float, ...]
    regime: str

    def level(self, ell: int) -> dict:
        i = ell - 1
        return {"level": ell, "N": self.N[i], "h": self.h[i], "M": self.M[i], "w": self.w[i]}

    def dofs(self, ell: int) -> int:
        """Interior unknowns of mesh ell (0 for the empty level 0)."""
        if ell == 0:
            return 0
        n = round(1.0 / self.h[ell - 1])
        return (n - 1) ** self.d

    def mesh(self, ell: int) -> MeshLevel:
        return MeshLevel(ell, self.h0)

    def work_units(self) -> list[int]:
        return [self.M[i] * (self.dofs(i + 1) + self.dofs(i)) for i in range(self.L)]


def make_plan(eps: float, rates: RateParams, h0: float = H0, c: float = 0.5,
              d: int = 2, iota: float = IOTA) -> MlmcPlan:
    """Levels, truncations, meshes and sample numbers for target accuracy eps."""
    if c != 0.5:
        raise ValueError(f"only dyadic refinement (c = 1/2) is supported, got c={c}")
    a = rates.rate
    upper = h0 ** a
    if not 0 < eps < upper:
        raise ValueError(f"eps={eps:g} outside (0, h0^((2-theta) r)) = (0, {upper:g})")
    # tiny slack keeps exact powers of two from rounding up a level
    L = math.ceil(math.log(eps) / (a * math.log(c)) - math.log(h0) / math.log(c) - 1e-9)
    L = max(L, 1)
    hs = tuple(c ** ell * h0 for ell in range(1, L + 1))
    Ns = tuple(level_truncation(rates, h) for h in hs)
    two_a = 2.0 * a
    if abs(two_a - d) < 1e-12:
        regime = "equal"
        w = [float(L)] * L
    elif two_a > d:
        regime = "greater"
        w = [ell ** (1.0 + iota) for ell in range(1, L + 1)]
    else:
        regime = "less"
        w = [c ** ((two_a - d) * (L - ell) / 2.0) for ell in range(1, L + 1)]
    Ms = tuple(math.ceil((hs[i] / hs[-1]) ** two_a * w[i] - 1e-9) for i in range(L))
    return MlmcPlan(eps, rates, d, L, h0, c, Ns, hs, Ms, tuple(w), regime)


def sample_generators(seed: int, replicate, level: int, index: int, attempt: int = 0):
    """Independent (tree, coefficient) generators keyed by the sample coordinates.

    ``replicate`` is an int or a tuple of ints (e.g. (experiment slot, replicate)).
    """
    out = []
    rep = tuple(replicate) if isinstance(replicate, (tuple, list)) else (replicate,)
    for role in (ROLE_TREE, ROLE_COEF):
        key = rep + (level, index, role, attempt)
        ss = np.random.SeedSequence(seed, spawn_key=key)
        out.append(np.random.Generator(np.random.Philox(ss)))
    return tuple(out)


def level_qoi(field_, N: int, mesh: MeshLevel, t: float) -> float:
    """Psi(u_{N,h}) for the realization truncated at N, solved on ``mesh``."""
    coef = coefficient_at_midpoints(field_.truncate(N), mesh.R, t=t)
    return qoi_gradient_norm(solve_problem(mesh, coef.values))


@dataclass(frozen=True)
class LevelSpec:
    """What one coupled difference needs: fine/coarse truncation and mesh."""

    level: int
    N: int
    N_coarse: int | None
    h0: float = H0


def coupled_difference_sample(spec: LevelSpec, prior: PriorParams, rates: RateParams,
                              tree_rng, coef_rng) -> float:
    """Y = Psi_l - Psi_{l-1} on one realization (Psi_0 = 0)."""
    field_ = sample_field(prior.with_truncation(spec.N), tree_rng, coef_rng)
    fine = level_qoi(field_, spec.N, MeshLevel(spec.level, spec.h0), rates.t)
    if spec.N_coarse is None:
        return fine
    coarse = level_qoi(field_, spec.N_coarse, MeshLevel(spec.level - 1, spec.h0), rates.t)
    return fine - coarse


def plan_spec(plan: MlmcPlan, ell: int) -> LevelSpec:
    if not 1 <= ell <= plan.L:
        raise ValueError(f"level {ell} outside 1..{plan.L}")
    return LevelSpec(ell, plan.N[ell - 1], plan.N[ell - 2] if ell >= 2 else None, plan.h0)


def _run_chunk(args) -> tuple[np.ndarray, int]:
    sampler, spec, prior, rates, seed, replicate, indices = args
    out = np.empty(len(indices))
    rejected = 0
    for i, idx in enumerate(indices):
        attempt = 0
        while True:
            tree_rng, coef_rng = sample_generators(seed, replicate, spec.level, idx, attempt)
            try:
                out[i] = sampler(spec, prior, rates, tree_rng, coef_rng)
                break
            except DegenerateSample:
                rejected += 1
                attempt += 1
    return out, rejected


def draw_level(spec: LevelSpec, M: int, prior: PriorParams, rates: RateParams, seed: int,
               replicate: int = 0, workers: int = 1, sampler=coupled_difference_sample,
               pool=None, chunk: int | None = None) -> tuple[np.ndarray, int]:
    """M samples of level ``spec.level`` in index order, plus the rejection count.

    The sample with index i only depends on (seed, replicate, level, i), so the
    returned array is the same whatever the chunking or worker count.
    """
    if M <= 0:
        return np.empty(0), 0
    if pool is None and workers <= 1:
        return _run_chunk((sampler, spec, prior, rates, seed, replicate, range(M)))
    size = chunk or max(1, math.ceil(M / (4 * max(workers, 1))))
    jobs = [(sampler, spec, prior, rates, seed, replicate, range(a, min(a + size, M)))
            for a in range(0, M, size)]
    own = pool is None
    pool = pool or ProcessPoolExecutor(max_workers=workers)
    try:
        parts = list(pool.map(_run_chunk, jobs))
    finally:
        if own:
            pool.shutdown()
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


@dataclass
class LevelStats:
    level: int
    N: int
    h: float
    M: int
    mean: float
    var: float
    work: int
    rejected: int
    seconds: float = field(default=0.0, compare=False)


@dataclass
class MlmcResult:
    estimate: float
    levels: list[LevelStats]
    plan: MlmcPlan | None = None

    @property
    def rejected(self) -> int:
        return sum(s.rejected for s in self.levels)

    @property
    def work(self) -> int:
        return sum(s.work for s in self.levels)

    @property
    def seconds(self) -> float:
        return sum(s.seconds for s in self.levels)

    @property
    def estimator_variance(self) -> float:
        """Sum of Var(Y_l)/M_l, the variance of the estimate."""
        return sum(s.var / s.M for s in self.levels if s.M > 1)


def _stats(ell: int, N: int, h: float, ys: np.ndarray, work: int, rejected: int,
           seconds: float) -> LevelStats:
    M = len(ys)
    mean = float(np.sum(ys) / M)
    var = float(np.sum((ys - mean) ** 2) / (M - 1)) if M > 1 else 0.0
    return LevelStats(ell, N, h, M, mean, var, work, rejected, seconds)


def _check_rejections(rejected: int, total: int):
    if rejected > MAX_REJECT_FRACTION * total:
        raise MlmcAbort(f"{rejected} degenerate samples rejected out of {total} "
                        f"(limit {MAX_REJECT_FRACTION:.2%})")


def mlmc_estimate(plan: MlmcPlan, prior: PriorParams, seed: int, replicate: int = 0,
                  workers: int = 1, sampler=coupled_difference_sample, pool=None,
                  level_order=None) -> MlmcResult:
    """Multilevel estimator: sum over levels of the mean of M_l coupled differences."""
    order = list(level_order) if level_order is not None else list(range(1, plan.L + 1))
    if sorted(order) != list(range(1, plan.L + 1)):
        raise ValueError("level_order must be a permutation of 1..L")
    stats = {}
    works = plan.work_units()
    for ell in order:
        spec = plan_spec(plan, ell)
        t0 = time.perf_counter()
        ys, rej = draw_level(spec, plan.M[ell - 1], prior, plan.rates, seed, replicate,
                             workers, sampler, pool)
        stats[ell] = _stats(ell, spec.N, plan.h[ell - 1], ys, works[ell - 1], rej,
                            time.perf_counter() - t0)
    levels = [stats[ell] for ell in range(1, plan.L + 1)]
    _check_rejections(sum(s.rejected for s in levels), sum(s.M for s in levels))
    estimate = float(math.fsum(s.mean for s in levels))
    return MlmcResult(estimate, levels, plan)


def slmc_level(eps: float, rates: RateParams, h0: float = H0, d: int = 2) -> tuple[int, int, int]:
    """(level, N, M) of the single-level estimator balanced for accuracy eps."""
    plan = make_plan(eps, rates, h0, d=d)
    return plan.L, plan.N[-1], math.ceil(eps ** -2 - 1e-9)


def slmc_estimate(eps: float, rates: RateParams, prior: PriorParams, seed: int,
                  replicate: int = 0, workers: int = 1, sampler=None, pool=None,
                  h0: float = H0) -> MlmcResult:
    """Plain Monte Carlo with M = ceil(eps^-2) samples on the balanced level.

    Streams are keyed with level 0 so they never collide with multilevel ones.
    """
    ell, N, M = slmc_level(eps, rates, h0, prior.d)
    spec = LevelSpec(ell, N, None, h0)
    t0 = time.perf_counter()
    ys, rej = _draw_single(spec, M, prior, rates, seed, replicate, workers, sampler, pool)
    _check_rejections(rej, M)
    n = round(1.0 / spec_h(spec))
    st = _stats(ell, N, spec_h(spec), ys, M * (n - 1) ** prior.d, rej, time.perf_counter() - t0)
    return MlmcResult(st.mean, [st], None)


def spec_h(spec: LevelSpec) -> float:
    return spec.h0 * 2.0 ** -spec.level


class _SingleLevel:
    """Sampler wrapper that keys streams by level 0 and drops the coarse solve."""

    def __init__(self, sampler, level):
        self.sampler = sampler or coupled_difference_sample
        self.level = level

    def __call__(self, spec, prior, rates, tree_rng, coef_rng):
        real = LevelSpec(self.level, spec.N, None, spec.h0)
        return self.sampler(real, prior, rates, tree_rng, coef_rng)


def _draw_single(spec, M, prior, rates, seed, replicate, workers, sampler, pool):
    keyed = LevelSpec(0, spec.N, None, spec.h0)
    return draw_level(keyed, M, prior, rates, seed, replicate, workers,
                      _SingleLevel(sampler, spec.level), pool)


@dataclass
class VarianceDecay:
    levels: list[int]
    h: list[float]
    mean: list[float]
    var: list[float]
    var_se: list[float]
    slope: float


def variance_decay_report(prior: PriorParams, rates: RateParams, levels, M: int, seed: int,
                          workers: int = 1, sampler=coupled_difference_sample,
                          h0: float = H0, pool=None) -> VarianceDecay:
    """Var(Y_l) per level, with a log2 fit of Var(Y_l) against h_l over levels >= 2."""
    if M < 50:
        raise ValueError("need at least 50 samples per level")
    levels = sorted(levels)
    rows = []
    for ell in levels:
        h = h0 * 2.0 ** -ell
        N = level_truncation(rates, h)
        Nc = level_truncation(rates, 2 * h) if ell >= 2 else None
        ys, _ = draw_level(LevelSpec(ell, N, Nc, h0), M, prior, rates, seed, 0, workers,
                           sampler, pool)
        m = float(ys.mean())
        v = float(ys.var(ddof=1))
        # standard error of the sample variance from the fourth central moment
        m4 = float(np.mean((ys - m) ** 4))
        se = math.sqrt(max(m4 - v * v * (M - 3) / (M - 1), 0.0) / M)
        rows.append((ell, h, m, v, se))
    fit = [(math.log2(h), math.log2(v)) for ell, h, m, v, se in rows if ell >= 2 and v > 0]
    slope = float(np.polyfit(*zip(*fit), 1)[0]) if len(fit) >= 2 else float("nan")
    return VarianceDecay([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
                         [r[3] for r in rows], [r[4] for r in rows], slope)
